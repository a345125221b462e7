"""Collaborative sequential matrix completion for fleet parameter tuning."""

from .campaign import (
    CampaignConfig,
    CampaignTrace,
    RoundRecord,
    Selection,
    SyntheticFleetSpec,
    generate_synthetic_fleet,
    noncollab_recommend,
    run_baseline_campaign,
    run_campaign,
    select_full_fleet,
    select_limited_fleet,
)
from .completion import (
    CompletionConfig,
    FactorPair,
    als_complete,
    als_complete_with_trace,
    estimate_rank,
    gaussian_affinity,
    mean_impute,
    objective_value,
    rank_spectrum,
)
from .errors import NumericError, ValidationError
from .evaluation import (
    EvaluationResult,
    KaplanMeierCurve,
    comparison_report,
    cumulative_regret,
    evaluate_trace,
    kaplan_meier,
    mean_trials,
    regret_series,
    trials_to_optimum,
)
from .grid import (
    ParameterAxis,
    ParameterGrid,
    build_grid,
    flatten_index,
    printer_grid,
    unflatten_index,
)
from .matrix import MaskedMatrix
from .utility import (
    MachineMeasurements,
    ScanProfile,
    assemble_fleet_matrix,
    build_measurements,
    combine_surfaces,
    compose_utility,
    normalize_max,
    quality_weights,
    surface_rms,
)

__version__ = "0.1.0"
