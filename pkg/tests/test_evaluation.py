import numpy as np
import pytest
from hypothesis import given, strategies as st

from fleetrec.campaign import CampaignTrace, RoundRecord, Selection
from fleetrec.errors import ValidationError
from fleetrec.evaluation import (
    comparison_report,
    cumulative_regret,
    evaluate_trace,
    kaplan_meier,
    mean_trials,
    regret_series,
    report_rows,
    trials_to_optimum,
)


def make_trace(picks_per_round, machines, cols, variant="true", predicted=None):
    """Build a trace from [(machine, flat_index), ...] per round.

    predicted maps (round_index, machine, flat_index) to the model value;
    acquired is filled by the caller through the truth argument of the
    function under test, so any placeholder works here.
    """
    rounds = []
    mask = np.zeros((machines, cols), dtype=bool)
    for idx, picks in enumerate(picks_per_round):
        selections = []
        for k, j in picks:
            mask[k, j] = True
            value = 0.0
            if predicted is not None:
                value = predicted.get((idx, k, j), 0.0)
            selections.append(
                Selection(
                    machine=k,
                    flat_index=j,
                    params=(float(j),),
                    acquired=0.0,
                    predicted=value,
                )
            )
        rounds.append(
            RoundRecord(
                round=idx + 1,
                selections=selections,
                observed_count=int(mask.sum()),
                prediction_digest="",
            )
        )
    return CampaignTrace(
        config={"regret_variant": variant}, rounds=rounds, final_mask=mask
    )


TRUTH = np.array(
    [
        [-0.2, -0.5, -0.9],
        [-1.0, -0.1, -0.4],
    ]
)


def test_trials_hit_first_round():
    trace = make_trace([[(0, 0), (1, 1)]], 2, 3)
    assert trials_to_optimum(trace, TRUTH) == [1, 1]


def test_trials_hit_after_misses():
    trace = make_trace([[(0, 2)], [(0, 1)], [(0, 0)]], 2, 3)
    assert trials_to_optimum(trace, TRUTH) == [3, None]


def test_trials_never_hit_is_none():
    trace = make_trace([[(0, 1)], [(0, 2)]], 2, 3)
    assert trials_to_optimum(trace, TRUTH) == [None, None]


def test_trials_tied_optima_both_count():
    truth = np.array([[-0.3, -0.3, -0.7]])
    trace = make_trace([[(0, 1)]], 1, 3)
    assert trials_to_optimum(trace, truth) == [1]


def test_trials_first_hit_sticks():
    trace = make_trace([[(0, 0)], [(0, 1)]], 2, 3)
    hits = trials_to_optimum(trace, TRUTH)
    assert hits[0] == 1


def test_regret_zero_at_optimum():
    trace = make_trace([[(0, 0)]], 2, 3)
    series = regret_series(trace, TRUTH)
    assert series[0, 0] == 0.0


def test_regret_true_gap():
    trace = make_trace([[(0, 1)]], 2, 3)
    series = regret_series(trace, TRUTH)
    assert series[0, 0] == pytest.approx(0.3, abs=1e-15)


def test_regret_nan_when_machine_sits_out():
    trace = make_trace([[(0, 0)], [(1, 1)]], 2, 3)
    series = regret_series(trace, TRUTH)
    assert np.isnan(series[1, 0])
    assert np.isnan(series[0, 1])
    assert series[1, 1] == 0.0


def test_regret_predicted_variant_uses_model_value():
    trace = make_trace(
        [[(0, 1)]], 2, 3, predicted={(0, 0, 1): -0.45}
    )
    series = regret_series(trace, TRUTH, variant="predicted")
    assert series[0, 0] == pytest.approx(abs(-0.45 - (-0.2)), abs=1e-15)


def test_regret_unknown_variant():
    trace = make_trace([[(0, 0)]], 2, 3)
    with pytest.raises(ValidationError):
        regret_series(trace, TRUTH, variant="both")


def test_cumulative_regret_accumulates():
    series = np.array([[0.3, 0.1, 0.0]])
    np.testing.assert_allclose(cumulative_regret(series), [[0.3, 0.4, 0.4]])


def test_cumulative_regret_skips_missing_rounds():
    series = np.array([[0.2, np.nan, 0.1]])
    np.testing.assert_allclose(cumulative_regret(series), [[0.2, 0.2, 0.3]])


def test_km_all_hit_first_round():
    curve, mean = kaplan_meier([1, 1], 4)
    assert mean == 1.0
    assert curve.at(0.5) == 1.0
    assert curve.at(1.0) == 0.0
    assert curve.at(4.0) == 0.0


def test_km_one_censored():
    # P drops to 1/2 at t=2 and stays there to the horizon:
    # mean = 2*1 + 2*(1/2) = 3
    curve, mean = kaplan_meier([2, None], 4)
    assert mean == 3.0
    assert curve.at(1.9) == 1.0
    assert curve.at(2.0) == 0.5
    assert curve.at(4.0) == 0.5


def test_km_all_censored():
    curve, mean = kaplan_meier([None, None, None], 5)
    assert mean == 5.0
    assert curve.times.size == 0
    assert curve.at(3.0) == 1.0


def test_km_staircase():
    # 4 machines: hits at 1 and 3, two censored.
    # P(1)=3/4, P(3)=3/4 * 2/3 = 1/2; mean = 1 + 2*(3/4) + 2*(1/2) = 3.5
    curve, mean = kaplan_meier([1, 3, None, None], 5)
    assert mean == 3.5
    assert curve.at(1) == 0.75
    assert curve.at(2.999) == 0.75
    assert curve.at(3) == 0.5


def test_km_rejects_empty():
    with pytest.raises(ValidationError):
        kaplan_meier([], 4)


def test_km_rejects_out_of_range_hits():
    with pytest.raises(ValidationError):
        kaplan_meier([0, 2], 4)
    with pytest.raises(ValidationError):
        kaplan_meier([5], 4)
    with pytest.raises(ValidationError):
        kaplan_meier([1], -1)


@given(
    st.lists(st.integers(min_value=1, max_value=30), min_size=1, max_size=40),
    st.integers(min_value=0, max_value=20),
)
def test_km_mean_equals_arithmetic_mean_without_censoring(hits, extra):
    budget = max(hits) + extra
    _, km_mean = kaplan_meier(hits, budget)
    assert km_mean == pytest.approx(np.mean(hits), abs=1e-12)


def test_mean_trials_branches():
    assert mean_trials([1, 3], 4) == 2.0
    assert mean_trials([2, None], 4) == 3.0


def test_evaluate_trace_defaults_variant_from_config():
    trace = make_trace([[(0, 1)]], 2, 3, variant="predicted",
                       predicted={(0, 0, 1): -0.2})
    result = evaluate_trace(trace, TRUTH)
    assert result.variant == "predicted"
    assert result.regret[0, 0] == 0.0
    explicit = evaluate_trace(trace, TRUTH, variant="true")
    assert explicit.regret[0, 0] == pytest.approx(0.3, abs=1e-15)


def test_evaluate_trace_metrics():
    trace = make_trace([[(0, 0), (1, 0)], [(1, 1)]], 2, 3)
    result = evaluate_trace(trace, TRUTH)
    assert result.trials_to_optimum == [1, 2]
    assert result.budget == 2
    assert result.km_mean == 1.5
    np.testing.assert_allclose(result.cumulative[:, -1], [0.0, 0.9])


def test_comparison_report_shape():
    trace = make_trace([[(0, 0), (1, 1)]], 2, 3)
    collab = evaluate_trace(trace, TRUTH)
    base_trace = make_trace([[(0, 1), (1, 0)]], 2, 3)
    base = evaluate_trace(base_trace, TRUTH)
    report = comparison_report(collab, base, config={"budget": 1})
    assert report["budget"] == 1
    assert report["machines"] == 2
    assert report["collaborative"]["trials_to_optimum"] == [1, 1]
    assert report["non_collaborative"]["trials_to_optimum"] == [None, None]
    assert report["config"] == {"budget": 1}


def test_comparison_report_single_arm():
    trace = make_trace([[(0, 0)]], 2, 3)
    report = comparison_report(evaluate_trace(trace, TRUTH))
    assert "non_collaborative" not in report
    assert report_rows(report)[0] == ["machine", "collaborative"]


def test_comparison_report_rejects_budget_mismatch():
    one = evaluate_trace(make_trace([[(0, 0)]], 2, 3), TRUTH)
    two = evaluate_trace(make_trace([[(0, 0)], [(1, 1)]], 2, 3), TRUTH)
    with pytest.raises(ValidationError):
        comparison_report(one, two)


def test_report_rows_layout():
    trace = make_trace([[(0, 0), (1, 0)], [(1, 1)]], 2, 3)
    collab = evaluate_trace(trace, TRUTH)
    base_trace = make_trace([[(0, 1), (1, 0)], [(0, 2), (1, 2)]], 2, 3)
    base = evaluate_trace(base_trace, TRUTH)
    rows = report_rows(comparison_report(collab, base))
    assert rows[0] == ["machine", "collaborative", "non_collaborative"]
    assert rows[1] == ["1", "1", ">2"]
    assert rows[2] == ["2", "2", ">2"]
    assert rows[3][0] == "average"
    assert rows[3][1] == repr(1.5)
    # both baseline machines censored: KM restricted mean is the horizon
    assert rows[3][2] == repr(2.0)


def test_km_curve_from_trace_is_consistent():
    trace = make_trace([[(0, 2), (1, 2)], [(0, 0), (1, 1)]], 2, 3)
    result = evaluate_trace(trace, TRUTH)
    assert result.trials_to_optimum == [2, 2]
    assert result.km_curve.at(1.5) == 1.0
    assert result.km_curve.at(2.0) == 0.0
    assert result.km_mean == 2.0
