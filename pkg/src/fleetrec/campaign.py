"""Sequential experiment campaigns over a fleet.

Each round completes the current fleet matrix, greedily selects the most
promising unobserved condition per participating machine, "runs" the
experiments by revealing ground-truth entries, and augments the support
set. The non-collaborative baseline gives every machine its own small
completion over the grid instead of sharing the fleet matrix.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .completion import CompletionConfig, FactorPair, als_complete, mean_impute
from .errors import ValidationError
from .grid import ParameterGrid, unflatten_index
from .matrix import MaskedMatrix

_MASK_RETRIES = 1000


@dataclass(frozen=True)
class Selection:
    """One selected experiment: where, what was predicted, what came back."""

    machine: int
    flat_index: int
    params: tuple
    acquired: float
    predicted: float


@dataclass
class RoundRecord:
    round: int
    selections: list
    observed_count: int
    prediction_digest: str


@dataclass
class CampaignTrace:
    """Full record of a campaign: config echo, per-round events, final mask."""

    config: dict
    rounds: list
    final_mask: np.ndarray

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "rounds": [
                {
                    "round": r.round,
                    "selections": [
                        {
                            "machine": int(s.machine),
                            "flat_index": int(s.flat_index),
                            "params": [float(p) for p in s.params],
                            "acquired": float(s.acquired),
                            "predicted": float(s.predicted),
                        }
                        for s in r.selections
                    ],
                    "observed_count": int(r.observed_count),
                    "prediction_digest": r.prediction_digest,
                }
                for r in self.rounds
            ],
            "final_mask": [[bool(v) for v in row] for row in self.final_mask],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignTrace":
        rounds = [
            RoundRecord(
                round=int(r["round"]),
                selections=[
                    Selection(
                        machine=int(s["machine"]),
                        flat_index=int(s["flat_index"]),
                        params=tuple(float(p) for p in s["params"]),
                        acquired=float(s["acquired"]),
                        predicted=float(s["predicted"]),
                    )
                    for s in r["selections"]
                ],
                observed_count=int(r["observed_count"]),
                prediction_digest=str(r["prediction_digest"]),
            )
            for r in data["rounds"]
        ]
        return cls(
            config=dict(data["config"]),
            rounds=rounds,
            final_mask=np.asarray(data["final_mask"], dtype=bool),
        )


@dataclass
class CampaignConfig:
    """Campaign settings.

    budget is the number of rounds. mode "full" lets every machine run one
    experiment per round; "limited" restricts each round to the
    subset_size machines with the highest predicted payoff (collaborative)
    or a seeded random subset (baseline). regret_variant picks whether
    regret is charged at the true or the predicted utility of the
    selection. local_rank is the factor rank of the baseline's per-machine
    completion. warm_start reuses the previous round's factors instead of
    re-initializing.
    """

    budget: int
    completion: CompletionConfig
    mode: str = "full"
    subset_size: int = None
    regret_variant: str = "true"
    seed: int = 0
    local_rank: int = 2
    warm_start: bool = False

    def __post_init__(self):
        if self.budget < 0:
            raise ValidationError("budget cannot be negative")
        if self.mode not in ("full", "limited"):
            raise ValidationError("mode must be 'full' or 'limited'")
        if self.mode == "limited":
            if self.subset_size is None or self.subset_size < 1:
                raise ValidationError("limited mode needs subset_size >= 1")
        if self.regret_variant not in ("true", "predicted"):
            raise ValidationError("regret_variant must be 'true' or 'predicted'")
        if self.local_rank < 1:
            raise ValidationError("local_rank must be at least 1")


@dataclass(frozen=True)
class SyntheticFleetSpec:
    """Generator settings for a random low-rank fleet with additive noise."""

    machines: int
    grid_size: int
    true_rank: int
    factor_scale: float = 1.0
    noise_std: float = 0.0
    mask_fraction: float = 0.55
    seed: int = 0

    def __post_init__(self):
        if self.machines < 1 or self.grid_size < 1:
            raise ValidationError("fleet needs at least one machine and one cell")
        if self.true_rank < 1:
            raise ValidationError("true_rank must be at least 1")
        if self.factor_scale <= 0:
            raise ValidationError("factor_scale must be positive")
        if self.noise_std < 0:
            raise ValidationError("noise_std cannot be negative")
        if not 0 <= self.mask_fraction < 1:
            raise ValidationError("mask_fraction must lie in [0, 1)")


def select_full_fleet(u_hat: np.ndarray, mask: np.ndarray):
    """Per machine, the unobserved column with the highest predicted value.

    Ties break toward the lowest flat index; machines with fully observed
    rows are omitted.
    """
    picks = []
    for k in range(u_hat.shape[0]):
        unobserved = np.flatnonzero(~mask[k])
        if unobserved.size:
            j = unobserved[np.argmax(u_hat[k, unobserved])]
            picks.append((int(k), int(j)))
    return picks


def select_limited_fleet(u_hat: np.ndarray, mask: np.ndarray, c: int):
    """Best conditions of the c machines with the largest predicted payoff.

    Machines are ranked by their best unobserved predicted value,
    descending, ties toward the lower machine index; machines with no
    unobserved cells are excluded from the ranking.
    """
    if c < 1:
        raise ValidationError("subset size must be at least 1")
    ranked = []
    for k, j in select_full_fleet(u_hat, mask):
        ranked.append((-u_hat[k, j], k, j))
    ranked.sort()
    return [(k, j) for _, k, j in ranked[:c]]


def _digest(arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _params_for(grid, j):
    if grid is None:
        return (float(j),)
    return unflatten_index(grid, j)[1]


def _campaign_config_dict(cfg: CampaignConfig, policy: str) -> dict:
    comp = cfg.completion
    return {
        "policy": policy,
        "budget": cfg.budget,
        "mode": cfg.mode,
        "subset_size": cfg.subset_size,
        "regret_variant": cfg.regret_variant,
        "seed": cfg.seed,
        "local_rank": cfg.local_rank,
        "warm_start": cfg.warm_start,
        # workers is a runtime knob with no effect on values, so it is
        # deliberately left out of the reproducibility echo
        "completion": {
            "rank": comp.rank,
            "lam": comp.lam,
            "max_sweeps": comp.max_sweeps,
            "rel_tol": comp.rel_tol,
            "seed": comp.seed,
            "init": comp.init,
            "anneal_scale": comp.anneal_scale,
            "anneal_factor": comp.anneal_factor,
            "anneal_tol": comp.anneal_tol,
        },
    }


def _check_campaign_inputs(ground_truth, initial_mask, cfg):
    truth = np.asarray(ground_truth, dtype=float)
    # the mask is augmented in place during the run; copy so the caller's
    # array is left untouched
    mask = np.array(initial_mask, dtype=bool)
    if truth.ndim != 2 or truth.shape != mask.shape:
        raise ValidationError("ground truth and mask shapes must match")
    if not np.isfinite(truth).all():
        raise ValidationError("ground truth must be fully known and finite")
    if not mask.any(axis=1).all():
        raise ValidationError("every machine needs at least one initial observation")
    if cfg.mode == "limited" and cfg.subset_size > truth.shape[0]:
        raise ValidationError("subset_size cannot exceed the fleet size")
    return truth, mask


def run_campaign(
    ground_truth, initial_mask, cfg: CampaignConfig, grid: ParameterGrid = None
) -> CampaignTrace:
    """Run the collaborative campaign against known ground truth.

    Per round: complete the fleet matrix on the current support, select
    per the configured mode, reveal the ground-truth values at the
    selections, and augment the support. Deterministic given the config.
    """
    truth, mask = _check_campaign_inputs(ground_truth, initial_mask, cfg)
    rounds = []
    factors = None
    for t in range(1, cfg.budget + 1):
        current = MaskedMatrix(np.where(mask, truth, np.nan), mask)
        initial = factors if cfg.warm_start else None
        factors, u_hat = als_complete(current, cfg.completion, initial=initial)
        if cfg.mode == "full":
            picks = select_full_fleet(u_hat, mask)
        else:
            picks = select_limited_fleet(u_hat, mask, cfg.subset_size)
        selections = []
        for k, j in picks:
            selections.append(
                Selection(
                    machine=k,
                    flat_index=j,
                    params=_params_for(grid, j),
                    acquired=float(truth[k, j]),
                    predicted=float(u_hat[k, j]),
                )
            )
            mask[k, j] = True
        rounds.append(
            RoundRecord(
                round=t,
                selections=selections,
                observed_count=int(mask.sum()),
                prediction_digest=_digest([u_hat]),
            )
        )
    return CampaignTrace(
        config=_campaign_config_dict(cfg, "collaborative"),
        rounds=rounds,
        final_mask=mask,
    )


def _local_shape(grid: ParameterGrid, cols: int):
    if grid is None or len(grid.axes) < 2:
        raise ValidationError(
            "per-machine completion needs a grid with at least two axes"
        )
    if grid.flat_size != cols:
        raise ValidationError(
            f"grid has {grid.flat_size} cells but the matrix has {cols} columns"
        )
    first = grid.axes[0].size
    return first, cols // first


def _local_choice(local: MaskedMatrix, cfg: CompletionConfig):
    """Recommend within one machine's grid; (None, None) when exhausted.

    Grid rows with no observations are filled with the machine's own
    observed column means so the solver sees every row; the argmax still
    ranges over the truly unobserved cells only.
    """
    unobserved = ~local.mask.ravel()
    if not unobserved.any():
        return None, None
    values, mask = local.values, local.mask
    empty_rows = ~mask.any(axis=1)
    if empty_rows.any():
        imputed = mean_impute(local)
        values = np.where(mask, values, np.where(empty_rows[:, None], imputed, np.nan))
        mask = mask | empty_rows[:, None]
    factors, u_hat = als_complete(MaskedMatrix(values, mask), cfg)
    flat = u_hat.ravel()
    candidates = np.flatnonzero(unobserved)
    j = candidates[np.argmax(flat[candidates])]
    return int(j), u_hat


def noncollab_recommend(local: MaskedMatrix, cfg: CompletionConfig):
    """Next condition for a lone machine from its own observations only.

    `local` is the machine's row reshaped onto the grid. Returns the flat
    index of the best unobserved cell, or None when the machine has
    exhausted its grid.
    """
    j, _ = _local_choice(local, cfg)
    return j


def run_baseline_campaign(
    ground_truth, initial_mask, cfg: CampaignConfig, grid: ParameterGrid = None
) -> CampaignTrace:
    """Non-collaborative reference: each machine completes its own grid.

    In full mode every machine recommends and runs one experiment per
    round; in limited mode a seeded uniformly random subset of
    subset_size machines does.
    """
    truth, mask = _check_campaign_inputs(ground_truth, initial_mask, cfg)
    machines, cols = truth.shape
    shape = _local_shape(grid, cols)
    local_cfg = replace(cfg.completion, rank=cfg.local_rank)
    rng = np.random.default_rng(cfg.seed)
    rounds = []
    for t in range(1, cfg.budget + 1):
        if cfg.mode == "full":
            active = range(machines)
        else:
            drawn = rng.choice(machines, size=cfg.subset_size, replace=False)
            active = sorted(int(k) for k in drawn)
        selections = []
        predictions = []
        for k in active:
            local = MaskedMatrix(
                truth[k].reshape(shape), mask[k].reshape(shape).copy()
            )
            j, u_hat = _local_choice(local, local_cfg)
            if j is None:
                continue
            predictions.append(u_hat)
            selections.append(
                Selection(
                    machine=int(k),
                    flat_index=j,
                    params=_params_for(grid, j),
                    acquired=float(truth[k, j]),
                    predicted=float(u_hat.ravel()[j]),
                )
            )
            mask[k, j] = True
        rounds.append(
            RoundRecord(
                round=t,
                selections=selections,
                observed_count=int(mask.sum()),
                prediction_digest=_digest(predictions),
            )
        )
    return CampaignTrace(
        config=_campaign_config_dict(cfg, "independent"),
        rounds=rounds,
        final_mask=mask,
    )


def draw_mask(rng, machines: int, cols: int, mask_fraction: float) -> np.ndarray:
    """Uniform random observation mask keeping every machine row non-empty.

    Masks exactly round(mask_fraction * machines * cols) entries,
    redrawing until no row ends up fully unobserved.
    """
    hidden = int(round(mask_fraction * machines * cols))
    for _ in range(_MASK_RETRIES):
        perm = rng.permutation(machines * cols)
        observed = np.ones(machines * cols, dtype=bool)
        observed[perm[:hidden]] = False
        observed = observed.reshape(machines, cols)
        if observed.any(axis=1).all():
            return observed
    raise ValidationError(
        "mask_fraction leaves a machine with no observations after "
        f"{_MASK_RETRIES} redraws"
    )


def generate_synthetic_fleet(spec: SyntheticFleetSpec):
    """Random low-rank ground truth plus an initial observation mask.

    U = A B' + noise_std * E with seeded standard-normal factors scaled
    by factor_scale. The noise variates are drawn even when noise_std is
    zero so the mask does not depend on the noise level.
    """
    rng = np.random.default_rng(spec.seed)
    A = rng.standard_normal((spec.machines, spec.true_rank)) * spec.factor_scale
    B = rng.standard_normal((spec.grid_size, spec.true_rank)) * spec.factor_scale
    noise = rng.standard_normal((spec.machines, spec.grid_size))
    truth = A @ B.T + spec.noise_std * noise
    observed = draw_mask(rng, spec.machines, spec.grid_size, spec.mask_fraction)
    initial = MaskedMatrix(np.where(observed, truth, np.nan), observed)
    return truth, initial
