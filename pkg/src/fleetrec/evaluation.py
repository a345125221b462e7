"""Campaign evaluation: trials-to-optimum, regret, and survival curves.

A machine "hits" at the first round whose selection is a true-optimal
condition. Machines that never hit within the budget are censored and
enter the Kaplan-Meier estimate, whose restricted mean stands in for the
average trial count when censoring is present.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .campaign import CampaignTrace
from .errors import ValidationError

# utility ties within this absolute slack of the row maximum all count
# as true optima
_TIE_TOL = 1e-12


@dataclass
class KaplanMeierCurve:
    """Right-continuous step estimate of P(machine has not hit by round t).

    times holds the distinct event rounds ascending and survival the curve
    value just after each event; the curve is 1 before the first event.
    """

    times: np.ndarray
    survival: np.ndarray
    budget: int

    def at(self, t: float) -> float:
        idx = np.searchsorted(self.times, t, side="right") - 1
        if idx < 0:
            return 1.0
        return float(self.survival[idx])


@dataclass
class EvaluationResult:
    trials_to_optimum: list
    regret: np.ndarray
    cumulative: np.ndarray
    km_curve: KaplanMeierCurve
    km_mean: float
    variant: str
    budget: int


def _true_optima(ground_truth: np.ndarray):
    truth = np.asarray(ground_truth, dtype=float)
    best = truth.max(axis=1)
    return [np.flatnonzero(truth[k] >= best[k] - _TIE_TOL) for k in range(len(truth))]


def trials_to_optimum(trace: CampaignTrace, ground_truth) -> list:
    """First hitting round per machine, or None when censored at budget.

    A hit is a selection of any column whose true utility ties the row
    maximum. Machines never selected at an optimal column (including ones
    absent from the trace entirely) are censored.
    """
    truth = np.asarray(ground_truth, dtype=float)
    optima = _true_optima(truth)
    hits = [None] * truth.shape[0]
    for record in trace.rounds:
        for sel in record.selections:
            k = sel.machine
            if hits[k] is None and sel.flat_index in optima[k]:
                hits[k] = record.round
    return hits


def regret_series(trace: CampaignTrace, ground_truth, variant: str = "true"):
    """Per-machine, per-round utility gap to the true optimum.

    variant "true" charges |U[k, selected] - U[k, best]| with the actual
    utility of the selected cell; "predicted" charges the gap between the
    model's predicted value at the selection and the true best. Rounds
    where a machine made no selection are NaN.
    """
    if variant not in ("true", "predicted"):
        raise ValidationError("variant must be 'true' or 'predicted'")
    truth = np.asarray(ground_truth, dtype=float)
    best = truth.max(axis=1)
    out = np.full((truth.shape[0], len(trace.rounds)), np.nan)
    for idx, record in enumerate(trace.rounds):
        for sel in record.selections:
            value = sel.predicted if variant == "predicted" else truth[sel.machine, sel.flat_index]
            out[sel.machine, idx] = abs(value - best[sel.machine])
    return out


def cumulative_regret(series: np.ndarray) -> np.ndarray:
    """Running per-machine regret total; missing rounds carry forward."""
    return np.nancumsum(series, axis=1)


def kaplan_meier(hit_rounds, budget: int):
    """Survival curve over hitting rounds with censoring at the budget.

    Parameters
    ----------
    hit_rounds : sequence of int or None
        Per-machine first hitting round; None marks a machine censored at
        the budget.
    budget : int
        Round horizon M; the restricted mean integrates P over [0, M].

    Returns
    -------
    curve : KaplanMeierCurve
    mean : float
        Restricted mean integral of the curve over [0, budget]. With no
        censoring this equals the arithmetic mean of the hit rounds.
    """
    hits = list(hit_rounds)
    if not hits:
        raise ValidationError("need at least one machine")
    if budget < 0:
        raise ValidationError("budget cannot be negative")
    finite = sorted(int(t) for t in hits if t is not None)
    if finite and (finite[0] < 1 or finite[-1] > budget):
        raise ValidationError("hit rounds must lie in [1, budget]")
    times, survival = [], []
    at_risk = len(hits)
    prob = 1.0
    mean = 0.0
    previous = 0.0
    for t in sorted(set(finite)):
        events = finite.count(t)
        mean += (t - previous) * prob
        prob *= 1.0 - events / at_risk
        at_risk -= events
        previous = t
        times.append(float(t))
        survival.append(prob)
    mean += (budget - previous) * prob
    curve = KaplanMeierCurve(
        times=np.asarray(times), survival=np.asarray(survival), budget=budget
    )
    return curve, float(mean)


def mean_trials(hit_rounds, budget: int) -> float:
    """Average trial count: arithmetic mean, or the KM restricted mean
    whenever any machine is censored."""
    hits = list(hit_rounds)
    if any(t is None for t in hits):
        return kaplan_meier(hits, budget)[1]
    return float(np.mean([float(t) for t in hits]))


def evaluate_trace(
    trace: CampaignTrace, ground_truth, variant: str = None
) -> EvaluationResult:
    """All campaign metrics for one trace against known ground truth."""
    if variant is None:
        variant = trace.config.get("regret_variant", "true")
    hits = trials_to_optimum(trace, ground_truth)
    series = regret_series(trace, ground_truth, variant)
    budget = len(trace.rounds)
    curve, km_mean = kaplan_meier(hits, budget)
    return EvaluationResult(
        trials_to_optimum=hits,
        regret=series,
        cumulative=cumulative_regret(series),
        km_curve=curve,
        km_mean=km_mean,
        variant=variant,
        budget=budget,
    )


def _arm_dict(result: EvaluationResult) -> dict:
    final = result.cumulative[:, -1] if result.cumulative.size else np.zeros(0)
    return {
        "trials_to_optimum": [
            int(t) if t is not None else None for t in result.trials_to_optimum
        ],
        "mean_trials": mean_trials(result.trials_to_optimum, result.budget),
        "km_mean": result.km_mean,
        "km_curve": {
            "times": [float(t) for t in result.km_curve.times],
            "survival": [float(p) for p in result.km_curve.survival],
        },
        "final_cumulative_regret": [float(v) for v in final],
        "regret_variant": result.variant,
    }


def comparison_report(
    collaborative: EvaluationResult,
    baseline: EvaluationResult = None,
    config: dict = None,
) -> dict:
    """Evaluation report for one campaign or a collaborative/baseline pair.

    The per-machine table lists trials-to-optimum with censored machines
    shown as ">M"; the trailing average uses the KM restricted mean when
    any machine is censored and the arithmetic mean otherwise.
    """
    report = {
        "budget": collaborative.budget,
        "machines": len(collaborative.trials_to_optimum),
        "collaborative": _arm_dict(collaborative),
    }
    if baseline is not None:
        if baseline.budget != collaborative.budget:
            raise ValidationError("arms must share one budget")
        report["non_collaborative"] = _arm_dict(baseline)
    if config:
        report["config"] = config
    return report


def report_rows(report: dict) -> list:
    """Tabular view of a report: one row per machine plus the average row."""
    arms = ["collaborative"]
    if "non_collaborative" in report:
        arms.append("non_collaborative")
    header = ["machine"] + arms
    rows = [header]
    budget = report["budget"]
    for k in range(report["machines"]):
        row = [str(k + 1)]
        for arm in arms:
            t = report[arm]["trials_to_optimum"][k]
            row.append(f">{budget}" if t is None else str(t))
        rows.append(row)
    average = ["average"]
    for arm in arms:
        average.append(repr(float(report[arm]["mean_trials"])))
    rows.append(average)
    return rows
