"""Utility construction: surface scans and print times -> machine utility rows.

Pipeline per machine: RMS roughness per scanned surface, combine the two
surfaces of a cube into one quality number, normalize quality and time by
their observed maxima, blend them with quality-driven weights, and negate
so that better cells have higher (less negative) utility.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Final

import numpy as np

from .errors import ValidationError
from .matrix import MaskedMatrix

QUALITY_WEIGHT_SCALE: Final[float] = 0.78
QUALITY_WEIGHT_RATE: Final[float] = 0.82

SURFACE_IDS: Final[tuple] = ("x", "y")


@dataclass(frozen=True)
class ScanProfile:
    """Raw displacement samples from one scanned surface of one test cube.

    Attributes
    ----------
    samples : ndarray
        Ordered displacement readings in mm, at least two.
    surface_id : str
        Which face was scanned, "x" or "y".
    machine_id : int
        0-based machine index.
    condition_index : int
        0-based flat index of the process condition printed.
    """

    samples: np.ndarray
    surface_id: str
    machine_id: int
    condition_index: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float).ravel()
        if samples.size < 2:
            raise ValidationError("a scan needs at least two samples")
        if not np.isfinite(samples).all():
            raise ValidationError("scan samples must be finite")
        if self.surface_id not in SURFACE_IDS:
            raise ValidationError(f"surface_id must be one of {SURFACE_IDS}")
        object.__setattr__(self, "samples", samples)


@dataclass
class MachineMeasurements:
    """Per-machine measurement vectors over the grid, raw and derived.

    Vectors are full-length with NaN at unobserved cells. quality is the
    combined RMS roughness in mm, time the print duration in seconds.
    The derived fields are filled in by build_measurements.
    """

    machine_id: int
    quality: np.ndarray
    time: np.ndarray
    quality_norm: np.ndarray = None
    time_norm: np.ndarray = None
    weight_quality: np.ndarray = None
    weight_time: np.ndarray = None
    utility: np.ndarray = None


def surface_rms(scan: ScanProfile) -> float:
    """RMS deviation of a scan about its mean, in mm.

    Computed as sqrt((S'S - (1'S)^2 / p) / p), the population standard
    deviation of the p samples. Invariant under adding a constant offset
    to all samples and scales linearly with the samples.
    """
    s = scan.samples
    # algebraically sqrt((S'S - (1'S)^2 / p) / p); evaluated as the
    # centered second moment because the raw form cancels catastrophically
    # on near-constant scans with a large mean offset
    return float(np.std(s))


def combine_surfaces(qx: float, qy: float) -> float:
    """Quadratic mean of the two per-surface roughness values."""
    if qx < 0 or qy < 0:
        raise ValidationError("surface roughness cannot be negative")
    return float(np.sqrt((qx * qx + qy * qy) / 2.0))


def normalize_max(v) -> np.ndarray:
    """Divide a vector by the maximum over its observed (finite) entries.

    Unobserved entries stay NaN. The observed maximum must be positive;
    the normalized observed maximum is exactly 1.
    """
    v = np.asarray(v, dtype=float)
    finite = np.isfinite(v)
    if not finite.any():
        raise ValidationError("cannot normalize a fully unobserved vector")
    top = v[finite].max()
    if top <= 0:
        raise ValidationError("normalization needs a positive maximum")
    return v / top


def quality_weights(q_norm, constant: float = None) -> tuple:
    """Blending weights (w_q, w_t) from normalized quality.

    w_q grows exponentially with normalized roughness so that bad surfaces
    dominate the utility: w_q = 0.78 * (exp(0.82 * q) - 1), and w_t = 1 - w_q.
    Both lie in [0, 1] for q in [0, 1] and sum to 1 exactly.

    Passing `constant` overrides the formula with a fixed quality weight,
    which must lie in [0, 1].
    """
    q = np.asarray(q_norm, dtype=float)
    finite = np.isfinite(q)
    if finite.any() and (q[finite].min() < 0 or q[finite].max() > 1):
        raise ValidationError("normalized quality must lie in [0, 1]")
    if constant is not None:
        if not 0 <= constant <= 1:
            raise ValidationError("constant quality weight must lie in [0, 1]")
        w_q = np.where(finite, float(constant), np.nan)
    else:
        w_q = QUALITY_WEIGHT_SCALE * (np.exp(QUALITY_WEIGHT_RATE * q) - 1.0)
    return w_q, 1.0 - w_q


def compose_utility(q_norm, t_norm, constant_weight: float = None) -> np.ndarray:
    """Scalar utility per cell: u = -(w_q * q + w_t * t), in [-1, 0].

    Both inputs are normalized to [0, 1]; NaN marks unobserved cells and
    propagates. Higher utility means a better cell.
    """
    q = np.asarray(q_norm, dtype=float)
    t = np.asarray(t_norm, dtype=float)
    if q.shape != t.shape:
        raise ValidationError(f"shape mismatch {q.shape} vs {t.shape}")
    tf = np.isfinite(t)
    if tf.any() and (t[tf].min() < 0 or t[tf].max() > 1):
        raise ValidationError("normalized time must lie in [0, 1]")
    w_q, w_t = quality_weights(q, constant=constant_weight)
    return -(w_q * q + w_t * t)


def build_measurements(
    machine_id: int, quality, time, constant_weight: float = None
) -> MachineMeasurements:
    """Fill in the derived per-machine vectors from raw quality and time.

    Raw vectors are full-length with NaN at unobserved cells; both must be
    observed at exactly the same cells. Times must be positive.
    """
    quality = np.asarray(quality, dtype=float)
    time = np.asarray(time, dtype=float)
    if quality.shape != time.shape or quality.ndim != 1:
        raise ValidationError("quality and time must be 1-d vectors of equal length")
    qf, tf = np.isfinite(quality), np.isfinite(time)
    if (qf != tf).any():
        raise ValidationError(
            f"machine {machine_id}: quality and time observed at different cells"
        )
    if qf.any() and quality[qf].min() < 0:
        raise ValidationError(f"machine {machine_id}: negative roughness")
    if tf.any() and time[tf].min() <= 0:
        raise ValidationError(f"machine {machine_id}: print times must be positive")
    m = MachineMeasurements(machine_id=machine_id, quality=quality, time=time)
    m.quality_norm = normalize_max(quality)
    m.time_norm = normalize_max(time)
    m.weight_quality, m.weight_time = quality_weights(
        m.quality_norm, constant=constant_weight
    )
    m.utility = compose_utility(
        m.quality_norm, m.time_norm, constant_weight=constant_weight
    )
    return m


def assemble_fleet_matrix(measurements, mask=None) -> MaskedMatrix:
    """Stack per-machine utility rows into the fleet matrix.

    All machines must share one grid length. When `mask` is omitted it is
    derived from the finite utility entries; an explicit mask may only
    mark cells the measurements actually observed.
    """
    if not measurements:
        raise ValidationError("need at least one machine")
    lengths = {m.utility.shape[0] for m in measurements}
    if len(lengths) != 1:
        raise ValidationError(f"inconsistent vector lengths {sorted(lengths)}")
    values = np.vstack([m.utility for m in measurements])
    observed = np.isfinite(values)
    if mask is None:
        mask = observed
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != values.shape:
            raise ValidationError("mask shape does not match the fleet matrix")
        if (mask & ~observed).any():
            raise ValidationError("mask marks cells with no measurement")
    return MaskedMatrix(np.where(mask, values, np.nan), mask)
