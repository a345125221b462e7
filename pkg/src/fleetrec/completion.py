"""Low-rank completion of the fleet matrix and spectral rank estimation.

Completion factors the K x l utility matrix as A B' with A (K x r) holding
machine factors and B (l x r) condition factors, fit by alternating ridge
solves over the observed entries. Rank estimation mean-imputes the matrix,
builds a Gaussian affinity between machine rows, and reads the cluster
count off the eigengap of the normalized graph Laplacian.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError
from .matrix import MaskedMatrix

# fixed block size keeps per-row arithmetic identical for any worker count
_BLOCK = 64

# positions inspected by the eigengap heuristic are capped at this count
_MAX_GAP_POSITIONS = 10


@dataclass
class CompletionConfig:
    """Solver settings for als_complete.

    Attributes
    ----------
    rank : int
        Factor rank r, 1 <= r < min(K, l).
    lam : float
        Ridge penalty on the squared factor norms, >= 0.
    max_sweeps : int
        Sweep cap per penalty stage; one sweep updates A then B.
    rel_tol : float
        Relative objective decrease that counts as converged.
    seed : int
        Seed for the random initializer (init="random" only).
    init : str
        "svd" initializes from the mean-imputed matrix's truncated SVD,
        "random" from seeded standard normal factors.
    workers : int
        Thread count for the per-row ridge solves. Results are identical
        for any value; this only affects wall time on large fleets.
    anneal_scale : float
        Starting ridge penalty as a multiple of the mean squared observed
        entry. The penalty is annealed geometrically down to lam, each
        stage warm-starting the next; heavily regularized stages are easy
        to solve and steer the factors past poor local minima at low
        observation ratios. 0 disables annealing.
    anneal_factor : float
        Geometric ratio between consecutive penalty stages, > 1.
    anneal_tol : float
        Relative-decrease tolerance used inside intermediate stages.
    """

    rank: int
    lam: float = 0.05
    max_sweeps: int = 500
    rel_tol: float = 1e-6
    seed: int = 0
    init: str = "svd"
    workers: int = 1
    anneal_scale: float = 0.3
    anneal_factor: float = 3.0
    anneal_tol: float = 1e-5

    def __post_init__(self):
        if self.rank < 1:
            raise ValidationError("rank must be at least 1")
        if self.lam < 0:
            raise ValidationError("penalty must be nonnegative")
        if self.max_sweeps < 1:
            raise ValidationError("max_sweeps must be at least 1")
        if self.rel_tol <= 0 or self.anneal_tol <= 0:
            raise ValidationError("tolerances must be positive")
        if self.init not in ("svd", "random"):
            raise ValidationError("init must be 'svd' or 'random'")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")
        if self.anneal_scale > 0 and self.anneal_factor <= 1:
            raise ValidationError("anneal_factor must exceed 1")


@dataclass
class FactorPair:
    """Machine factors A (K x r) and condition factors B (l x r)."""

    A: np.ndarray
    B: np.ndarray
    rank: int

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise ValidationError("factors must be 2-d")
        if self.A.shape[1] != self.rank or self.B.shape[1] != self.rank:
            raise ValidationError("factor widths must equal the rank")
        if not (np.isfinite(self.A).all() and np.isfinite(self.B).all()):
            raise ValidationError("factors must be finite")

    def product(self) -> np.ndarray:
        return self.A @ self.B.T


def mean_impute(m: MaskedMatrix) -> np.ndarray:
    """Dense copy with missing entries replaced by observed column means.

    Columns with no observations fall back to the global observed mean.
    """
    if not m.mask.any():
        raise ValidationError("cannot impute a fully unobserved matrix")
    counts = m.mask.sum(axis=0)
    sums = m.filled().sum(axis=0)
    global_mean = m.values[m.mask].mean()
    col_means = np.where(counts > 0, sums / np.maximum(counts, 1), global_mean)
    return np.where(m.mask, m.values, col_means[None, :])


def gaussian_affinity(rows: np.ndarray, sigma: float) -> np.ndarray:
    """Affinity W[i, j] = exp(-||row_i - row_j||^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    rows = np.asarray(rows, dtype=float)
    diff = rows[:, None, :] - rows[None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    W = np.exp(-d2 / (2.0 * sigma * sigma))
    np.fill_diagonal(W, 1.0)
    return W


def rank_spectrum(m: MaskedMatrix):
    """Rank estimate plus the Laplacian spectrum behind it.

    Returns
    -------
    rank : int
    eigenvalues : ndarray
        Ascending spectrum of I - D^(-1/2) W D^(-1/2).
    sigma : float
        Kernel width used: the median over machines of the distance to
        the nearest other machine row, a scale that keeps within-cluster
        affinities near 1 while distant clusters decay. Falls back to the
        smallest positive pairwise distance when the median is zero.
    """
    if m.rows < 2:
        raise ValidationError("rank estimation needs at least two machines")
    dense = mean_impute(m)
    diff = dense[:, None, :] - dense[None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    dist = np.sqrt(d2)
    off = dist + np.diag(np.full(m.rows, np.inf))
    sigma = float(np.median(off.min(axis=1)))
    if sigma <= 0:
        positive = off[np.isfinite(off) & (off > 0)]
        # all rows identical: any width gives the all-ones affinity
        sigma = float(positive.min()) if positive.size else 1.0
    W = gaussian_affinity(dense, sigma)
    d_inv_sqrt = 1.0 / np.sqrt(W.sum(axis=1))
    lap = np.eye(m.rows) - d_inv_sqrt[:, None] * W * d_inv_sqrt[None, :]
    eigenvalues = np.sort(np.linalg.eigvalsh(lap))
    gaps = np.diff(eigenvalues)
    limit = min(m.rows - 1, _MAX_GAP_POSITIONS)
    rank = int(np.argmax(gaps[:limit])) + 1
    return rank, eigenvalues, sigma


def estimate_rank(m: MaskedMatrix) -> int:
    """Estimated factor rank of the fleet matrix, in [1, K-1]."""
    rank, _, _ = rank_spectrum(m)
    return rank


def objective_value(m: MaskedMatrix, f: FactorPair, lam: float) -> float:
    """Penalized squared error over the observed entries.

    0.5 * sum over observed (U - AB')^2 plus lam * (||A||_F^2 + ||B||_F^2).
    """
    if f.A.shape[0] != m.rows or f.B.shape[0] != m.cols:
        raise ValidationError("factor shapes do not match the matrix")
    residual = np.where(m.mask, m.values - f.product(), 0.0)
    penalty = (f.A * f.A).sum() + (f.B * f.B).sum()
    return float(0.5 * (residual * residual).sum() + lam * penalty)


def _svd_factors(dense: np.ndarray, rank: int):
    U, s, Vt = np.linalg.svd(dense, full_matrices=False)
    root = np.sqrt(s[:rank])
    return U[:, :rank] * root, Vt[:rank].T * root


def _ridge_sweep(values, mask, fixed, lam, workers):
    """Solve every row's ridge system against the fixed opposite factor.

    Row k minimizes 0.5 * sum_j mask[k,j] (values[k,j] - x' fixed_j)^2
    + lam ||x||^2, whose normal equations carry 2*lam on the diagonal.
    Using the exact minimizer is what makes the objective non-increasing
    at every half-sweep.
    """
    n = values.shape[0]
    rank = fixed.shape[1]
    ridge = (2.0 * lam if lam > 0 else 1e-12) * np.eye(rank)
    out = np.empty((n, rank))
    spans = [(start, min(start + _BLOCK, n)) for start in range(0, n, _BLOCK)]

    def solve(span):
        a, b = span
        normal = np.einsum(
            "kj,ja,jb->kab", mask[a:b].astype(float), fixed, fixed
        )
        normal += ridge
        rhs = np.where(mask[a:b], values[a:b], 0.0) @ fixed
        out[a:b] = np.linalg.solve(normal, rhs[..., None])[..., 0]

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(solve, spans))
    else:
        for span in spans:
            solve(span)
    if not np.isfinite(out).all():
        raise NumericError("ridge solve produced non-finite factors")
    return out


def _penalty_stages(m: MaskedMatrix, cfg: CompletionConfig):
    stages = []
    if cfg.anneal_scale > 0:
        penalty = cfg.anneal_scale * (m.values[m.mask] ** 2).mean()
        # with lam == 0 anneal down to a fixed fraction of the start
        floor = max(cfg.lam, penalty * 1e-9)
        while penalty > floor * cfg.anneal_factor:
            stages.append(penalty)
            penalty /= cfg.anneal_factor
    stages.append(cfg.lam)
    return stages


def _initial_factors(m: MaskedMatrix, cfg: CompletionConfig) -> FactorPair:
    if cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        scale = 1.0 / np.sqrt(cfg.rank)
        A = rng.standard_normal((m.rows, cfg.rank)) * scale
        B = rng.standard_normal((m.cols, cfg.rank)) * scale
        return FactorPair(A, B, cfg.rank)
    return FactorPair(*_svd_factors(mean_impute(m), cfg.rank), cfg.rank)


def als_complete_with_trace(
    m: MaskedMatrix, cfg: CompletionConfig, initial: FactorPair = None
):
    """als_complete plus the per-half-sweep objective trace.

    The trace holds the objective value (at the penalty in force when the
    half-sweep ran) after every half-sweep across all annealing stages.
    It is non-increasing: exact ridge solves never increase the objective
    and lowering the penalty between stages only lowers it further.
    """
    if cfg.rank >= min(m.rows, m.cols):
        raise ValidationError(
            f"rank {cfg.rank} must be below min(K, l) = {min(m.rows, m.cols)}"
        )
    empty = np.flatnonzero(~m.mask.any(axis=1))
    if empty.size:
        raise ValidationError(
            f"machines with no observations: {empty.tolist()}"
        )
    factors = initial if initial is not None else _initial_factors(m, cfg)
    if factors.A.shape != (m.rows, cfg.rank) or factors.B.shape != (m.cols, cfg.rank):
        raise ValidationError("initial factor shapes do not match")
    A, B = factors.A, factors.B
    trace = []
    stages = _penalty_stages(m, cfg)
    for index, penalty in enumerate(stages):
        final_stage = index == len(stages) - 1
        tol = cfg.rel_tol if final_stage else cfg.anneal_tol
        pair = FactorPair(A, B, cfg.rank)
        previous = objective_value(m, pair, penalty)
        for _ in range(cfg.max_sweeps):
            A = _ridge_sweep(m.values, m.mask, B, penalty, cfg.workers)
            trace.append(objective_value(m, FactorPair(A, B, cfg.rank), penalty))
            B = _ridge_sweep(m.values.T, m.mask.T, A, penalty, cfg.workers)
            current = objective_value(m, FactorPair(A, B, cfg.rank), penalty)
            trace.append(current)
            if previous == 0 or abs(previous - current) / previous < tol:
                break
            previous = current
    result = FactorPair(A, B, cfg.rank)
    completed = result.product()
    if not np.isfinite(completed).all():
        raise NumericError("completion produced non-finite entries")
    return result, completed, np.asarray(trace)


def als_complete(m: MaskedMatrix, cfg: CompletionConfig, initial: FactorPair = None):
    """Complete a partially observed matrix by alternating ridge solves.

    Parameters
    ----------
    m : MaskedMatrix
        Fleet matrix; every row needs at least one observed entry.
    cfg : CompletionConfig
    initial : FactorPair, optional
        Warm-start factors; defaults to the configured initializer.

    Returns
    -------
    factors : FactorPair
    completed : ndarray
        The dense reconstruction A B'.
    """
    factors, completed, _ = als_complete_with_trace(m, cfg, initial=initial)
    return factors, completed
