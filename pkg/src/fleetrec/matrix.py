"""Partially observed fleet matrices.

The same container backs the K x l fleet utility matrix and the small
m1 x m2 per-machine grids used by the non-collaborative baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class MaskedMatrix:
    """A real matrix with an explicit support set of observed entries.

    values holds the observed entries; positions where mask is False are
    ignored by all consumers (NaN is the conventional filler). Finite
    values are required wherever mask is True.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2:
            raise ValidationError("values must be a 2-d array")
        if self.values.shape != self.mask.shape:
            raise ValidationError(
                f"values shape {self.values.shape} != mask shape {self.mask.shape}"
            )
        if self.mask.any() and not np.isfinite(self.values[self.mask]).all():
            raise ValidationError("observed entries must be finite")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def observed_count(self) -> int:
        return int(self.mask.sum())

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Dense copy with unobserved entries replaced by `fill`."""
        return np.where(self.mask, self.values, fill)

    def copy(self) -> "MaskedMatrix":
        return MaskedMatrix(self.values.copy(), self.mask.copy())


def from_dense(values, mask=None) -> MaskedMatrix:
    """Wrap a dense array; defaults to treating finite entries as observed."""
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = np.isfinite(values)
    return MaskedMatrix(values, mask)
