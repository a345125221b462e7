"""Discrete process-parameter grids and flat-index bookkeeping.

A fleet shares one grid: the Cartesian product of a few ordered axes of
physical values (print speed, acceleration, ...). Each grid cell maps to a
flat column index of the fleet utility matrix. Ordinals along an axis are
1-based; flat indices are 0-based and run row-major with the last axis
varying fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ValidationError


@dataclass(frozen=True)
class ParameterAxis:
    """One tunable process parameter.

    Attributes
    ----------
    name : str
        Axis label, e.g. "speed".
    unit : str
        Physical unit of the values, e.g. "mm/s".
    values : tuple of float
        Strictly increasing physical settings available on this axis.
    """

    name: str
    unit: str
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 1:
            raise ValidationError(f"axis {self.name!r} has no values")
        if any(not math.isfinite(v) for v in vals):
            raise ValidationError(f"axis {self.name!r} has non-finite values")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValidationError(
                f"axis {self.name!r} values must be strictly increasing"
            )
        object.__setattr__(self, "values", vals)

    @property
    def size(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ParameterGrid:
    """Cartesian product of parameter axes with flat indexing."""

    axes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.axes) < 1:
            raise ValidationError("grid needs at least one axis")
        object.__setattr__(self, "axes", tuple(self.axes))

    @property
    def flat_size(self) -> int:
        return math.prod(axis.size for axis in self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(axis.size for axis in self.axes)


def build_grid(axes) -> ParameterGrid:
    """Assemble a grid from a list of ParameterAxis."""
    return ParameterGrid(axes=tuple(axes))


def flatten_index(grid: ParameterGrid, multi_index) -> int:
    """Map a 1-based multi-index to its 0-based flat column index.

    The last axis varies fastest: for a (5, 7) grid the multi-index
    (2, 3) lands on flat index (2-1)*7 + (3-1) = 9.
    """
    multi = tuple(int(i) for i in multi_index)
    if len(multi) != len(grid.axes):
        raise ValidationError(
            f"multi-index has {len(multi)} entries, grid has {len(grid.axes)} axes"
        )
    flat = 0
    for ordinal, axis in zip(multi, grid.axes):
        if not 1 <= ordinal <= axis.size:
            raise IndexError(
                f"ordinal {ordinal} out of range [1, {axis.size}] on axis {axis.name!r}"
            )
        flat = flat * axis.size + (ordinal - 1)
    return flat


def unflatten_index(grid: ParameterGrid, j) -> tuple:
    """Invert flatten_index: flat index -> (multi-index, physical values)."""
    j = int(j)
    if not 0 <= j < grid.flat_size:
        raise IndexError(f"flat index {j} out of range [0, {grid.flat_size})")
    ordinals = []
    rem = j
    for axis in reversed(grid.axes):
        rem, pos = divmod(rem, axis.size)
        ordinals.append(pos + 1)
    multi = tuple(reversed(ordinals))
    physical = tuple(axis.values[i - 1] for axis, i in zip(grid.axes, multi))
    return multi, physical


def printer_grid() -> ParameterGrid:
    """The stock two-axis grid used by the bundled printer-fleet scenario.

    5 print speeds (50..150 mm/s step 25) by 7 accelerations
    (4000..7000 mm/s^2 step 500), 35 cells total.
    """
    return build_grid(
        [
            ParameterAxis("speed", "mm/s", tuple(range(50, 151, 25))),
            ParameterAxis("acceleration", "mm/s^2", tuple(range(4000, 7001, 500))),
        ]
    )


def index_grid(size: int) -> ParameterGrid:
    """Fallback single-axis grid for matrices with no physical metadata."""
    return build_grid([ParameterAxis("condition", "index", tuple(range(size)))])
