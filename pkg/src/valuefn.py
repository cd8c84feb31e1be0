"""Piecewise-linear value functions on a uniform wealth grid.

A `ValueFunction` stores its values at the grid points x_k = k h, k = 0..m,
and may carry a tail anchor b beyond which it continues with slope one. The
integrals the solver needs are computed exactly for the interpolant, one
closed-form exponential-linear antiderivative per cell.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Literal, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

DEFAULT_SPACING = 1e-3
DEFAULT_X_MAX = 30.0
MONOTONE_SLACK = 1e-9  # in units of h

# Below this value of a*L the cell weights switch to their Taylor series.
_SERIES_CUTOFF = 1e-3

Scalar = Union[float, NDArray[np.float64]]


class ValueFunctionError(ValueError):
    """Base class for value function errors."""


class QueryBeyondDomain(ValueFunctionError):
    """Evaluation outside [0, x_max] without a slope-one tail to fall back on."""


class GridMismatch(ValueFunctionError):
    """Two functions on different grids were combined."""


class NonMonotoneValues(ValueFunctionError):
    """Values decrease by more than the rounding slack, or are negative or not finite."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [0, x_max] with `m` cells."""

    x_max: float
    m: int

    def __post_init__(self):
        if self.m < 1 or not self.x_max > 0:
            raise ValueFunctionError(f"invalid grid: x_max={self.x_max}, m={self.m}")

    @classmethod
    def from_spacing(cls, h: float = DEFAULT_SPACING, x_max: float = DEFAULT_X_MAX) -> "Grid":
        """Build the grid with spacing `h` whose last point is closest to `x_max`."""
        m = max(1, int(round(x_max / h)))
        return cls(x_max=m * h, m=m)

    @property
    def h(self) -> float:
        """Grid spacing."""
        return self.x_max / self.m

    @cached_property
    def points(self) -> NDArray[np.float64]:
        """The m+1 grid points."""
        points = np.arange(self.m + 1) * self.h
        points.setflags(write=False)
        return points

    def index_of(self, x: float) -> int:
        """Index of the grid point nearest to `x`."""
        return int(min(max(round(x / self.h), 0), self.m))


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Grid values plus an optional slope-one tail starting at `tail_anchor`."""

    grid: Grid
    values: NDArray[np.float64]
    tail_anchor: Optional[float] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.m + 1,):
            raise ValueFunctionError(
                f"expected {self.grid.m + 1} values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise NonMonotoneValues("values must be finite")
        if values.min() < 0:
            raise NonMonotoneValues(f"values must be nonnegative, min is {values.min()}")
        drop = np.diff(values).min(initial=0.0)
        if drop < -MONOTONE_SLACK * self.grid.h:
            k = int(np.argmin(np.diff(values)))
            raise NonMonotoneValues(
                f"values decrease by {-drop} between x={self.grid.points[k]} and the next point"
            )
        if self.tail_anchor is not None:
            b = float(self.tail_anchor)
            if not 0 <= b <= self.grid.x_max:
                raise QueryBeyondDomain(f"tail anchor {b} outside [0, {self.grid.x_max}]")
            object.__setattr__(self, "tail_anchor", b)
            points = self.grid.points
            past = points > b
            expected = np.interp(b, points, values) + points[past] - b
            if np.any(np.abs(values[past] - expected) > 1e-9 * max(1.0, float(values.max()))):
                raise ValueFunctionError(f"values past the tail anchor {b} do not have slope one")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls, grid: Grid) -> "ValueFunction":
        """The identically zero function, without a tail."""
        return cls(grid, np.zeros(grid.m + 1))

    @classmethod
    def with_tail(cls, grid: Grid, values: ArrayLike, anchor: float) -> "ValueFunction":
        """Build a function from `values`, overwriting everything past `anchor` by the tail."""
        values = np.array(values, dtype=float)
        k = grid.index_of(anchor)
        anchor = float(grid.points[k])
        values[k + 1 :] = values[k] + grid.points[k + 1 :] - anchor
        return cls(grid, values, anchor)

    @cached_property
    def _anchor_value(self) -> float:
        assert self.tail_anchor is not None
        return float(np.interp(self.tail_anchor, self.grid.points, self.values))

    @property
    def tail_constant(self) -> Optional[float]:
        """f(b) - b for an anchored function, the offset of its slope-one tail."""
        if self.tail_anchor is None:
            return None
        return self._anchor_value - self.tail_anchor

    def eval(self, x: ArrayLike) -> Scalar:
        """Evaluate at `x` (scalar or array), using the tail past the anchor."""
        xs = np.asarray(x, dtype=float)
        if np.any(xs < 0):
            raise QueryBeyondDomain(f"negative wealth {xs.min()}")
        beyond = xs > self.grid.x_max
        if self.tail_anchor is None:
            if np.any(beyond):
                raise QueryBeyondDomain(
                    f"x={xs.max()} beyond x_max={self.grid.x_max} and no tail anchor"
                )
            out = np.interp(xs, self.grid.points, self.values)
        else:
            out = np.where(
                xs > self.tail_anchor,
                self._anchor_value + xs - self.tail_anchor,
                np.interp(xs, self.grid.points, self.values),
            )
        return float(out) if out.ndim == 0 else out

    def derivative(
        self, x: float, side: Literal["central", "left", "right"] = "central"
    ) -> float:
        """Finite-difference slope at `x` with step h.

        One-sided differences are second order where two steps fit in the
        domain, first order otherwise.
        """
        h = self.grid.h
        if side == "central" and x >= h:
            return (self.eval(x + h) - self.eval(x - h)) / (2 * h)
        if side == "left" and x >= h:
            if x >= 2 * h:
                return (3 * self.eval(x) - 4 * self.eval(x - h) + self.eval(x - 2 * h)) / (2 * h)
            return (self.eval(x) - self.eval(x - h)) / h
        return (-3 * self.eval(x) + 4 * self.eval(x + h) - self.eval(x + 2 * h)) / (2 * h)


def cell_weights(a: float, length: ArrayLike) -> Tuple[NDArray, NDArray]:
    """Exact weights for integrating e^{-a s} times a linear function over [0, L].

    For f(s) = f0 + (f1 - f0) s / L,

        int_0^L e^{-a s} f(s) ds = f0 * A + (f1 - f0) * C

    with A = (1 - e^{-aL}) / a and C = (1 - e^{-aL}(1 + aL)) / (a^2 L).
    """
    L = np.asarray(length, dtype=float)
    y = a * L
    A = -np.expm1(-y) / a
    small = y < _SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (-np.expm1(-y) - y * np.exp(-y)) / (a * y)
    series = L * (0.5 - y / 3 + y * y / 8 - y**3 / 30)
    C = np.where(small, series, direct)
    return A, C


def exp_kernel_integral(f: ValueFunction, x: float, b: float, a: float) -> float:
    """Integrate e^{-a(u - x)} f(u) over [x, b] exactly for the interpolant of `f`."""
    if not a > 0:
        raise ValueFunctionError(f"kernel rate must be positive, got {a}")
    if not 0 <= x <= b <= f.grid.x_max:
        raise QueryBeyondDomain(f"need 0 <= x <= b <= {f.grid.x_max}, got x={x}, b={b}")
    if b == x:
        return 0.0
    inner = f.grid.points[(f.grid.points > x) & (f.grid.points < b)]
    nodes = np.concatenate(([x], inner, [b]))
    lengths = np.diff(nodes)
    keep = lengths > 0
    starts, lengths = nodes[:-1][keep], lengths[keep]
    f0 = f.eval(starts)
    f1 = f.eval(starts + lengths)
    A, C = cell_weights(a, lengths)
    return float(np.sum(np.exp(-a * (starts - x)) * (f0 * A + (f1 - f0) * C)))


def sup_norm_diff(f: ValueFunction, g: ValueFunction) -> float:
    """Largest pointwise gap, including the gap between two slope-one tails."""
    if f.grid != g.grid:
        raise GridMismatch(f"{f.grid} != {g.grid}")
    diff = float(np.max(np.abs(f.values - g.values)))
    if f.tail_constant is not None and g.tail_constant is not None:
        diff = max(diff, abs(f.tail_constant - g.tail_constant))
    return diff


def second_difference_max(f: ValueFunction, lo: float, hi: float) -> float:
    """Largest second difference over interior grid points in [lo, hi].

    Returns -inf when the interval holds no interior grid point.
    """
    if not 0 <= lo <= hi <= f.grid.x_max:
        raise QueryBeyondDomain(f"need 0 <= lo <= hi <= {f.grid.x_max}, got [{lo}, {hi}]")
    v = f.values
    second = (v[:-2] - 2 * v[1:-1] + v[2:]) / f.grid.h**2
    interior = f.grid.points[1:-1]
    # Rounding slack so grid points that sit exactly on lo or hi are kept.
    eps = 0.5 * MONOTONE_SLACK * f.grid.h
    mask = (interior >= lo - eps) & (interior <= hi + eps)
    if not mask.any():
        return float("-inf")
    return float(second[mask].max())
