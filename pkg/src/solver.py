"""Fixed-point iteration for the optimal phase-wise dividend barriers.

Each outer iteration looks for the best barrier strategy up to the next move
of the environment chain, given last iteration's values as terminal payoff:

1. for every phase i, pick the barrier b_i maximizing
   (c + sum_{j != i} lambda_ij V_j(x)) / (lambda_i + delta) - x,
2. solve the linear ODE below b_i backwards from that barrier and continue
   with slope one above it,
3. refresh the claim-state function V_{n+1} from the new phase functions.

Iterates start at zero, increase monotonically and stop once the largest
change over all n+1 functions drops below the tolerance.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.signal import lfilter

from phase_type import PhaseTypeModel, exit_intensity_matrix
from valuefn import (
    Grid,
    QueryBeyondDomain,
    ValueFunction,
    cell_weights,
    sup_norm_diff,
)

logger = logging.getLogger(__name__)


class InvalidRiskModel(ValueError):
    """Premium, discount or claim-size rate is not strictly positive."""


class SolverError(RuntimeError):
    """Base class for solver failures."""


class DomainTooSmall(SolverError):
    """A barrier landed on the last grid point."""

    def __init__(self, phase: int, x_max: float):
        super().__init__(f"barrier of phase {phase + 1} reached x_max={x_max}")
        self.phase = phase
        self.x_max = x_max


class MaxItersExceeded(SolverError):
    """The iteration cap was hit before the sup-norm change fell below tolerance."""

    def __init__(self, iterations: int, final_sup_diff: float):
        super().__init__(
            f"no convergence after {iterations} iterations (sup diff {final_sup_diff:.3e})"
        )
        self.iterations = iterations
        self.final_sup_diff = final_sup_diff


class NonMonotoneIterate(SolverError):
    """An iterate decreased somewhere, which the scheme never does."""


@dataclass(frozen=True, eq=False)
class RiskModel:
    """Premium rate c, discount delta, exponential claim rate beta and the environment."""

    c: float
    delta: float
    beta: float
    env: PhaseTypeModel

    def __post_init__(self):
        for name in ("c", "delta", "beta"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidRiskModel(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class SolverConfig:
    """Grid, stopping rule and domain regrowth policy for `solve`."""

    grid: Grid = field(default_factory=Grid.from_spacing)
    tol: float = 1e-8
    max_iters: int = 10_000
    domain_growth: float = 1.5
    max_regrowths: int = 3
    refine: bool = True
    monotone_tol: float = 1e-12

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.domain_growth > 1:
            raise ValueError(f"domain_growth must exceed 1, got {self.domain_growth}")


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Converged barriers and value functions with iteration diagnostics.

    `barriers` are grid points and anchor the slope-one tails of `values`;
    `refined_barriers` are the quadratic-refined argmax locations.
    """

    barriers: NDArray[np.float64]
    refined_barriers: NDArray[np.float64]
    values: Tuple[ValueFunction, ...]
    claim_value: ValueFunction
    iterations: int
    final_sup_diff: float
    barrier_history: NDArray[np.float64]
    regrowths: int = 0

    @property
    def grid(self) -> Grid:
        """The grid every function of the result lives on."""
        return self.claim_value.grid

    @property
    def functions(self) -> Tuple[ValueFunction, ...]:
        """The n phase functions followed by the claim-state function."""
        return (*self.values, self.claim_value)


def _stack(functions: Sequence[ValueFunction]) -> NDArray[np.float64]:
    return np.vstack([f.values for f in functions])


def _coupled(model: RiskModel, previous: Sequence[ValueFunction]) -> NDArray[np.float64]:
    """Sum_{j != i} lambda_ij V_j on the grid for every phase i, claim state included."""
    n = model.env.n
    if len(previous) != n + 1:
        raise ValueError(
            f"expected {n + 1} functions (phases and claim state), got {len(previous)}"
        )
    return exit_intensity_matrix(model.env) @ _stack(previous)


def _locate_barrier(
    model: RiskModel, coupled: NDArray[np.float64], i: int, grid: Grid, refine: bool
) -> Tuple[int, float]:
    """Grid argmax of the barrier objective, and its quadratic refinement."""
    x = grid.points
    objective = (model.c + coupled) / (model.env.rates[i] + model.delta) - x
    # argmax returns the first maximum, i.e. the smallest x on ties.
    k = int(np.argmax(objective))
    if k == grid.m:
        raise DomainTooSmall(i, grid.x_max)
    refined = float(x[k])
    if refine and k > 0:
        y0, y1, y2 = objective[k - 1 : k + 2]
        curvature = y0 - 2 * y1 + y2
        if curvature < 0:
            offset = 0.5 * (y0 - y2) / curvature * grid.h
            refined += float(np.clip(offset, -0.5 * grid.h, 0.5 * grid.h))
    return k, refined


def _phase_values(
    model: RiskModel, coupled: NDArray[np.float64], i: int, k: int, grid: Grid
) -> ValueFunction:
    """Values of the barrier-at-x_k strategy up to the next environment move.

    Below the barrier V solves c V' = (lambda_i + delta) V - coupled, which on
    each cell is the exact recurrence

        V(x_j) = e^{-a h} V(x_{j+1}) + (1/c) int_{x_j}^{x_{j+1}} e^{-a(u - x_j)} coupled(u) du

    with a = (lambda_i + delta) / c, run backwards from V(b).
    """
    c = model.c
    rate = model.env.rates[i] + model.delta
    a = rate / c
    h = grid.h
    x = grid.points
    values = np.empty(grid.m + 1)
    at_barrier = (c + coupled[k]) / rate
    if k > 0:
        A, C = cell_weights(a, h)
        cells = (coupled[:k] * (A - C) + coupled[1 : k + 1] * C) / c
        decay = np.exp(-a * h)
        below, _ = lfilter([1.0], [1.0, -decay], cells[::-1], zi=[decay * at_barrier])
        values[:k] = below[::-1]
    values[k] = at_barrier
    values[k + 1 :] = at_barrier + x[k + 1 :] - x[k]
    return ValueFunction(grid, values, float(x[k]))


def barrier_step(model: RiskModel, previous: Sequence[ValueFunction], i: int) -> float:
    """Optimal grid barrier for phase `i` given last iteration's n+1 functions.

    Raises:
        DomainTooSmall: the maximizer is the last grid point.
    """
    grid = previous[0].grid
    k, _ = _locate_barrier(model, _coupled(model, previous)[i], i, grid, refine=False)
    return float(grid.points[k])


def value_update(
    model: RiskModel, previous: Sequence[ValueFunction], i: int, b: float
) -> ValueFunction:
    """Value of phase `i` under barrier `b` (snapped to the grid) given the iterate `previous`."""
    grid = previous[0].grid
    if not 0 <= b <= grid.x_max:
        raise QueryBeyondDomain(f"barrier {b} outside [0, {grid.x_max}]")
    return _phase_values(model, _coupled(model, previous)[i], i, grid.index_of(b), grid)


def claim_value(model: RiskModel, phase_values: Sequence[ValueFunction]) -> ValueFunction:
    """Expected value right after a claim, before the restart phase is drawn.

    g(x) = beta e^{-beta x} int_0^x e^{beta y} sum_i pi_i V_i(y) dy, integrated
    forward cell by cell: g(x_{k+1}) = e^{-beta h} g(x_k) + exact cell integral.
    """
    grid = phase_values[0].grid
    beta, h = model.beta, grid.h
    mixed = model.env.pi @ _stack(phase_values[: model.env.n])
    A, C = cell_weights(beta, h)
    cells = beta * (mixed[1:] * (A - C) + mixed[:-1] * C)
    decay = np.exp(-beta * h)
    g = np.empty(grid.m + 1)
    g[0] = 0.0
    g[1:] = lfilter([1.0], [1.0, -decay], cells)
    return ValueFunction(grid, g)


def _check_monotone(
    previous: Sequence[ValueFunction], current: Sequence[ValueFunction], cfg: SolverConfig, k: int
) -> None:
    for j, (old, new) in enumerate(zip(previous, current)):
        drop = old.values - new.values
        worst = int(np.argmax(drop))
        if drop[worst] > cfg.monotone_tol:
            raise NonMonotoneIterate(
                f"iteration {k}: function {j + 1} decreased by {drop[worst]:.3e} "
                f"at x={new.grid.points[worst]}"
            )


def _iterate(
    model: RiskModel, cfg: SolverConfig, grid: Grid, fixed: Optional[Sequence[int]] = None
) -> SolveResult:
    """Run the fixed-point loop; `fixed` holds grid indices of barriers to keep."""
    n = model.env.n
    x = grid.points
    functions: List[ValueFunction] = [ValueFunction.zero(grid)] * (n + 1)
    history: List[NDArray[np.float64]] = []
    sup_diff = float("inf")
    for k in range(1, cfg.max_iters + 1):
        coupled = _coupled(model, functions)
        barriers = np.empty(n)
        refined = np.empty(n)
        updated: List[ValueFunction] = []
        for i in range(n):
            if fixed is None:
                kb, refined[i] = _locate_barrier(model, coupled[i], i, grid, cfg.refine)
            else:
                kb = fixed[i]
                refined[i] = x[kb]
            barriers[i] = x[kb]
            updated.append(_phase_values(model, coupled[i], i, kb, grid))
        updated.append(claim_value(model, updated))

        _check_monotone(functions, updated, cfg, k)
        sup_diff = max(sup_norm_diff(new, old) for new, old in zip(updated, functions))
        functions = updated
        history.append(barriers)
        if k % 100 == 0:
            logger.debug("iteration %d: sup diff %.3e, barriers %s", k, sup_diff, barriers)
        if k > 1 and sup_diff < cfg.tol:
            logger.info("converged after %d iterations, barriers %s", k, refined)
            return SolveResult(
                barriers=barriers,
                refined_barriers=refined,
                values=tuple(functions[:n]),
                claim_value=functions[n],
                iterations=k,
                final_sup_diff=sup_diff,
                barrier_history=np.array(history),
            )
    raise MaxItersExceeded(cfg.max_iters, sup_diff)


def solve(model: RiskModel, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Compute the optimal phase-wise barriers and value functions.

    When a barrier reaches the end of the grid, x_max grows by
    `cfg.domain_growth` and the iteration restarts from zero.

    Raises:
        DomainTooSmall: still on the boundary after `cfg.max_regrowths` regrowths.
        MaxItersExceeded: no convergence within `cfg.max_iters` iterations.
        NonMonotoneIterate: an iterate decreased beyond rounding.
    """
    cfg = cfg or SolverConfig()
    grid = cfg.grid
    logger.info("solving %d-phase model on [0, %g] with h=%g", model.env.n, grid.x_max, grid.h)
    for attempt in range(cfg.max_regrowths + 1):
        try:
            return replace(_iterate(model, cfg, grid), regrowths=attempt)
        except DomainTooSmall as e:
            if attempt == cfg.max_regrowths:
                raise
            grid = Grid.from_spacing(grid.h, grid.x_max * cfg.domain_growth)
            logger.info("%s; regrowing the domain to x_max=%g", e, grid.x_max)
    raise AssertionError("unreachable")


def evaluate_barriers(
    model: RiskModel, barriers: ArrayLike, cfg: Optional[SolverConfig] = None
) -> SolveResult:
    """Value functions of a given phase-wise barrier strategy.

    Barriers are snapped to the nearest grid point and held fixed while the
    same value and claim-state updates run to convergence.
    """
    cfg = cfg or SolverConfig()
    levels = np.asarray(barriers, dtype=float)
    if levels.shape != (model.env.n,):
        raise ValueError(f"expected {model.env.n} barriers, got {levels.size}")
    if np.any(levels < 0) or np.any(levels >= cfg.grid.x_max):
        raise QueryBeyondDomain(f"barriers {levels.tolist()} must lie in [0, {cfg.grid.x_max})")
    fixed = [cfg.grid.index_of(b) for b in levels]
    return _iterate(model, cfg, cfg.grid, fixed=fixed)


def hjb_residuals(model: RiskModel, result: SolveResult, i: int) -> NDArray[np.float64]:
    """`hjb_residual` of phase `i` at every grid point but the last."""
    grid = result.grid
    h = grid.h
    v = result.values[i].values
    slope = np.empty(grid.m)
    slope[1:] = (v[2:] - v[:-2]) / (2 * h)
    slope[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
    k = grid.index_of(result.barriers[i])
    if 2 <= k < grid.m:
        slope[k] = (3 * v[k] - 4 * v[k - 1] + v[k - 2]) / (2 * h)
    coupled = model.env.coupling_weights[i] @ _stack(result.functions)
    rate = model.env.rates[i] + model.delta
    return model.c * slope + coupled[:-1] - rate * v[:-1]


def hjb_residual(model: RiskModel, result: SolveResult, i: int, x: float) -> float:
    """Generator term c V_i' + sum_{j != i} lambda_ij V_j - (lambda_i + delta) V_i at `x`.

    The slope is a central difference with step h, one-sided at 0 and
    left-sided at the barrier of phase `i`.
    """
    grid = result.grid
    if not 0 <= x < grid.x_max:
        raise QueryBeyondDomain(f"x={x} outside [0, {grid.x_max})")
    f = result.values[i]
    b = float(result.barriers[i])
    if x < grid.h:
        side = "right"
    elif abs(x - b) < 0.5 * grid.h:
        side = "left"
    else:
        side = "central"
    slope = f.derivative(x, side)
    at_x = np.array([g.eval(x) for g in result.functions])
    coupled = float(model.env.coupling_weights[i] @ at_x)
    return model.c * slope + coupled - (model.env.rates[i] + model.delta) * f.eval(x)
