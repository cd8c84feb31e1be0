"""Post-hoc certification of a converged solve.

Every check is a pure function of (model, result, tolerances) returning a
`CheckRecord`; `verify_all` runs them all and collects a `VerificationReport`
that renders as text or as versioned JSON.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from phase_type import expected_time_to_claim
from solver import RiskModel, SolveResult, hjb_residuals
from valuefn import ValueFunction, second_difference_max

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class CheckStatus(Enum):
    """Outcome of a single check."""

    passed = "PASS"
    failed = "FAIL"
    skipped = "SKIPPED"  # precondition does not hold, see the record's reason


@dataclass(frozen=True)
class Tolerances:
    """Default tolerances for a solve at h = 1e-3.

    `barrier_tie_cells` is in grid steps: two barriers closer than that are
    treated as equal.
    """

    barrier_tie_cells: float = 2.0
    smooth_fit: float = 5e-3
    curvature: float = 1e-3
    hjb_below: float = 1e-4
    hjb_above: float = 1e-4
    slope: float = 1e-4
    concavity: float = 1e-6
    exit_slope: float = 5e-3
    lower_bound: float = 1e-6
    upper_bound: float = 0.0


@dataclass(frozen=True)
class CheckRecord:
    """Result of one check, with the location of its worst violation when it has one.

    Phases are 1-based.
    """

    name: str
    status: CheckStatus
    measured: Optional[float] = None
    tolerance: Optional[float] = None
    phase: Optional[int] = None
    x: Optional[float] = None
    reason: str = ""
    detail: str = ""

    def to_dict(self) -> Dict:
        """JSON-ready dict; non-finite numbers become null."""
        data = asdict(self)
        data["status"] = self.status.value
        for key in ("measured", "tolerance", "x"):
            value = data[key]
            data[key] = float(value) if value is not None and np.isfinite(value) else None
        return data


@dataclass(frozen=True)
class VerificationReport:
    """All check records of one verification run."""

    checks: Tuple[CheckRecord, ...] = field(default_factory=tuple)

    @property
    def status(self) -> CheckStatus:
        """FAIL if any check failed, PASS otherwise."""
        if any(c.status is CheckStatus.failed for c in self.checks):
            return CheckStatus.failed
        return CheckStatus.passed

    @property
    def ok(self) -> bool:
        """Whether every applicable check passed."""
        return self.status is CheckStatus.passed

    def get(self, name: str) -> CheckRecord:
        """The record of the check called `name`."""
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self) -> Dict:
        """Structured form, tagged with `SCHEMA_VERSION`."""
        return {
            "schema_version": SCHEMA_VERSION,
            "status": self.status.value,
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self) -> str:
        """Serialize `to_dict` as indented JSON."""
        return json.dumps(self.to_dict(), indent=2)

    def render(self) -> str:
        """Human-readable table, one line per check."""
        lines = []
        for c in self.checks:
            measured = "-" if c.measured is None else f"{c.measured:.3e}"
            tolerance = "-" if c.tolerance is None else f"{c.tolerance:.1e}"
            where = ""
            if c.phase is not None:
                where = f" phase={c.phase}"
            if c.x is not None:
                where += f" x={c.x:.4f}"
            note = c.reason or c.detail
            lines.append(
                f"{c.name:<34}{c.status.value:<9}measured={measured:<11}tol={tolerance:<9}"
                f"{where}{'  ' + note if note else ''}"
            )
        lines.append(f"overall: {self.status.value}")
        return "\n".join(lines)


def _status(ok: bool) -> CheckStatus:
    return CheckStatus.passed if ok else CheckStatus.failed


def _tie(result: SolveResult, tol: Tolerances) -> float:
    return tol.barrier_tie_cells * result.grid.h


def _barrier_index(result: SolveResult, i: int) -> int:
    return result.grid.index_of(float(result.barriers[i]))


def _scale(result: SolveResult) -> float:
    return max(1.0, max(float(np.abs(f.values).max()) for f in result.values))


def _phases(indices) -> str:
    return "{" + ",".join(str(int(i) + 1) for i in indices) + "}"


def _worst_over_phases(
    name: str,
    result: SolveResult,
    tolerance: float,
    measure: Callable[[int], Optional[Tuple[float, float]]],
    reason_if_empty: str,
) -> CheckRecord:
    """Apply `measure` to every phase and keep the largest (value, x) it reports."""
    worst: Optional[Tuple[float, int, float]] = None
    for i in range(len(result.values)):
        found = measure(i)
        if found is None:
            continue
        value, x = found
        if worst is None or value > worst[0]:
            worst = (value, i, x)
    if worst is None:
        logger.warning("%s skipped: %s", name, reason_if_empty)
        return CheckRecord(name, CheckStatus.skipped, tolerance=tolerance, reason=reason_if_empty)
    value, i, x = worst
    return CheckRecord(
        name, _status(value <= tolerance), value, tolerance, phase=i + 1, x=float(x)
    )


def check_ordering(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """The phases holding the highest barrier also have the highest claim intensity."""
    name = "ordering"
    n = model.env.n
    if n < 2:
        return CheckRecord(name, CheckStatus.skipped, reason="single phase")
    b = result.barriers
    t = model.env.t
    tie = _tie(result, tol)
    top = np.flatnonzero(b >= b.max() - tie)
    busiest = np.flatnonzero(t == t.max())
    offenders = [int(i) for i in top if t[i] < t.max()]
    if n == 2:
        for low, high in ((0, 1), (1, 0)):
            if b[low] < b[high] - tie and not t[high] > t[low]:
                offenders.append(high)
    detail = (
        f"highest barrier in phases {_phases(top)}, "
        f"highest claim intensity in phases {_phases(busiest)}"
    )
    return CheckRecord(
        name,
        _status(not offenders),
        measured=float(t.max() - t[top].min()),
        tolerance=0.0,
        phase=offenders[0] + 1 if offenders else None,
        detail=detail,
    )


def check_two_phase_intensity_ordering(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """For two phases, a strictly lower barrier means a strictly lower claim intensity."""
    name = "two_phase_intensity_ordering"
    if model.env.n != 2:
        return CheckRecord(name, CheckStatus.skipped, reason="defined for two phases only")
    b = result.barriers
    t = model.env.t
    low, high = (0, 1) if b[0] <= b[1] else (1, 0)
    if b[high] - b[low] <= _tie(result, tol):
        return CheckRecord(name, CheckStatus.passed, detail="barriers tie")
    reason = ""
    if b[low] == 0:
        reason = f"barrier of phase {low + 1} is 0"
    return CheckRecord(
        name,
        _status(t[high] > t[low]),
        measured=float(t[low] - t[high]),
        tolerance=0.0,
        phase=high + 1,
        reason=reason,
        detail=f"t[{low + 1}]={t[low]} < t[{high + 1}]={t[high]} expected",
    )


def check_exit_slope_identity(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """V_{n+1}'(b_max) = 1 + delta / t[p] for the highest-barrier phase p.

    Every other phase i with t[i] > 0 must satisfy V_{n+1}'(b_max) <= 1 + delta / t[i].
    """
    name = "exit_slope_identity"
    b = result.barriers
    t = model.env.t
    p = int(np.argmax(b))
    b_max = float(b[p])
    if t[p] == 0:
        return CheckRecord(
            name,
            CheckStatus.skipped,
            phase=p + 1,
            reason=f"phase {p + 1} has zero claim intensity",
        )
    if b_max < result.grid.h:
        return CheckRecord(name, CheckStatus.skipped, reason="all barriers are 0")
    slope = result.claim_value.derivative(b_max)
    measured = abs(slope - (1 + model.delta / t[p]))
    worst_phase = p
    for i in np.flatnonzero(t > 0):
        excess = slope - (1 + model.delta / t[i])
        if excess > measured:
            measured, worst_phase = float(excess), int(i)
    return CheckRecord(
        name,
        _status(measured <= tol.exit_slope),
        measured=float(measured),
        tolerance=tol.exit_slope,
        phase=worst_phase + 1,
        x=b_max,
        detail=f"V_{model.env.n + 1}'(b_max)={slope:.6f}, 1+delta/t[{p + 1}]="
        f"{1 + model.delta / t[p]:.6f}",
    )


def check_concavity_2order(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """For two phases, the higher-barrier value is concave from the lower barrier on."""
    name = "concavity_2order"
    if model.env.n != 2:
        return CheckRecord(name, CheckStatus.skipped, reason="stated for two phases only")
    b = result.barriers
    tie = _tie(result, tol)
    low, high = (0, 1) if b[0] <= b[1] else (1, 0)
    if b[high] - b[low] <= tie:
        return CheckRecord(name, CheckStatus.skipped, reason="barriers tie")
    x_max = result.grid.x_max
    measured = second_difference_max(result.values[high], float(b[low]), x_max)
    return CheckRecord(
        name,
        _status(measured <= tol.concavity),
        measured=measured,
        tolerance=tol.concavity,
        phase=high + 1,
        detail=f"on [{b[low]:.3f}, {x_max:g}]",
    )


def check_time_ordering(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """For two phases, the lower-barrier phase waits at least as long for a claim."""
    name = "time_ordering"
    if model.env.n != 2:
        return CheckRecord(name, CheckStatus.skipped, reason="defined for two phases only")
    b = result.barriers
    times = [expected_time_to_claim(model.env, i) for i in range(2)]
    detail = f"expected times to claim {times[0]:.4f}, {times[1]:.4f}"
    tie = _tie(result, tol)
    for low, high in ((0, 1), (1, 0)):
        if b[low] < b[high] - tie:
            gap = times[high] - times[low]
            return CheckRecord(
                name, _status(gap <= 0), float(gap), 0.0, phase=low + 1, detail=detail
            )
    return CheckRecord(name, CheckStatus.passed, detail=detail + "; barriers tie")


def check_smooth_fit(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """Left slope at every positive barrier is one."""

    def measure(i: int):
        b = float(result.barriers[i])
        if b < result.grid.h:
            return None
        return abs(result.values[i].derivative(b, "left") - 1.0), b

    return _worst_over_phases("smooth_fit", result, tol.smooth_fit, measure, "all barriers are 0")


def check_barrier_curvature(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """Second difference at every positive barrier vanishes, as h * |V''(b)|."""
    h = result.grid.h

    def measure(i: int):
        k = _barrier_index(result, i)
        if k < 1 or k >= result.grid.m:
            return None
        v = result.values[i].values
        return abs(v[k - 1] - 2 * v[k] + v[k + 1]) / h, float(result.grid.points[k])

    return _worst_over_phases(
        "barrier_curvature", result, tol.curvature, measure, "all barriers are 0"
    )


def _residual_scan(
    model: RiskModel, result: SolveResult, above: bool, absolute: bool
) -> Callable[[int], Optional[Tuple[float, float]]]:
    x = result.grid.points[:-1]

    def measure(i: int):
        k = _barrier_index(result, i)
        residuals = hjb_residuals(model, result, i)
        mask = np.arange(x.size) > k if above else np.arange(x.size) < k
        if not mask.any():
            return None
        values = np.abs(residuals[mask]) if absolute else residuals[mask]
        j = int(np.argmax(values))
        return float(values[j]), float(x[mask][j])

    return measure


def check_hjb_below(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """The generator term vanishes below each barrier, relative to the value scale."""
    return _worst_over_phases(
        "hjb_below_barrier",
        result,
        tol.hjb_below * _scale(result),
        _residual_scan(model, result, above=False, absolute=True),
        "all barriers are 0",
    )


def check_hjb_above(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """The generator term is nonpositive above each barrier."""
    return _worst_over_phases(
        "hjb_above_barrier",
        result,
        tol.hjb_above,
        _residual_scan(model, result, above=True, absolute=False),
        "no grid point above any barrier",
    )


def check_slope_below_barrier(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """Central slopes on (0, b_i) stay at or above one."""
    h = result.grid.h

    def measure(i: int):
        k = _barrier_index(result, i)
        if k < 2:
            return None
        v = result.values[i].values
        deficit = 1.0 - (v[2 : k + 1] - v[: k - 1]) / (2 * h)
        j = int(np.argmax(deficit))
        return float(deficit[j]), float(result.grid.points[j + 1])

    return _worst_over_phases(
        "slope_below_barrier", result, tol.slope, measure, "no barrier above 2h"
    )


def check_value_upper_bound(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """V_i(x) <= x + c / delta on the whole grid."""
    x = result.grid.points
    bound = x + model.c / model.delta

    def measure(i: int):
        excess = result.values[i].values - bound
        j = int(np.argmax(excess))
        return float(excess[j]), float(x[j])

    return _worst_over_phases("value_upper_bound", result, tol.upper_bound, measure, "")


def check_value_lower_bound(
    model: RiskModel, result: SolveResult, tol: Tolerances = Tolerances()
) -> CheckRecord:
    """Below the barrier, V_i never drops under paying at the barrier until the next move."""
    weights = model.env.coupling_weights
    stacked = np.vstack([f.values for f in result.functions])
    x = result.grid.points

    def measure(i: int):
        k = _barrier_index(result, i)
        if k < 1:
            return None
        floor = (model.c + weights[i] @ stacked[:, :k]) / (model.env.rates[i] + model.delta)
        deficit = floor - result.values[i].values[:k]
        j = int(np.argmax(deficit))
        return float(deficit[j]), float(x[j])

    return _worst_over_phases(
        "value_lower_bound_below_barrier", result, tol.lower_bound, measure, "all barriers are 0"
    )


CHECKS: List[Callable[[RiskModel, SolveResult, Tolerances], CheckRecord]] = [
    check_ordering,
    check_two_phase_intensity_ordering,
    check_exit_slope_identity,
    check_concavity_2order,
    check_time_ordering,
    check_smooth_fit,
    check_barrier_curvature,
    check_hjb_below,
    check_hjb_above,
    check_slope_below_barrier,
    check_value_upper_bound,
    check_value_lower_bound,
]


def verify_all(
    model: RiskModel, result: SolveResult, tolerances: Optional[Tolerances] = None
) -> VerificationReport:
    """Run every check; inapplicable ones are listed as SKIPPED."""
    tolerances = tolerances or Tolerances()
    report = VerificationReport(tuple(check(model, result, tolerances) for check in CHECKS))
    for c in report.checks:
        if c.status is CheckStatus.failed:
            logger.info(
                "check %s failed: measured %s, tolerance %s", c.name, c.measured, c.tolerance
            )
    logger.info("verification %s", report.status.value)
    return report


def perturb(result: SolveResult, amount: float = 0.1) -> SolveResult:
    """Raise the highest-barrier phase by `amount` from one grid point below its barrier on.

    The result stays a valid nondecreasing function with the same tail, but
    violates the ODE at the step.
    """
    p = int(np.argmax(result.barriers))
    f = result.values[p]
    k = max(_barrier_index(result, p) - 1, 0)
    values: NDArray[np.float64] = f.values.copy()
    values[k:] += amount
    bumped = ValueFunction(f.grid, values, f.tail_anchor)
    return replace(result, values=result.values[:p] + (bumped,) + result.values[p + 1 :])


def zero_iterate(result: SolveResult) -> SolveResult:
    """The starting iterate V = 0 presented with the result's barriers and tails."""
    grid = result.grid
    zeros = np.zeros(grid.m + 1)
    return replace(
        result,
        values=tuple(ValueFunction.with_tail(grid, zeros, b) for b in result.barriers),
        claim_value=ValueFunction.zero(grid),
    )
