"""Unit tests for the optimality checks."""

import json
from dataclasses import replace

import numpy as np
import pytest
from oracles import one_phase_model

from phase_type import validate
from solver import RiskModel, SolverConfig, solve
from valuefn import Grid, ValueFunction
from verifier import (
    SCHEMA_VERSION,
    CheckRecord,
    CheckStatus,
    Tolerances,
    VerificationReport,
    check_concavity_2order,
    check_exit_slope_identity,
    check_ordering,
    check_smooth_fit,
    check_time_ordering,
    check_two_phase_intensity_ordering,
    check_value_upper_bound,
    perturb,
    verify_all,
    zero_iterate,
)


@pytest.fixture(scope="module")
def three_phase():
    env = validate([[-10, 5, 2], [2, -12, 4], [2, 4, -8]], [0.2, 0.3, 0.5])
    model = RiskModel(c=21.4, delta=0.1, beta=1.0, env=env)
    return model, solve(model, SolverConfig(grid=Grid.from_spacing(0.05, 20.0)))


def swapped(result):
    return replace(result, barriers=result.barriers[::-1].copy())


class TestOrdering:
    def test_highest_barrier_claims_most(self, coarse_table1):
        model, result = coarse_table1
        record = check_ordering(model, result)
        assert record.status is CheckStatus.passed
        assert "phases {2}" in record.detail

    def test_swapped_barriers_fail(self, coarse_table1):
        model, result = coarse_table1
        record = check_ordering(model, swapped(result))
        assert record.status is CheckStatus.failed
        assert record.phase == 1

    def test_single_phase_skipped(self):
        model = one_phase_model()
        result = solve(model, SolverConfig(grid=Grid.from_spacing(0.05, 25.0)))
        assert check_ordering(model, result).status is CheckStatus.skipped

    def test_three_phases(self, three_phase):
        model, result = three_phase
        record = check_ordering(model, result)
        assert record.status is CheckStatus.passed
        assert int(np.argmax(result.barriers)) == 1


class TestTwoPhaseChecks:
    def test_intensity_ordering(self, coarse_table1):
        model, result = coarse_table1
        assert check_two_phase_intensity_ordering(model, result).status is CheckStatus.passed

    def test_intensity_ordering_notes_zero_barrier(self, coarse_table1):
        model, result = coarse_table1
        record = check_two_phase_intensity_ordering(
            model, replace(result, barriers=np.array([0.0, 12.2]))
        )
        assert record.status is CheckStatus.passed
        assert "is 0" in record.reason

    def test_time_ordering(self, coarse_table1):
        model, result = coarse_table1
        record = check_time_ordering(model, result)
        assert record.status is CheckStatus.passed
        assert "0.1700" in record.detail and "0.1400" in record.detail

    def test_time_ordering_catches_swap(self, coarse_table1):
        model, result = coarse_table1
        assert check_time_ordering(model, swapped(result)).status is CheckStatus.failed

    def test_tied_barriers(self, coarse_table1):
        model, result = coarse_table1
        tied = replace(result, barriers=np.array([12.0, 12.01]))
        assert check_time_ordering(model, tied).status is CheckStatus.passed
        assert check_concavity_2order(model, tied).status is CheckStatus.skipped

    def test_skipped_for_three_phases(self, three_phase):
        model, result = three_phase
        for check in (
            check_two_phase_intensity_ordering,
            check_time_ordering,
            check_concavity_2order,
        ):
            record = check(model, result)
            assert record.status is CheckStatus.skipped
            assert record.reason


class TestSolutionChecks:
    def test_exit_slope_identity(self, coarse_table1):
        model, result = coarse_table1
        record = check_exit_slope_identity(model, result)
        assert record.status is CheckStatus.passed
        assert record.x == result.barriers[1]

    def test_smooth_fit(self, coarse_table1):
        model, result = coarse_table1
        assert check_smooth_fit(model, result).status is CheckStatus.passed

    def test_smooth_fit_fails_on_zero_iterate(self, coarse_table1):
        model, result = coarse_table1
        record = check_smooth_fit(model, zero_iterate(result))
        assert record.status is CheckStatus.failed
        assert record.measured == pytest.approx(1.0)

    def test_upper_bound(self, coarse_table1):
        model, result = coarse_table1
        assert check_value_upper_bound(model, result).status is CheckStatus.passed

    def test_tightened_tolerance(self, coarse_table1):
        model, result = coarse_table1
        record = check_smooth_fit(model, result, Tolerances(smooth_fit=0.0))
        assert record.status is CheckStatus.failed

    def test_hjb_checks_measure_converged_solve(self, coarse_table1):
        model, result = coarse_table1
        report = verify_all(model, result)
        for name in ("hjb_below_barrier", "hjb_above_barrier"):
            record = report.get(name)
            assert record.status is not CheckStatus.skipped
            assert np.isfinite(record.measured)
            assert record.phase in (1, 2)

    def test_concavity_covers_barrier(self, coarse_table1):
        model, result = coarse_table1
        grid = result.grid
        k = grid.index_of(result.barriers[1])
        values = result.values[1].values.copy()
        values[k:] += 0.05
        kinked = ValueFunction(grid, values, result.values[1].tail_anchor)
        record = check_concavity_2order(
            model, replace(result, values=(result.values[0], kinked))
        )
        assert record.status is CheckStatus.failed
        assert record.measured == pytest.approx(0.05 / grid.h**2, rel=0.1)

    def test_perturbation_breaks_hjb(self, coarse_table1):
        model, result = coarse_table1
        report = verify_all(model, perturb(result))
        assert report.get("hjb_below_barrier").status is CheckStatus.failed
        assert report.get("hjb_below_barrier").phase == 2
        assert not report.ok


class TestReport:
    def test_lists_every_check(self, coarse_table1):
        model, result = coarse_table1
        report = verify_all(model, result)
        names = [c.name for c in report.checks]
        assert len(names) == len(set(names)) == 12
        assert "value_lower_bound_below_barrier" in names

    def test_deterministic(self, coarse_table1):
        model, result = coarse_table1
        assert verify_all(model, result).to_dict() == verify_all(model, result).to_dict()

    def test_any_failure_fails_report(self):
        report = VerificationReport(
            (
                CheckRecord("a", CheckStatus.passed),
                CheckRecord("b", CheckStatus.skipped),
                CheckRecord("c", CheckStatus.failed, measured=2.0, tolerance=1.0),
            )
        )
        assert report.status is CheckStatus.failed
        assert "overall: FAIL" in report.render()

    def test_json(self):
        report = VerificationReport(
            (CheckRecord("a", CheckStatus.passed, measured=float("-inf"), tolerance=1e-3),)
        )
        data = json.loads(report.to_json())
        assert data["schema_version"] == SCHEMA_VERSION
        assert data["status"] == "PASS"
        assert data["checks"][0]["measured"] is None
        assert data["checks"][0]["status"] == "PASS"

    def test_unknown_check(self):
        with pytest.raises(KeyError):
            VerificationReport().get("nope")
