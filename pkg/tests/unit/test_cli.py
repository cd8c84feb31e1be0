"""Unit tests for the command line, run in-process on coarse grids."""

import csv
import json

import numpy as np
import pytest
import yaml

from cli import (
    EXIT_BAD_INPUT,
    EXIT_FAILED,
    EXIT_OK,
    EXIT_SOLVER,
    ModelSpecError,
    golden_spec_path,
    load_spec,
    main,
    parse_spec,
)
from solver import SolverConfig, solve
from valuefn import Grid

COARSE = ["--h", "0.05", "--xmax", "20"]
TABLE1_T = [[-10.0, 5.0], [4.0, -12.0]]
TABLE1_PI = [0.4, 0.6]


def table1_data(**overrides):
    data = {
        "name": "table1",
        "n": 2,
        "T": TABLE1_T,
        "pi": TABLE1_PI,
        "c": 15,
        "delta": 0.1,
        "beta": 1,
    }
    data.update(overrides)
    return data


@pytest.fixture
def write_spec(tmp_path):
    def _write(data, name="model.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data))
        return str(path)

    return _write


class TestParseSpec:
    def test_valid(self):
        spec = parse_spec(table1_data(solver={"h": 0.01, "x_max": 15}))
        assert spec.name == "table1"
        assert spec.model.env.n == 2
        assert spec.solver.grid.h == pytest.approx(0.01)
        assert spec.expected_barriers is None

    def test_solver_defaults(self):
        spec = parse_spec(table1_data())
        assert spec.solver.grid.h == pytest.approx(SolverConfig().grid.h)

    @pytest.mark.parametrize(
        "overrides,field",
        [
            ({"pi": [0.6, 0.6]}, "pi"),
            ({"pi": [1.0]}, "pi"),
            ({"T": [[-10, 5]]}, "T"),
            ({"T": [[-10, -5], [4, -12]]}, "T"),
            ({"T": [[10, 5], [4, -12]]}, "T"),
            ({"c": 0}, "c"),
            ({"delta": "fast"}, "delta"),
            ({"n": 0}, "n"),
            ({"solver": {"h": 0.01, "grid": 3}}, "solver"),
            ({"expected_barriers": [1.0]}, "expected_barriers"),
        ],
    )
    def test_names_offending_field(self, overrides, field):
        with pytest.raises(ModelSpecError, match=f"field '{field}'") as e:
            parse_spec(table1_data(**overrides), "model.yaml")
        assert e.value.field == field

    def test_missing_field(self):
        data = table1_data()
        del data["beta"]
        with pytest.raises(ModelSpecError, match="field 'beta': missing"):
            parse_spec(data)

    def test_not_a_mapping(self):
        with pytest.raises(ModelSpecError, match="mapping"):
            parse_spec([1, 2, 3])


class TestLoadSpec:
    def test_golden_specs_load(self):
        for table in range(1, 8):
            spec = load_spec(golden_spec_path(table))
            assert spec.expected_barriers is not None
            assert spec.expected_barriers.shape == (spec.model.env.n,)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelSpecError, match="cannot read"):
            load_spec(tmp_path / "nope.yaml")

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("n: [2\n")
        with pytest.raises(ModelSpecError, match="invalid YAML"):
            load_spec(path)


class TestSolveCommand:
    def test_text_output(self, write_spec, capsys):
        assert main(["solve", write_spec(table1_data()), *COARSE]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("model: table1 (2 phases)")
        assert "\n1: " in out and "\n2: " in out
        assert "iterations:" in out

    def test_structured_output(self, write_spec, capsys, tmp_path):
        out_file = tmp_path / "summary.json"
        args = ["solve", write_spec(table1_data()), *COARSE, "--format", "structured"]
        code = main([*args, "--out", str(out_file)])
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["schema_version"] == 1
        assert len(summary["barriers"]) == 2
        assert summary["h"] == pytest.approx(0.05)
        assert json.loads(out_file.read_text()) == summary

    def test_csv_matches_solver(self, write_spec, tmp_path):
        spec_path = write_spec(table1_data())
        csv_path = tmp_path / "values.csv"
        assert main(["solve", spec_path, *COARSE, "--csv", str(csv_path)]) == EXIT_OK

        with open(csv_path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["x", "V_1", "V_2", "V_3"]
        table = np.array(rows[1:], dtype=float)

        spec = load_spec(spec_path)
        result = solve(spec.model, SolverConfig(grid=Grid.from_spacing(0.05, 20.0)))
        assert table.shape == (result.grid.m + 1, 4)
        np.testing.assert_array_equal(table[:, 0], result.grid.points)
        for column, f in enumerate(result.functions, start=1):
            np.testing.assert_array_equal(table[:, column], f.values)

    def test_invalid_pi(self, write_spec, caplog):
        code = main(["solve", write_spec(table1_data(pi=[0.6, 0.6])), *COARSE])
        assert code == EXIT_BAD_INPUT
        assert "field 'pi'" in caplog.text

    def test_missing_field(self, write_spec, caplog):
        data = table1_data()
        del data["c"]
        assert main(["solve", write_spec(data), *COARSE]) == EXIT_BAD_INPUT
        assert "field 'c'" in caplog.text

    def test_solver_failure(self, write_spec, caplog):
        data = table1_data(solver={"h": 0.05, "x_max": 20, "max_iters": 3})
        assert main(["solve", write_spec(data)]) == EXIT_SOLVER
        assert "solver failed" in caplog.text


class TestVerifyCommand:
    def test_fault_fails(self, write_spec, capsys):
        args = ["verify", write_spec(table1_data()), *COARSE, "--fault", "perturb"]
        code = main([*args, "--format", "structured"])
        assert code == EXIT_FAILED
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "FAIL"
        assert {c["name"] for c in report["checks"] if c["status"] == "FAIL"} >= {
            "hjb_below_barrier"
        }

    def test_converged_solve_is_not_bad_input(self, write_spec, capsys):
        code = main(["verify", write_spec(table1_data()), *COARSE, "--format", "structured"])
        assert code in (EXIT_OK, EXIT_FAILED)
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == ("PASS" if code == EXIT_OK else "FAIL")
        names = {c["name"] for c in report["checks"]}
        assert {"hjb_below_barrier", "hjb_above_barrier"} <= names

    def test_text_report(self, write_spec, capsys):
        main(["verify", write_spec(table1_data()), *COARSE])
        out = capsys.readouterr().out
        assert "smooth_fit" in out
        assert "overall:" in out


class TestSimulateCommand:
    def simulate(self, spec_path, *extra):
        args = ["simulate", spec_path, "--barriers", "11.779,12.219", "--x0", "5"]
        return main([*args, "--format", "structured", *extra])

    def test_reproducible(self, write_spec, capsys):
        spec_path = write_spec(table1_data())
        assert self.simulate(spec_path, "--paths", "1", "--seed", "5") == EXIT_OK
        first = json.loads(capsys.readouterr().out)
        assert self.simulate(spec_path, "--paths", "1", "--seed", "5") == EXIT_OK
        second = json.loads(capsys.readouterr().out)
        assert first == second
        assert first["paths"] == 1
        assert first["truncation_bound"] == pytest.approx(1e-4)

    def test_threads_do_not_change_result(self, write_spec, capsys):
        spec_path = write_spec(table1_data())
        self.simulate(spec_path, "--paths", "50", "--threads", "1")
        single = json.loads(capsys.readouterr().out)
        self.simulate(spec_path, "--paths", "50", "--threads", "4")
        multi = json.loads(capsys.readouterr().out)
        assert single["mean"] == multi["mean"]

    def test_odd_antithetic(self, write_spec, caplog):
        code = self.simulate(write_spec(table1_data()), "--paths", "3", "--antithetic")
        assert code == EXIT_BAD_INPUT
        assert "even" in caplog.text

    def test_bad_phase(self, write_spec, caplog):
        code = self.simulate(write_spec(table1_data()), "--paths", "2", "--phase", "3")
        assert code == EXIT_BAD_INPUT
        assert "field 'phase'" in caplog.text

    def test_wrong_barrier_count(self, write_spec, caplog):
        code = main(["simulate", write_spec(table1_data()), "--barriers", "1.0", "--paths", "2"])
        assert code == EXIT_BAD_INPUT
        assert "field 'barriers'" in caplog.text

    def test_compare_solver(self, write_spec, capsys):
        spec_path = write_spec(table1_data())
        code = self.simulate(spec_path, *COARSE, "--paths", "20", "--compare-solver")
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["solver_value"] > 0
        assert "z" in summary


class TestArguments:
    def test_unknown_table(self):
        with pytest.raises(SystemExit) as e:
            main(["reproduce", "9"])
        assert e.value.code == 2

    def test_command_required(self):
        with pytest.raises(SystemExit):
            main([])
