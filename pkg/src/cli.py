#!/usr/bin/env python3
"""Command line for the phase-wise dividend barrier solver.

Subcommands:
    solve       compute the optimal barriers and value functions of a model spec
    verify      solve, then run every optimality check on the result
    simulate    Monte Carlo estimate of the value of a barrier strategy
    reproduce   rerun the shipped golden specs and compare their barriers

Phases are numbered from 1 on the command line and in every printed table.

Exit codes: 0 success, 1 failed verification or golden comparison, 2 invalid
input (the message names the offending field), 3 solver failure.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml
from numpy.typing import NDArray

from phase_type import PhaseTypeError, RestartNotProbability, validate
from simulator import SimConfig, estimate_value
from solver import (
    RiskModel,
    SolveResult,
    SolverConfig,
    SolverError,
    evaluate_barriers,
    solve,
)
from valuefn import DEFAULT_SPACING, DEFAULT_X_MAX, Grid
from verifier import SCHEMA_VERSION, perturb, verify_all, zero_iterate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_SOLVER = 3

SPECS_DIR = Path(__file__).resolve().parent.parent / "specs"
GOLDEN_TABLES = tuple(range(1, 8))
GOLDEN_TOLERANCE = 0.02

_SOLVER_KEYS = {"h", "x_max", "tol", "max_iters", "domain_growth"}


class ModelSpecError(ValueError):
    """A model spec file is unreadable or has an invalid field."""

    def __init__(self, source: str, field: Optional[str], message: str):
        where = f"{source}: field '{field}'" if field else source
        super().__init__(f"{where}: {message}")
        self.source = source
        self.field = field


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A parsed model spec: the risk model plus solver settings and golden barriers."""

    name: str
    model: RiskModel
    solver: SolverConfig
    expected_barriers: Optional[NDArray[np.float64]] = None


def _number(data: Dict, key: str, source: str) -> float:
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelSpecError(source, key, f"expected a number, got {value!r}")
    return float(value)


def _vector(value: Any, length: int, field: str, source: str) -> NDArray[np.float64]:
    if not isinstance(value, list) or len(value) != length:
        raise ModelSpecError(source, field, f"expected a list of {length} numbers, got {value!r}")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise ModelSpecError(source, field, f"expected numbers, got {value!r}")
    return np.array(value, dtype=float)


def _solver_config(section: Any, source: str) -> SolverConfig:
    if section is None:
        return SolverConfig()
    if not isinstance(section, dict):
        raise ModelSpecError(source, "solver", "expected a mapping")
    unknown = set(section) - _SOLVER_KEYS
    if unknown:
        raise ModelSpecError(source, "solver", f"unknown keys {sorted(unknown)}")
    for key in section:
        _number(section, key, f"{source}: solver")
    try:
        grid = Grid.from_spacing(
            float(section.get("h", DEFAULT_SPACING)), float(section.get("x_max", DEFAULT_X_MAX))
        )
        defaults = SolverConfig()
        return SolverConfig(
            grid=grid,
            tol=float(section.get("tol", defaults.tol)),
            max_iters=int(section.get("max_iters", defaults.max_iters)),
            domain_growth=float(section.get("domain_growth", defaults.domain_growth)),
        )
    except (ValueError, ZeroDivisionError) as e:
        raise ModelSpecError(source, "solver", str(e)) from e


def parse_spec(data: Any, source: str = "<spec>") -> ModelSpec:
    """Turn the mapping loaded from a spec file into a `ModelSpec`.

    Raises:
        ModelSpecError: naming the first invalid field.
    """
    if not isinstance(data, dict):
        raise ModelSpecError(source, None, "expected a mapping at the top level")
    for key in ("n", "T", "pi", "c", "delta", "beta"):
        if key not in data:
            raise ModelSpecError(source, key, "missing")
    n = data["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ModelSpecError(source, "n", f"expected a positive integer, got {n!r}")
    rows = data["T"]
    if not isinstance(rows, list) or len(rows) != n:
        raise ModelSpecError(source, "T", f"expected {n} rows, got {rows!r}")
    T = np.vstack([_vector(row, n, "T", source) for row in rows])
    pi = _vector(data["pi"], n, "pi", source)
    rates = {}
    for key in ("c", "delta", "beta"):
        rates[key] = _number(data, key, source)
        if not rates[key] > 0:
            raise ModelSpecError(source, key, f"must be strictly positive, got {rates[key]}")
    try:
        env = validate(T, pi)
    except RestartNotProbability as e:
        raise ModelSpecError(source, "pi", str(e)) from e
    except PhaseTypeError as e:
        raise ModelSpecError(source, "T", str(e)) from e

    expected = data.get("expected_barriers")
    if expected is not None:
        expected = _vector(expected, n, "expected_barriers", source)
    return ModelSpec(
        name=str(data.get("name", Path(source).stem)),
        model=RiskModel(env=env, **rates),
        solver=_solver_config(data.get("solver"), source),
        expected_barriers=expected,
    )


def load_spec(path: Path) -> ModelSpec:
    """Read and parse a YAML model spec."""
    source = str(path)
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as e:
        raise ModelSpecError(source, None, f"cannot read: {e.strerror}") from e
    except yaml.YAMLError as e:
        raise ModelSpecError(source, None, f"invalid YAML: {e}") from e
    return parse_spec(data, source)


def golden_spec_path(table: int) -> Path:
    """Path of the shipped spec for golden table `table`."""
    return SPECS_DIR / f"table{table}.yaml"


def write_csv(result: SolveResult, path: Path) -> None:
    """Write x, V_1..V_n, V_{n+1} at every grid point, at full float precision."""
    functions = result.functions
    n = len(result.values)
    columns = np.vstack([result.grid.points] + [f.values for f in functions]).T
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x"] + [f"V_{i}" for i in range(1, n + 2)])
        for row in columns:
            writer.writerow([repr(float(v)) for v in row])
    logger.info("wrote %d rows to %s", len(columns), path)


def _config_from_args(spec: ModelSpec, args: argparse.Namespace) -> SolverConfig:
    cfg = spec.solver
    h = args.h if args.h is not None else cfg.grid.h
    x_max = args.xmax if args.xmax is not None else cfg.grid.x_max
    return SolverConfig(
        grid=Grid.from_spacing(h, x_max),
        tol=args.tol if args.tol is not None else cfg.tol,
        max_iters=cfg.max_iters,
        domain_growth=cfg.domain_growth,
    )


def _solve_summary(spec: ModelSpec, result: SolveResult) -> Dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "barriers": result.refined_barriers.tolist(),
        "grid_barriers": result.barriers.tolist(),
        "values_at_zero": [float(f.values[0]) for f in result.values],
        "iterations": result.iterations,
        "final_sup_diff": result.final_sup_diff,
        "regrowths": result.regrowths,
        "h": result.grid.h,
        "x_max": result.grid.x_max,
    }


def _emit(text: str, out: Optional[Path]) -> None:
    print(text)
    if out is not None:
        Path(out).write_text(text + "\n")


def cmd_solve(args: argparse.Namespace) -> int:
    """Solve a spec and print its barriers, optionally exporting the values as CSV."""
    spec = load_spec(args.spec)
    result = solve(spec.model, _config_from_args(spec, args))
    if args.csv:
        write_csv(result, args.csv)
    if args.format == "structured":
        _emit(json.dumps(_solve_summary(spec, result), indent=2), args.out)
        return EXIT_OK
    lines = [f"model: {spec.name} ({spec.model.env.n} phases)"]
    for i, (b, grid_b, f) in enumerate(
        zip(result.refined_barriers, result.barriers, result.values), start=1
    ):
        lines.append(f"{i}: {b:.3f}  (grid {grid_b:.3f})  V(0)={f.values[0]:.6f}")
    lines.append(f"iterations: {result.iterations}")
    lines.append(f"final sup diff: {result.final_sup_diff:.3e}")
    if result.regrowths:
        lines.append(f"domain regrown {result.regrowths} times to x_max={result.grid.x_max:g}")
    _emit("\n".join(lines), args.out)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    """Solve a spec and certify the result."""
    spec = load_spec(args.spec)
    result = solve(spec.model, _config_from_args(spec, args))
    if args.fault == "perturb":
        result = perturb(result)
    elif args.fault == "zero":
        result = zero_iterate(result)
    report = verify_all(spec.model, result)
    if args.format == "structured":
        _emit(report.to_json(), args.out)
    else:
        _emit(f"model: {spec.name}\n{report.render()}", args.out)
    return EXIT_OK if report.ok else EXIT_FAILED


def _parse_barriers(raw: str, n: int) -> NDArray[np.float64]:
    try:
        barriers = np.array([float(b) for b in raw.split(",")])
    except ValueError as e:
        raise ModelSpecError("--barriers", "barriers", f"cannot parse {raw!r}") from e
    if barriers.size != n:
        raise ModelSpecError("--barriers", "barriers", f"expected {n} values, got {barriers.size}")
    return barriers


def cmd_simulate(args: argparse.Namespace) -> int:
    """Estimate the value of the solved (or given) barriers by Monte Carlo."""
    spec = load_spec(args.spec)
    model = spec.model
    phase = args.phase - 1
    if not 0 <= phase < model.env.n:
        raise ModelSpecError("--phase", "phase", f"must be in 1..{model.env.n}, got {args.phase}")
    reference: Optional[SolveResult] = None
    if args.barriers:
        barriers = _parse_barriers(args.barriers, model.env.n)
        if args.compare_solver:
            reference = evaluate_barriers(model, barriers, _config_from_args(spec, args))
    else:
        reference = solve(model, _config_from_args(spec, args))
        barriers = reference.refined_barriers
    cfg = SimConfig(
        paths=args.paths,
        horizon=args.horizon,
        seed=args.seed,
        antithetic=args.antithetic,
        threads=args.threads,
    )
    estimate = estimate_value(model, barriers, args.x0, phase, cfg)
    summary: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "barriers": [float(b) for b in barriers],
        "x0": args.x0,
        "phase": args.phase,
        "mean": estimate.mean,
        "stderr": estimate.stderr,
        "paths": estimate.paths,
        "seed": estimate.seed,
        "horizon": estimate.horizon,
        "truncation_bound": estimate.truncation_bound,
    }
    if args.compare_solver and reference is not None:
        value = float(reference.values[phase].eval(args.x0))
        summary["solver_value"] = value
        summary["z"] = (estimate.mean - value) / estimate.stderr if estimate.stderr > 0 else None
    if args.format == "structured":
        _emit(json.dumps(summary, indent=2), args.out)
        return EXIT_OK
    barriers_text = ", ".join(f"{b:.3f}" for b in summary["barriers"])
    lines = [
        f"model: {spec.name}  barriers: ({barriers_text})  x0={args.x0}  phase={args.phase}",
        f"mean: {estimate.mean!r} +/- {estimate.stderr:.6f}",
        f"paths: {estimate.paths}  seed: {estimate.seed}  horizon: {estimate.horizon:.2f}",
        f"truncation bound: {estimate.truncation_bound:.3e}",
    ]
    if "solver_value" in summary:
        z = summary["z"]
        lines.append(
            f"solver value: {summary['solver_value']:.6f}  z: {'n/a' if z is None else f'{z:.3f}'}"
        )
    _emit("\n".join(lines), args.out)
    return EXIT_OK


def _reproduce_table(table: int) -> bool:
    spec = load_spec(golden_spec_path(table))
    if spec.expected_barriers is None:
        raise ModelSpecError(str(golden_spec_path(table)), "expected_barriers", "missing")
    result = solve(spec.model, spec.solver)
    diff = result.refined_barriers - spec.expected_barriers
    ok = bool(np.all(np.abs(diff) <= GOLDEN_TOLERANCE))
    print(f"table {table}: {'PASS' if ok else 'FAIL'}")
    print(f"{'phase':<7}{'expected':>10}{'computed':>10}{'diff':>9}")
    for i, (want, got, d) in enumerate(
        zip(spec.expected_barriers, result.refined_barriers, diff), start=1
    ):
        print(f"{i:<7}{want:>10.3f}{got:>10.3f}{d:>+9.3f}")
    return ok


def cmd_reproduce(args: argparse.Namespace) -> int:
    """Reproduce one golden table, or all of them."""
    tables: Sequence[int] = GOLDEN_TABLES if args.table == "all" else (int(args.table),)
    results = [_reproduce_table(t) for t in tables]
    return EXIT_OK if all(results) else EXIT_FAILED


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("spec", type=Path, help="YAML model spec")
    parser.add_argument("--h", type=float, help="grid spacing (overrides the spec file)")
    parser.add_argument("--xmax", type=float, help="initial domain end (overrides the spec file)")
    parser.add_argument("--tol", type=float, help="sup-norm stopping tolerance")
    parser.add_argument(
        "--format", choices=("text", "structured"), default="text", help="output format"
    )
    parser.add_argument("--out", type=Path, help="also write the output to this file")


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with all subcommands."""
    parser = argparse.ArgumentParser(
        prog="phase-barrier",
        description="Optimal phase-wise dividend barriers for phase-type renewal risk models.",
    )
    parser.add_argument("--verbose", action="store_true", help="log debug output to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="compute optimal barriers and value functions")
    _add_solver_flags(p_solve)
    p_solve.add_argument("--csv", type=Path, help="write x, V_1..V_n+1 to this CSV file")
    p_solve.set_defaults(func=cmd_solve)

    p_verify = sub.add_parser("verify", help="solve and check optimality conditions")
    _add_solver_flags(p_verify)
    p_verify.add_argument(
        "--fault", choices=("perturb", "zero"), help="corrupt the result before checking"
    )
    p_verify.set_defaults(func=cmd_verify)

    p_sim = sub.add_parser("simulate", help="Monte Carlo value of a barrier strategy")
    _add_solver_flags(p_sim)
    p_sim.add_argument("--barriers", help="comma-separated barriers; solved when omitted")
    p_sim.add_argument("--x0", type=float, default=0.0, help="initial wealth")
    p_sim.add_argument("--phase", type=int, default=1, help="initial phase, 1-based")
    p_sim.add_argument("--paths", type=int, default=SimConfig.paths, help="number of paths")
    p_sim.add_argument("--seed", type=int, default=0, help="base seed")
    p_sim.add_argument("--horizon", type=float, help="time horizon; default bounds bias by 1e-4")
    p_sim.add_argument("--antithetic", action="store_true", help="antithetic claim sizes")
    p_sim.add_argument("--threads", type=int, help="worker threads (PHASE_BARRIER_THREADS)")
    p_sim.add_argument(
        "--compare-solver", action="store_true", help="print the solver value and z-score"
    )
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("reproduce", help="rerun a golden table")
    p_rep.add_argument(
        "table", choices=[str(t) for t in GOLDEN_TABLES] + ["all"], help="table id or 'all'"
    )
    p_rep.set_defaults(func=cmd_reproduce)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run the command line and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except SolverError as e:
        logger.error("solver failed: %s", e)
        return EXIT_SOLVER
    except ValueError as e:
        logger.error("%s", e)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
