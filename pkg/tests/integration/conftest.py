import logging
import time
from typing import Callable, Dict, Tuple

import pytest

from cli import ModelSpec, golden_spec_path, load_spec
from solver import SolveResult, solve

logger = logging.getLogger(__name__)

Golden = Callable[[int], Tuple[ModelSpec, SolveResult]]


@pytest.fixture(scope="session")
def golden() -> Golden:
    """Solve a shipped golden spec at its own grid settings, once per session."""
    cache: Dict[int, Tuple[ModelSpec, SolveResult]] = {}

    def _solve(table: int) -> Tuple[ModelSpec, SolveResult]:
        if table not in cache:
            spec = load_spec(golden_spec_path(table))
            started = time.monotonic()
            result = solve(spec.model, spec.solver)
            logger.info(
                "solved %s in %.1fs (%d iterations)",
                spec.name,
                time.monotonic() - started,
                result.iterations,
            )
            cache[table] = (spec, result)
        return cache[table]

    return _solve
