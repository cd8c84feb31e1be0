"""Monte Carlo estimate of the discounted dividends of a phase-wise barrier strategy.

Paths are simulated event by event with closed-form discounting, so the only
errors are sampling noise and the horizon cut-off. Path `p` draws from its
own generator seeded with `SeedSequence([seed, p])` and spends exactly four
uniforms per environment event (holding time, jump target, claim size,
restart phase). Outcomes therefore depend neither on how paths are split
into blocks and threads nor on the starting wealth.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from phase_type import CLAIM, restart_from_uniforms, transitions_from_uniforms
from solver import RiskModel

logger = logging.getLogger(__name__)

THREADS_ENV = "PHASE_BARRIER_THREADS"
DEFAULT_TRUNCATION_BOUND = 1e-4

# Events drawn per refill of a path's uniform buffer.
_REFILL = 64
# Fraction of the requested truncation bound that default horizons aim at.
_HORIZON_MARGIN = 1 - 1e-9


def threads_from_env() -> int:
    """Worker thread count from PHASE_BARRIER_THREADS, 1 when unset."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        threads = int(raw)
    except ValueError as e:
        raise ValueError(f"{THREADS_ENV}={raw!r} is not an integer") from e
    if threads < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {threads}")
    return threads


@dataclass(frozen=True)
class SimConfig:
    """Path count, horizon and seeding of a Monte Carlo run.

    A `horizon` of None picks `default_horizon`; `threads` of None reads
    PHASE_BARRIER_THREADS.
    """

    paths: int = 100_000
    horizon: Optional[float] = None
    seed: int = 0
    antithetic: bool = False
    threads: Optional[int] = None
    block: int = 8192

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError(f"paths must be >= 1, got {self.paths}")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.antithetic and self.paths % 2:
            raise ValueError(f"antithetic runs need an even number of paths, got {self.paths}")
        if self.threads is not None and self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")
        if self.block < 1:
            raise ValueError(f"block must be >= 1, got {self.block}")


@dataclass(frozen=True)
class SimEstimate:
    """Sample mean and standard error of the discounted dividends."""

    mean: float
    stderr: float
    paths: int
    truncation_bound: float
    seed: int
    horizon: float


def truncation_bound(model: RiskModel, x0: float, horizon: float) -> float:
    """Upper bound e^{-delta H} (x0 + c / delta) on dividends paid after the horizon."""
    return float(np.exp(-model.delta * horizon) * (x0 + model.c / model.delta))


def default_horizon(model: RiskModel, x0: float, bound: float = DEFAULT_TRUNCATION_BOUND) -> float:
    """A horizon whose truncation bound is strictly below `bound`."""
    if not bound > 0:
        raise ValueError(f"bound must be positive, got {bound}")
    ratio = (x0 + model.c / model.delta) / (bound * _HORIZON_MARGIN)
    # Below one the bound holds at any horizon; keep one mean discount time.
    return float(np.log(ratio) / model.delta) if ratio > 1 else 1.0 / model.delta


def _check_inputs(
    model: RiskModel, barriers: ArrayLike, x0: float, phase0: int
) -> NDArray[np.float64]:
    levels = np.asarray(barriers, dtype=float)
    if levels.shape != (model.env.n,):
        raise ValueError(f"expected {model.env.n} barriers, got {levels.size}")
    if np.any(levels < 0) or not np.all(np.isfinite(levels)):
        raise ValueError(f"barriers must be finite and nonnegative, got {levels.tolist()}")
    if not x0 >= 0:
        raise ValueError(f"x0 must be >= 0, got {x0}")
    if not 0 <= phase0 < model.env.n:
        raise IndexError(f"phase {phase0 + 1} is out of range 1..{model.env.n}")
    return levels


def _run_paths(
    model: RiskModel,
    barriers: NDArray[np.float64],
    x0: float,
    phase0: int,
    horizon: float,
    streams: Sequence[np.random.Generator],
    reflect: NDArray[np.bool_],
) -> NDArray[np.float64]:
    """Discounted dividend totals of one path per stream, all advanced in lockstep."""
    env = model.env
    c, delta, beta = model.c, model.delta, model.beta
    size = len(streams)
    wealth = np.full(size, float(x0))
    phase = np.full(size, phase0, dtype=np.int64)
    now = np.zeros(size)
    paid = np.zeros(size)
    active = np.arange(size)
    uniforms = np.empty((size, _REFILL, 4))
    cursor = _REFILL
    while active.size:
        if cursor == _REFILL:
            for p in active:
                uniforms[p] = streams[p].random((_REFILL, 4))
            cursor = 0
        u = uniforms[active, cursor]
        cursor += 1
        w, ph, s = wealth[active], phase[active], now[active]
        b = barriers[ph]

        # Entering a phase above its barrier pays the excess at once.
        discount = np.exp(-delta * s)
        paid[active] += discount * np.maximum(w - b, 0.0)
        w = np.minimum(w, b)

        holding, target = transitions_from_uniforms(env, ph, u[:, 0], u[:, 1])
        end = np.minimum(s + holding, horizon)
        hit = s + (b - w) / c
        at_barrier = hit < end
        paid[active] += np.where(
            at_barrier,
            c * (np.exp(-delta * np.minimum(hit, end)) - np.exp(-delta * end)) / delta,
            0.0,
        )
        w = np.where(at_barrier, b, w + c * (end - s))

        expired = s + holding >= horizon
        claim = ~expired & (target == CLAIM)
        u_claim = np.where(reflect[active], 1.0 - u[:, 2], u[:, 2])
        with np.errstate(divide="ignore"):
            loss = -np.log1p(-u_claim) / beta
        w = np.where(claim, w - loss, w)
        ruined = claim & (w < 0)
        next_phase = np.where(
            claim, restart_from_uniforms(env, u[:, 3]), np.where(expired, ph, target)
        )

        wealth[active], phase[active], now[active] = w, next_phase, end
        active = active[~(expired | ruined)]
    return paid


def simulate_path(
    model: RiskModel,
    barriers: ArrayLike,
    x0: float,
    phase0: int,
    horizon: float,
    rng: np.random.Generator,
) -> float:
    """Discounted dividends of a single path up to ruin or `horizon`.

    `phase0` is 0-based.
    """
    levels = _check_inputs(model, barriers, x0, phase0)
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    totals = _run_paths(model, levels, x0, phase0, horizon, [rng], np.zeros(1, dtype=bool))
    return float(totals[0])


def _simulate_block(
    model: RiskModel,
    barriers: NDArray[np.float64],
    x0: float,
    phase0: int,
    horizon: float,
    cfg: SimConfig,
    start: int,
    stop: int,
) -> NDArray[np.float64]:
    paths = np.arange(start, stop)
    if cfg.antithetic:
        keys, reflect = paths // 2, paths % 2 == 1
    else:
        keys, reflect = paths, np.zeros(paths.size, dtype=bool)
    streams = [np.random.default_rng(np.random.SeedSequence([cfg.seed, int(k)])) for k in keys]
    return _run_paths(model, barriers, x0, phase0, horizon, streams, reflect)


def estimate_value(
    model: RiskModel, barriers: ArrayLike, x0: float, phase0: int, cfg: SimConfig
) -> SimEstimate:
    """Mean discounted dividends over `cfg.paths` paths started in `phase0` (0-based).

    With `cfg.antithetic`, paths 2k and 2k+1 share a stream with reflected
    claim-size uniforms and the standard error is taken over pair means.
    """
    levels = _check_inputs(model, barriers, x0, phase0)
    horizon = cfg.horizon if cfg.horizon is not None else default_horizon(model, x0)
    threads = cfg.threads or threads_from_env()
    bounds = [(s, min(s + cfg.block, cfg.paths)) for s in range(0, cfg.paths, cfg.block)]
    logger.info(
        "simulating %d paths to horizon %.1f in %d blocks on %d threads",
        cfg.paths,
        horizon,
        len(bounds),
        threads,
    )
    with ThreadPoolExecutor(max_workers=threads) as pool:
        blocks: List[NDArray[np.float64]] = list(
            pool.map(
                lambda r: _simulate_block(model, levels, x0, phase0, horizon, cfg, *r), bounds
            )
        )
    totals = np.concatenate(blocks)
    samples = totals.reshape(-1, 2).mean(axis=1) if cfg.antithetic else totals
    stderr = float(samples.std(ddof=1) / np.sqrt(samples.size)) if samples.size > 1 else 0.0
    return SimEstimate(
        mean=float(totals.mean()),
        stderr=stderr,
        paths=cfg.paths,
        truncation_bound=truncation_bound(model, x0, horizon),
        seed=cfg.seed,
        horizon=horizon,
    )
