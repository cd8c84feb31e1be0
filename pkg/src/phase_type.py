"""Terminating Markov environment driving the interclaim times.

The environment chain J lives on the transient phases 0..n-1 (0-based here,
1-based in anything printed for a user). Absorption in the extra state is a
claim; after a claim the chain restarts from the distribution `pi`.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

# Marker returned by the samplers for an absorption (claim) transition.
CLAIM = -1

PROBABILITY_TOLERANCE = 1e-12


class PhaseTypeError(ValueError):
    """Base class for invalid environment chains."""


class NegativeOffDiagonal(PhaseTypeError):
    """An off-diagonal transition rate is negative."""


class PositiveDiagonal(PhaseTypeError):
    """A diagonal entry is not strictly negative."""


class NegativeExitRate(PhaseTypeError):
    """A row of T sums to a positive number, so t = -T e has a negative entry."""


class RestartNotProbability(PhaseTypeError):
    """The restart vector pi is not a probability vector."""


class SingularSubintensity(PhaseTypeError):
    """T is not invertible, or no phase can ever reach a claim."""


@dataclass(frozen=True, eq=False)
class PhaseTypeModel:
    """A validated subintensity matrix with its restart and exit vectors.

    Build instances with `validate`; the arrays are made read-only so a model
    can be shared freely between threads.
    """

    T: NDArray[np.float64]
    pi: NDArray[np.float64]
    t: NDArray[np.float64]

    @property
    def n(self) -> int:
        """Number of transient phases."""
        return int(self.T.shape[0])

    @property
    def rates(self) -> NDArray[np.float64]:
        """Total leaving intensities lambda_i = -T[i, i]."""
        return -np.diag(self.T)

    @cached_property
    def coupling_weights(self) -> NDArray[np.float64]:
        """The n x (n+1) weights lambda_ij for j != i, claim column last."""
        weights = np.zeros((self.n, self.n + 1))
        weights[:, : self.n] = self.T
        np.fill_diagonal(weights[:, : self.n], 0.0)
        weights[:, self.n] = self.t
        weights.setflags(write=False)
        return weights

    @cached_property
    def jump_cdf(self) -> NDArray[np.float64]:
        """Cumulative jump probabilities per row over (phase 0..n-1, claim)."""
        weights = self.coupling_weights
        cdf = np.cumsum(weights / self.rates[:, None], axis=1)
        # Close each row at its last reachable target so rounding never selects
        # a zero-probability column.
        for i in range(self.n):
            last = int(np.flatnonzero(weights[i] > 0)[-1])
            cdf[i, last:] = 1.0
        cdf.setflags(write=False)
        return cdf


def validate(T: ArrayLike, pi: ArrayLike) -> PhaseTypeModel:
    """Validate a subintensity matrix and restart vector.

    Args:
        T: square matrix of rates per unit time.
        pi: restart distribution after each claim.

    Returns:
        The immutable model, with `t = -T e`.

    Raises:
        PhaseTypeError: one of its subclasses naming the violated condition.
    """
    T = np.array(T, dtype=float)
    pi = np.array(pi, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] < 1:
        raise PhaseTypeError(f"T must be a non-empty square matrix, got shape {T.shape}")
    n = T.shape[0]
    if pi.shape != (n,):
        raise RestartNotProbability(f"pi must have {n} entries, got {pi.size}")
    if not (np.all(np.isfinite(T)) and np.all(np.isfinite(pi))):
        raise PhaseTypeError("T and pi must be finite")

    off = T[~np.eye(n, dtype=bool)]
    if np.any(off < 0):
        i, j = np.argwhere((T < 0) & ~np.eye(n, dtype=bool))[0]
        raise NegativeOffDiagonal(f"T[{i + 1}][{j + 1}] = {T[i, j]} must be >= 0")
    diagonal = np.diag(T)
    if np.any(diagonal >= 0):
        i = int(np.argmax(diagonal >= 0))
        raise PositiveDiagonal(f"T[{i + 1}][{i + 1}] = {diagonal[i]} must be < 0")

    # Exit rates are the row deficits of T, so T e + t is zero by construction.
    t = -T.sum(axis=1)
    if np.any(t < 0):
        i = int(np.argmin(t))
        raise NegativeExitRate(f"row {i + 1} of T sums to {-t[i]}; exit rates must be >= 0")
    if not np.any(t > 0):
        raise SingularSubintensity("no phase has a positive exit rate; claims never occur")

    if np.any(pi < 0) or abs(pi.sum() - 1.0) > PROBABILITY_TOLERANCE:
        raise RestartNotProbability(f"pi = {pi.tolist()} must be nonnegative and sum to 1")
    pi = pi / pi.sum()

    if np.linalg.cond(T) > 1.0 / np.finfo(float).eps:
        raise SingularSubintensity("T is singular; some phases are not transient")

    for array in (T, pi, t):
        array.setflags(write=False)
    return PhaseTypeModel(T=T, pi=pi, t=t)


def exit_intensity_matrix(model: PhaseTypeModel) -> NDArray[np.float64]:
    """Rates lambda_ij (j != i) with the claim rate t[i] appended as the last column."""
    return model.coupling_weights


def expected_time_to_claim(model: PhaseTypeModel, i: int) -> float:
    """Expected time until the next claim when the chain sits in phase `i`.

    This is `-(T^{-1} e)[i]`, the mean absorption time from phase `i`.
    """
    if not 0 <= i < model.n:
        raise IndexError(f"phase {i + 1} is out of range 1..{model.n}")
    try:
        times = -np.linalg.solve(model.T, np.ones(model.n))
    except np.linalg.LinAlgError as e:
        raise SingularSubintensity(str(e)) from e
    return float(times[i])


def transitions_from_uniforms(
    model: PhaseTypeModel,
    phases: NDArray[np.int64],
    u_hold: NDArray[np.float64],
    u_jump: NDArray[np.float64],
) -> Tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Turn uniforms on [0, 1) into holding times and jump targets.

    Holding times are exponential with rate lambda_i by inversion; the target
    is the first column of the jump CDF strictly above `u_jump`. Zero-width
    columns (the diagonal) are never selected.
    """
    rates = model.rates[phases]
    holding = -np.log1p(-u_hold) / rates
    cdf = model.jump_cdf[phases]
    target = np.sum(cdf <= u_jump[:, None], axis=1)
    target = np.minimum(target, model.n)
    target = np.where(target == model.n, CLAIM, target)
    return holding, target.astype(np.int64)


def restart_from_uniforms(model: PhaseTypeModel, u: NDArray[np.float64]) -> NDArray[np.int64]:
    """Draw restart phases from `pi` by inversion."""
    cdf = np.cumsum(model.pi)
    cdf[int(np.flatnonzero(model.pi > 0)[-1]) :] = 1.0
    return np.minimum(np.searchsorted(cdf, u, side="right"), model.n - 1).astype(np.int64)


def sample_transition(
    model: PhaseTypeModel, i: int, rng: np.random.Generator
) -> Tuple[float, int]:
    """Sample one sojourn in phase `i` and where the chain goes next.

    Returns:
        The holding time and the next phase, or `CLAIM` on absorption.
    """
    u = rng.random(2)
    holding, target = transitions_from_uniforms(model, np.array([i]), u[:1], u[1:])
    return float(holding[0]), int(target[0])


def sample_time_to_claim(
    model: PhaseTypeModel, i: int, size: int, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Sample `size` absorption times starting from phase `i`, restarts excluded."""
    phases = np.full(size, i, dtype=np.int64)
    elapsed = np.zeros(size)
    running = np.ones(size, dtype=bool)
    while running.any():
        idx = np.flatnonzero(running)
        holding, target = transitions_from_uniforms(
            model, phases[idx], rng.random(idx.size), rng.random(idx.size)
        )
        elapsed[idx] += holding
        absorbed = target == CLAIM
        running[idx[absorbed]] = False
        phases[idx[~absorbed]] = target[~absorbed]
    return elapsed
