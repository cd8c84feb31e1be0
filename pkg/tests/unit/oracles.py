"""Closed-form values of the one-phase model, the classical compound Poisson case."""

import numpy as np

from phase_type import validate
from solver import RiskModel


def one_phase_model(lam: float = 10.0, c: float = 15.0, delta: float = 0.1, beta: float = 1.0):
    return RiskModel(c=c, delta=delta, beta=beta, env=validate([[-lam]], [1.0]))


def _roots(lam: float, c: float, delta: float, beta: float):
    r1, r2 = sorted(np.roots([c, c * beta - lam - delta, -beta * delta]).real, reverse=True)
    return float(r1), float(r2)


def classical_barrier(lam: float, c: float, delta: float, beta: float) -> float:
    """Optimal barrier with exponential claims; 0 when paying at once is optimal."""
    r1, r2 = _roots(lam, c, delta, beta)
    ratio = (r2 + beta) * r2**2 / ((r1 + beta) * r1**2)
    return max(float(np.log(ratio) / (r1 - r2)), 0.0)


def classical_value(x: float, lam: float, c: float, delta: float, beta: float) -> float:
    """Value at `x` below the optimal barrier."""
    r1, r2 = _roots(lam, c, delta, beta)
    b = classical_barrier(lam, c, delta, beta)
    top = (r1 + beta) * np.exp(r1 * x) - (r2 + beta) * np.exp(r2 * x)
    bottom = (r1 + beta) * r1 * np.exp(r1 * b) - (r2 + beta) * r2 * np.exp(r2 * b)
    return float(top / bottom)
