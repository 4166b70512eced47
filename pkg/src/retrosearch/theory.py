"""Hitting times of the asymmetric +-1 walk that models search under error rate eps.

A policy that agrees with the retrospective optimal trace with probability
``1 - eps`` moves one step closer to the terminal, otherwise one step away.
Reaching a terminal at distance ``N`` then takes ``N / (1 - 2 eps)`` actions
on average.  This module simulates the walk and compares it to that law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

DEFAULT_ALPHAS = (2.0, 4.0, 6.0, 8.0)
DEFAULT_CAP = 10**6


class DivergentWalkError(ValueError):
    """eps >= 1/2: the expected hitting time is infinite."""


@dataclass(frozen=True)
class WalkConfig:
    epsilon: float
    target: int
    trials: int
    seed: int
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 0.5:
            raise DivergentWalkError(f"epsilon must lie in [0, 0.5), got {self.epsilon}")
        if self.target < 1 or self.trials < 1 or self.cap < 1:
            raise ValueError("target, trials and cap must be positive")


@dataclass
class SimulationResult:
    epsilon: float
    target: int
    trials: int
    mean: float
    variance: float
    tail: dict[float, float]
    capped: int
    times: np.ndarray = field(repr=False)


@dataclass
class TailReport:
    epsilon: float
    alphas: list[float]
    freqs: list[float]
    upper_bounded: list[bool]
    bound: list[float]
    slope: float
    passed: bool


def expected_hitting_time(epsilon: float, target: float) -> float:
    """Closed-form mean hitting time ``N / (1 - 2 eps)``."""
    if epsilon >= 0.5:
        raise DivergentWalkError(f"expected hitting time diverges for epsilon={epsilon}")
    if epsilon < 0.0 or target < 1:
        raise ValueError("need epsilon >= 0 and target >= 1")
    return target / (1.0 - 2.0 * epsilon)


def tail_bound(alpha: float, epsilon: float) -> float:
    """The asymptotic tail curve ``exp(-alpha + E[T]/N)``."""
    return math.exp(-alpha + 1.0 / (1.0 - 2.0 * epsilon))


def simulate_hitting_time(config: WalkConfig, alphas=DEFAULT_ALPHAS) -> SimulationResult:
    keys = kernels.trial_keys(config.seed, config.trials)
    times, capped = kernels.hitting_times(keys, 1.0 - config.epsilon, config.target, config.cap)
    # int64 sums are exact, so the mean does not depend on summation order
    total = int(times.sum())
    mean = total / config.trials
    variance = float(np.var(times, ddof=1)) if config.trials > 1 else 0.0
    tail = {
        float(a): float(np.count_nonzero(times >= a * config.target)) / config.trials
        for a in alphas
    }
    return SimulationResult(
        epsilon=config.epsilon,
        target=config.target,
        trials=config.trials,
        mean=mean,
        variance=variance,
        tail=tail,
        capped=capped,
        times=times,
    )


def tail_check(result: SimulationResult, epsilon: float | None = None, max_slope: float = -0.5) -> TailReport:
    """Fit log P[T >= alpha N] against alpha.

    Zero counts are reported as upper-bounded (below ``1/trials``) and left out
    of the fit.  With fewer than two resolved points the tail has vanished below
    the sampling resolution and the slope is reported as ``-inf``.
    """
    eps = result.epsilon if epsilon is None else epsilon
    alphas = sorted(result.tail)
    freqs = [result.tail[a] for a in alphas]
    upper = [f == 0.0 for f in freqs]
    xs = np.asarray([a for a, f in zip(alphas, freqs) if f > 0.0])
    ys = np.log([f for f in freqs if f > 0.0])
    slope = float(np.polyfit(xs, ys, 1)[0]) if xs.size >= 2 else float("-inf")
    return TailReport(
        epsilon=eps,
        alphas=alphas,
        freqs=freqs,
        upper_bounded=upper,
        bound=[tail_bound(a, eps) for a in alphas],
        slope=slope,
        passed=slope <= max_slope,
    )
