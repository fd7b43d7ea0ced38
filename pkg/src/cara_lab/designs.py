"""Allocation policies for two-arm trials.

The covariate-adjusted doubly adaptive biased coin assigns arm 1 with
probability ``g(pi_hat, N1/m, rho_hat)`` where

    g(pi, a, b) = pi (b/a)^gamma / [pi (b/a)^gamma + (1-pi) ((1-b)/(1-a))^gamma]

pulls the allocation back toward the estimated overall target ``rho_hat``
whenever the observed proportion ``a`` drifts from it. ``gamma = 0`` gives
the rule that simply assigns with probability ``pi_hat`` (ZHCC).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

PROP_CLAMP = 1e-6


class BurnInError(RuntimeError):
    """Adaptive allocation requested before the burn-in block is finished."""


@dataclass(frozen=True)
class CompleteRandomization:
    p: float = 0.5
    m0: int | None = None

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("complete randomization needs p in (0, 1)")
        _check_m0(self.m0)


@dataclass(frozen=True)
class ZHCC:
    m0: int | None = None

    def __post_init__(self):
        _check_m0(self.m0)

    gamma = 0.0


@dataclass(frozen=True)
class CADBCD:
    """``gamma`` may be ``math.inf`` for the deterministic limit."""

    gamma: float = 2.0
    m0: int | None = None

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")
        _check_m0(self.m0)


Policy = CompleteRandomization | ZHCC | CADBCD


def _check_m0(m0):
    if m0 is not None and (int(m0) != m0 or m0 < 1):
        raise ValueError("burn-in m0 must be a positive integer")


def default_m0(d: int) -> int:
    return max(2 * d, 5)


def g(pi: float, a: float, b: float, gamma: float) -> float:
    """Allocation function of the doubly adaptive biased coin.

    ``a`` (observed proportion) and ``b`` (estimated target) are clamped
    into ``[1e-6, 1 - 1e-6]``. Evaluated on the log-odds scale so large
    ``gamma`` cannot overflow.
    """
    a = min(max(a, PROP_CLAMP), 1.0 - PROP_CLAMP)
    b = min(max(b, PROP_CLAMP), 1.0 - PROP_CLAMP)
    if gamma == 0 or a == b or pi <= 0.0 or pi >= 1.0:
        return pi
    if math.isinf(gamma):
        return 1.0 if b > a else 0.0
    shift = gamma * (math.log(b) - math.log(a) - math.log1p(-b) + math.log1p(-a))
    return float(expit(logit(pi) + shift))


def g_direct(pi: float, a: float, b: float, gamma: float) -> float:
    """The ratio form of :func:`g`, evaluated literally (no log-odds)."""
    a = min(max(a, PROP_CLAMP), 1.0 - PROP_CLAMP)
    b = min(max(b, PROP_CLAMP), 1.0 - PROP_CLAMP)
    top = pi * (b / a) ** gamma
    return top / (top + (1.0 - pi) * ((1.0 - b) / (1.0 - a)) ** gamma)


def g_expansion_check(pi: float, v: float, da: float, db: float, gamma: float, *, g_func=g) -> float:
    """Residual of the first-order expansion of ``g`` around ``a = b = v``."""
    linear = pi - gamma * pi * (1.0 - pi) / (v * (1.0 - v)) * (da - db)
    return abs(g_func(pi, v + da, v + db, gamma) - linear)


def burnin_schedule(m0: int, rng: np.random.Generator) -> np.ndarray:
    """A random permutation of ``m0`` ones and ``m0`` twos (arm labels)."""
    block = np.repeat(np.array([1, 2]), m0)
    return rng.permutation(block)


def burnin_assignment(m: int, schedule: np.ndarray) -> int:
    """Arm for subject ``m`` (1-based) during the burn-in block."""
    if not 1 <= m <= len(schedule):
        raise BurnInError(f"subject {m} is outside the burn-in block of length {len(schedule)}")
    return int(schedule[m - 1])


def allocation_probability(policy: Policy, state, xi_new, target, theta_hat=None, rho_hat=None) -> float:
    """Probability that the next subject (covariate ``xi_new``) gets arm 1.

    ``state`` needs ``m``, ``counts`` and ``m0``; ``theta_hat`` and
    ``rho_hat`` default to the estimates stored on it.
    """
    if isinstance(policy, CompleteRandomization):
        return policy.p
    if len(state.counts) != 2:
        raise ValueError("adaptive policies are defined for exactly two arms")
    if state.m < 2 * state.m0:
        raise BurnInError(f"burn-in runs until subject {2 * state.m0}; now at {state.m}")
    theta_hat = state.theta_hat if theta_hat is None else theta_hat
    rho_hat = state.rho_hat if rho_hat is None else rho_hat
    pi_hat = float(target.evaluate(theta_hat, xi_new))
    if isinstance(policy, ZHCC):
        return pi_hat
    return g(pi_hat, state.counts[0] / state.m, rho_hat, policy.gamma)
