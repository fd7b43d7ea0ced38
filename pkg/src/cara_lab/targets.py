"""Target allocation functions for two arms.

A target maps the pair of arm coefficient vectors and a covariate ``x`` to
the desired probability ``pi1`` of assigning arm 1. The built-in targets
depend on ``x`` only through the arm means ``p_k = a'(x @ theta_k)``.

All evaluations are vectorised: ``x`` may be a single covariate of shape
``(d,)`` or a stack of shape ``(M, d)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .glm import BERNOULLI, DimensionError, Family

P_CLAMP = 1e-6
DEFAULT_FD_STEP = 1e-5

ANALYTIC = "analytic"
FINITE_DIFFERENCE = "finite_difference"


def _split_theta(theta) -> tuple[np.ndarray, np.ndarray]:
    if len(theta) != 2:
        raise DimensionError("a two-arm target needs exactly two coefficient vectors")
    t1 = np.asarray(theta[0], dtype=float).reshape(-1)
    t2 = np.asarray(theta[1], dtype=float).reshape(-1)
    return t1, t2


def _check_x(x, t1, t2) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != t1.size or x.shape[-1] != t2.size:
        raise DimensionError(f"covariate length {x.shape[-1]} does not match coefficients {t1.size}, {t2.size}")
    return x


@dataclass(frozen=True, kw_only=True)
class TargetFunction:
    """Base class. Subclasses implement :meth:`from_means` and its partials."""

    families: tuple[Family, Family] = (BERNOULLI, BERNOULLI)
    gradient_mode: str = ANALYTIC
    fd_step: float = DEFAULT_FD_STEP

    requires_binary = False

    def __post_init__(self):
        if self.gradient_mode not in (ANALYTIC, FINITE_DIFFERENCE):
            raise ValueError(f"unknown gradient mode {self.gradient_mode!r}")
        if self.requires_binary and not all(f.is_binary for f in self.families):
            raise ValueError(f"{type(self).__name__} needs binary (Bernoulli) arms")

    def _means(self, t1, t2, x):
        """Arm means, clamped away from 0 and 1 for binary arms."""
        out = []
        for fam, t in zip(self.families, (t1, t2)):
            p = fam.mean(x @ t)
            if fam.is_binary:
                p = np.minimum(np.maximum(p, P_CLAMP), 1.0 - P_CLAMP)
            out.append(p)
        return out

    def _means_and_slopes(self, t1, t2, x):
        """Clamped means with d p / d mu (zero where the clamp is active)."""
        out = []
        for fam, t in zip(self.families, (t1, t2)):
            mu = x @ t
            p = fam.mean(mu)
            dp = fam.variance_function(mu)
            if fam.is_binary:
                clamped = (p < P_CLAMP) | (p > 1.0 - P_CLAMP)
                p = np.clip(p, P_CLAMP, 1.0 - P_CLAMP)
                dp = np.where(clamped, 0.0, dp)
            out.append((p, dp))
        return out

    def from_means(self, p1, p2):
        raise NotImplementedError

    def mean_partials(self, p1, p2):
        """(d pi1 / d p1, d pi1 / d p2), or None to force finite differences."""
        return None

    def evaluate(self, theta, x):
        t1, t2 = _split_theta(theta)
        x = _check_x(x, t1, t2)
        p1, p2 = self._means(t1, t2, x)
        return self.from_means(p1, p2)

    def gradient(self, theta, x):
        """d pi1 / d(theta1, theta2), shape ``(2d,)`` or ``(M, 2d)``."""
        t1, t2 = _split_theta(theta)
        x = _check_x(x, t1, t2)
        if self.gradient_mode == ANALYTIC:
            grad = self._analytic_gradient(t1, t2, x)
            if grad is not None:
                return grad
        return self._fd_gradient(t1, t2, x)

    def _analytic_gradient(self, t1, t2, x):
        (p1, dp1), (p2, dp2) = self._means_and_slopes(t1, t2, x)
        partials = self.mean_partials(p1, p2)
        if partials is None:
            return None
        g1, g2 = partials
        c1 = np.asarray(g1 * dp1)[..., None]
        c2 = np.asarray(g2 * dp2)[..., None]
        return np.concatenate([c1 * x, c2 * x], axis=-1)

    def _fd_gradient(self, t1, t2, x):
        theta = np.concatenate([t1, t2])
        d = t1.size
        cols = []
        for i in range(theta.size):
            h = self.fd_step * (1.0 + abs(theta[i]))
            up, down = theta.copy(), theta.copy()
            up[i] += h
            down[i] -= h
            f_up = self.evaluate((up[:d], up[d:]), x)
            f_down = self.evaluate((down[:d], down[d:]), x)
            cols.append((f_up - f_down) / (2.0 * h))
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class RSIHR(TargetFunction):
    """sqrt(p1) / (sqrt(p1) + sqrt(p2)) for binary responses."""

    requires_binary = True

    def from_means(self, p1, p2):
        s1, s2 = np.sqrt(p1), np.sqrt(p2)
        return s1 / (s1 + s2)

    def mean_partials(self, p1, p2):
        s1, s2 = np.sqrt(p1), np.sqrt(p2)
        denom = (s1 + s2) ** 2
        return s2 / (2.0 * s1 * denom), -s1 / (2.0 * s2 * denom)


@dataclass(frozen=True)
class NeymanBinary(TargetFunction):
    """Neyman allocation: ratio of the arm response standard deviations."""

    requires_binary = True

    def from_means(self, p1, p2):
        q1, q2 = np.sqrt(p1 * (1.0 - p1)), np.sqrt(p2 * (1.0 - p2))
        return q1 / (q1 + q2)

    def mean_partials(self, p1, p2):
        q1, q2 = np.sqrt(p1 * (1.0 - p1)), np.sqrt(p2 * (1.0 - p2))
        denom = (q1 + q2) ** 2
        dq1 = (1.0 - 2.0 * p1) / (2.0 * q1)
        dq2 = (1.0 - 2.0 * p2) / (2.0 * q2)
        return q2 * dq1 / denom, -q1 * dq2 / denom


@dataclass(frozen=True)
class Fixed(TargetFunction):
    """Constant target ``c``, ignoring the parameters entirely."""

    c: float = 0.5

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 < self.c < 1.0:
            raise ValueError("Fixed target needs c in (0, 1)")

    def from_means(self, p1, p2):
        return np.full(np.shape(p1), self.c)[()]

    def mean_partials(self, p1, p2):
        zero = np.zeros(np.shape(p1))
        return zero, zero


@dataclass(frozen=True)
class Composite(TargetFunction):
    """Any smooth ``func(p1, p2)`` in (0, 1).

    ``partials`` should return ``(d func / d p1, d func / d p2)``; without
    it the gradient is taken by central differences in theta.
    """

    func: Callable | None = None
    partials: Callable | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.func is None:
            raise ValueError("Composite target needs a func")

    def from_means(self, p1, p2):
        return self.func(p1, p2)

    def mean_partials(self, p1, p2):
        if self.partials is None:
            return None
        return self.partials(p1, p2)


def evaluate(target: TargetFunction, theta: Sequence, x):
    return target.evaluate(theta, x)


def gradient(target: TargetFunction, theta: Sequence, x):
    return target.gradient(theta, x)
