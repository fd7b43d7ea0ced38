"""Exponential-family response models with canonical links.

Each treatment arm has a response law

    f(y | x, theta) = exp{(y * mu - a(mu)) / phi + b(y, phi)},   mu = x @ theta

so the mean is ``a'(mu)``, the variance ``a''(mu) * phi`` and the conditional
Fisher information ``a''(mu) / phi * outer(x, x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit, gammaln

BERNOULLI_LOGIT = "bernoulli_logit"
POISSON_LOG = "poisson_log"
NORMAL_IDENTITY = "normal_identity"

FAMILY_KINDS = (BERNOULLI_LOGIT, POISSON_LOG, NORMAL_IDENTITY)

DEFAULT_BOX = (-10.0, 10.0)

# Cholesky diagonal ratio below which the weighted design counts as singular.
_SINGULAR_RATIO = 1e-7


class DimensionError(ValueError):
    """Covariate or coefficient vectors of incompatible length."""


class SupportError(ValueError):
    """A response value outside the support of its family."""


@dataclass(frozen=True)
class Family:
    """Canonical-link exponential family with a fixed scale ``phi``."""

    kind: str
    phi: float = 1.0

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family {self.kind!r}; expected one of {FAMILY_KINDS}")
        if not self.phi > 0:
            raise ValueError("phi must be positive")
        if self.kind != NORMAL_IDENTITY and self.phi != 1.0:
            raise ValueError(f"{self.kind} has phi fixed at 1")

    @property
    def is_binary(self) -> bool:
        return self.kind == BERNOULLI_LOGIT

    def cumulant(self, mu):
        """a(mu)."""
        mu = np.asarray(mu, dtype=float)
        if self.kind == BERNOULLI_LOGIT:
            return np.logaddexp(0.0, mu)
        if self.kind == POISSON_LOG:
            return np.exp(mu)
        return 0.5 * mu * mu

    def mean(self, mu):
        """a'(mu), the conditional mean of the response."""
        if self.kind == BERNOULLI_LOGIT:
            return expit(mu)
        if self.kind == POISSON_LOG:
            return np.exp(mu)
        return np.asarray(mu, dtype=float) * 1.0

    def variance_function(self, mu):
        """a''(mu); strictly positive everywhere."""
        if self.kind == BERNOULLI_LOGIT:
            p = expit(mu)
            return p * (1.0 - p)
        if self.kind == POISSON_LOG:
            return np.exp(mu)
        return np.ones_like(np.asarray(mu, dtype=float))

    def log_base(self, y):
        """b(y, phi), the normalising term of the log-density."""
        y = np.asarray(y, dtype=float)
        if self.kind == BERNOULLI_LOGIT:
            return np.zeros_like(y)
        if self.kind == POISSON_LOG:
            return -gammaln(y + 1.0)
        return -0.5 * y * y / self.phi - 0.5 * math.log(2.0 * math.pi * self.phi)

    def in_support(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            return False
        if self.kind == BERNOULLI_LOGIT:
            return bool(np.all((y == 0.0) | (y == 1.0)))
        if self.kind == POISSON_LOG:
            return bool(np.all((y >= 0.0) & (y == np.floor(y))))
        return True

    def sample(self, mu: float, rng: np.random.Generator) -> float:
        if self.kind == BERNOULLI_LOGIT:
            return 1.0 if rng.random() < expit(mu) else 0.0
        if self.kind == POISSON_LOG:
            return float(rng.poisson(math.exp(mu)))
        return float(rng.normal(mu, math.sqrt(self.phi)))


BERNOULLI = Family(BERNOULLI_LOGIT)
POISSON = Family(POISSON_LOG)


def normal(phi: float = 1.0) -> Family:
    return Family(NORMAL_IDENTITY, phi)


def _box_array(box, d: int) -> np.ndarray:
    if isinstance(box, np.ndarray) and box.shape == (d, 2) and box.dtype == float:
        return box
    box = np.asarray(box, dtype=float)
    if box.shape == (2,):
        box = np.tile(box, (d, 1))
    if box.shape != (d, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError(f"box must be a (lower, upper) pair or a ({d}, 2) array with lower < upper")
    return box


@dataclass(frozen=True, eq=False)
class ArmModel:
    """One treatment arm: family, coefficients and the bounded parameter box."""

    family: Family
    theta: np.ndarray
    box: np.ndarray = field(default=DEFAULT_BOX)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        box = _box_array(self.box, theta.size)
        box.setflags(write=False)
        object.__setattr__(self, "box", box)

    @property
    def d(self) -> int:
        return self.theta.size

    def with_theta(self, theta) -> "ArmModel":
        return ArmModel(self.family, theta, self.box)

    def in_box(self, theta=None) -> bool:
        theta = self.theta if theta is None else np.asarray(theta)
        return bool(np.all((theta >= self.box[:, 0]) & (theta <= self.box[:, 1])))

    def box_center(self) -> np.ndarray:
        return self.box.mean(axis=1)


def _linear_predictor(arm: ArmModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != arm.d:
        raise DimensionError(f"covariate has length {x.shape[-1]}, arm expects {arm.d}")
    return x @ arm.theta


def mean_response(arm: ArmModel, x):
    """E[Y | x] = a'(x @ theta). Vectorised over leading axes of ``x``."""
    return arm.family.mean(_linear_predictor(arm, x))


def sample_response(arm: ArmModel, x, rng: np.random.Generator) -> float:
    return arm.family.sample(float(_linear_predictor(arm, x)), rng)


def log_density(arm: ArmModel, x, y) -> float:
    if not arm.family.in_support(y):
        raise SupportError(f"response {y!r} outside the support of {arm.family.kind}")
    mu = _linear_predictor(arm, x)
    fam = arm.family
    return float((y * mu - fam.cumulant(mu)) / fam.phi + fam.log_base(y))


def conditional_fisher_info(arm: ArmModel, x) -> np.ndarray:
    """a''(mu) / phi * outer(x, x); a rank-one PSD matrix."""
    x = np.asarray(x, dtype=float)
    w = arm.family.variance_function(_linear_predictor(arm, x)) / arm.family.phi
    return w * np.outer(x, x)


def score(arm: ArmModel, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    resid = y - mean_response(arm, x)
    return resid / arm.family.phi * x


@dataclass(frozen=True, eq=False)
class ArmData:
    """Observations for one arm, possibly aggregated.

    Row ``j`` stands for ``weight[j]`` subjects sharing covariate ``x[j]``
    whose responses average to ``y[j]``. For canonical links the likelihood
    depends on the data only through these quantities, so aggregating
    identical covariate rows is exact.
    """

    x: np.ndarray
    y: np.ndarray
    weight: np.ndarray | None = None

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.size == 0:
            x = x.reshape(0, x.shape[-1] if x.ndim == 2 else 0)
        if x.shape[0] != y.size:
            raise DimensionError("x and y have different numbers of rows")
        w = np.ones(y.size) if self.weight is None else np.asarray(self.weight, dtype=float).reshape(-1)
        if w.size != y.size:
            raise DimensionError("weight and y have different lengths")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weight", w)

    @classmethod
    def empty(cls, d: int) -> "ArmData":
        return cls(np.zeros((0, d)), np.zeros(0))

    @property
    def n_subjects(self) -> float:
        return float(self.weight.sum())


def log_likelihood(family: Family, theta, data: ArmData) -> float:
    """Log-likelihood up to the ``b(y, phi)`` terms."""
    mu = data.x @ np.asarray(theta, dtype=float)
    return float(np.sum(data.weight * (data.y * mu - family.cumulant(mu))) / family.phi)


_FAMILY_CODE = {BERNOULLI_LOGIT: 0, POISSON_LOG: 1, NORMAL_IDENTITY: 2}

FIT_OK, FIT_SINGULAR, FIT_LEFT_BOX, FIT_NO_ASCENT, FIT_MAX_ITER = range(5)


@njit(cache=True)
def _loglik(code, x, y, w, theta):
    total = 0.0
    for j in range(x.shape[0]):
        mu = 0.0
        for i in range(x.shape[1]):
            mu += x[j, i] * theta[i]
        if code == 0:
            a = max(mu, 0.0) + math.log1p(math.exp(-abs(mu)))
        elif code == 1:
            a = math.exp(mu)
        else:
            a = 0.5 * mu * mu
        total += w[j] * (y[j] * mu - a)
    return total


@njit(cache=True)
def _newton(code, x, y, w, theta, lo, hi, tol, max_iter, singular_ratio):
    n, d = x.shape
    grad = np.empty(d)
    hess = np.empty((d, d))
    loglik = _loglik(code, x, y, w, theta)
    for _ in range(max_iter):
        grad[:] = 0.0
        hess[:, :] = 0.0
        for j in range(n):
            mu = 0.0
            for i in range(d):
                mu += x[j, i] * theta[i]
            if code == 0:
                p = 1.0 / (1.0 + math.exp(-mu))
                mean, var = p, p * (1.0 - p)
            elif code == 1:
                mean = math.exp(mu)
                var = mean
            else:
                mean, var = mu, 1.0
            r = w[j] * (y[j] - mean)
            v = w[j] * var
            for i in range(d):
                grad[i] += r * x[j, i]
                for k in range(i + 1):
                    hess[i, k] += v * x[j, i] * x[j, k]
        # Cholesky factorisation in place (lower triangle).
        chol = np.zeros((d, d))
        for i in range(d):
            for k in range(i + 1):
                s = hess[i, k]
                for q in range(k):
                    s -= chol[i, q] * chol[k, q]
                if i == k:
                    if s <= 0.0:
                        return theta, FIT_SINGULAR
                    chol[i, i] = math.sqrt(s)
                else:
                    chol[i, k] = s / chol[k, k]
        dmax, dmin = 0.0, np.inf
        for i in range(d):
            dmax = max(dmax, chol[i, i])
            dmin = min(dmin, chol[i, i])
        if dmin <= singular_ratio * dmax:
            return theta, FIT_SINGULAR
        step = np.empty(d)
        for i in range(d):
            s = grad[i]
            for q in range(i):
                s -= chol[i, q] * step[q]
            step[i] = s / chol[i, i]
        for i in range(d - 1, -1, -1):
            s = step[i]
            for q in range(i + 1, d):
                s -= chol[q, i] * step[q]
            step[i] = s / chol[i, i]

        accepted = False
        cand = theta + step
        ll_c = loglik
        for _halve in range(30):
            cand = theta + step
            ll_c = _loglik(code, x, y, w, cand)
            if ll_c >= loglik - 1e-12 * (1.0 + abs(loglik)):
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            return theta, FIT_NO_ASCENT
        for i in range(d):
            if cand[i] < lo[i] or cand[i] > hi[i]:
                return theta, FIT_LEFT_BOX
        change = 0.0
        for i in range(d):
            change = max(change, abs(cand[i] - theta[i]))
        theta = cand
        loglik = ll_c
        if change < tol:
            return theta, FIT_OK
    return theta, FIT_MAX_ITER


def fit_mle(
    family: Family,
    box,
    data: ArmData,
    warm_start,
    *,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> tuple[np.ndarray, bool]:
    """Maximum likelihood by Newton/IRLS with step halving.

    Returns ``(theta_hat, True)`` when the iteration settles (max coordinate
    change below ``tol``) inside the box. When the data cannot support an
    interior maximiser (fewer subjects than coefficients, a singular weighted
    design, an iterate leaving the box, or no convergence within
    ``max_iter``) the warm start is returned unchanged with ``False``.
    """
    warm_start = np.array(warm_start, dtype=float).reshape(-1)
    d = warm_start.size
    box = _box_array(box, d)
    x, y, w = data.x, data.y, data.weight
    if x.shape[0] and x.shape[1] != d:
        raise DimensionError(f"data has {x.shape[1]} columns, expected {d}")
    keep = w > 0
    x, y, w = x[keep], y[keep], w[keep]
    if w.sum() < d or x.shape[0] < d:
        return warm_start, False
    lo, hi = np.ascontiguousarray(box[:, 0]), np.ascontiguousarray(box[:, 1])
    start = np.minimum(np.maximum(warm_start, lo), hi)
    theta, status = _newton(
        _FAMILY_CODE[family.kind],
        np.ascontiguousarray(x),
        y / 1.0,
        w,
        start,
        lo,
        hi,
        tol,
        max_iter,
        _SINGULAR_RATIO,
    )
    if status != FIT_OK:
        return warm_start, False
    return np.minimum(np.maximum(theta, lo), hi), True
