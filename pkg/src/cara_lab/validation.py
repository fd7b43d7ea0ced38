"""Self-checks of the numerical building blocks.

Each check measures a residual and compares it with a fixed threshold. The
suite runs in a few seconds and needs no simulation beyond short burn-ins.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable

import numpy as np

from .asymptotics import rho_of_theta, summary
from .covariates import Bernoulli, CovariateDistribution, Intercept
from .designs import CADBCD, ZHCC, allocation_probability, g, g_expansion_check
from .glm import BERNOULLI, POISSON, ArmModel, log_density, normal, score
from .targets import FINITE_DIFFERENCE, RSIHR, NeymanBinary
from .trial import TrialConfig, TrialState, step

EXPANSION_V = 0.3
EXPANSION_STEP = (0.02, -0.015)
EXPANSION_GRID = tuple(itertools.product((0.2, 0.5, 0.8), (0.5, 1.0, 4.0)))
EXPANSION_MIN_RATIO = 3.5


@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        text = f"{flag}  {self.name:<28} residual={self.residual:.3e}  threshold={self.threshold:.1e}"
        return f"{text}  {self.detail}" if self.detail else text


def _at_most(name, residual, threshold, detail="") -> CheckResult:
    return CheckResult(name, float(residual), float(threshold), bool(residual <= threshold), detail)


def _reference():
    arms = (ArmModel(BERNOULLI, (0.5, 0.5)), ArmModel(BERNOULLI, (-0.5, 0.5)))
    return arms, CovariateDistribution([Intercept(), Bernoulli(0.5)]), RSIHR()


def check_variance_identity() -> CheckResult:
    arms, dist, target = _reference()
    s = summary(arms, dist, target)
    res = max(abs(s.sigma1_sq + s.sigma2_sq - s.v * (1 - s.v)), abs(s.sigma_sq(0) - s.sigma_zhcc))
    return _at_most("variance_identity", res, 1e-10, "sigma1^2+sigma2^2=v(1-v), sigma^2(0)=ZHCC")


def check_g_expansion(g_func: Callable = g) -> CheckResult:
    """Halving the perturbation must cut the expansion residual by >= 3.5.

    The residual here is ``EXPANSION_MIN_RATIO / ratio`` so that, like the
    other checks, smaller is better and 1.0 is the threshold.
    """
    da, db = EXPANSION_STEP
    worst = np.inf
    for pi, gamma in EXPANSION_GRID:
        for k in range(3):
            s = 0.5**k
            big = g_expansion_check(pi, EXPANSION_V, da * s, db * s, gamma, g_func=g_func)
            small = g_expansion_check(pi, EXPANSION_V, da * s / 2, db * s / 2, gamma, g_func=g_func)
            worst = min(worst, big / small if small > 0 else np.inf)
    zero = g_expansion_check(0.5, EXPANSION_V, da, db, 0.0, g_func=g_func)
    residual = EXPANSION_MIN_RATIO / worst if zero == 0.0 else np.inf
    return _at_most("g_expansion_order", residual, 1.0, f"min halving ratio={worst:.3f}, gamma=0 residual={zero:.1e}")


def check_score() -> CheckResult:
    rng = np.random.default_rng(7)
    worst = 0.0
    for fam in (BERNOULLI, POISSON, normal(1.7)):
        for _ in range(20):
            theta = rng.uniform(-1, 1, 3)
            x = np.concatenate([[1.0], rng.normal(size=2)])
            arm = ArmModel(fam, theta)
            y = fam.sample(float(x @ theta), rng)
            h = 1e-6
            fd = np.empty(3)
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                up = log_density(arm.with_theta(theta + e), x, y)
                down = log_density(arm.with_theta(theta - e), x, y)
                fd[i] = (up - down) / (2 * h)
            worst = max(worst, float(np.max(np.abs(fd - score(arm, x, y)))))
    return _at_most("score_vs_fd", worst, 1e-6)


def check_target_gradient() -> CheckResult:
    rng = np.random.default_rng(11)
    worst = 0.0
    for cls in (RSIHR, NeymanBinary):
        analytic, fd = cls(), cls(gradient_mode=FINITE_DIFFERENCE)
        for _ in range(50):
            theta = (rng.uniform(-1.5, 1.5, 2), rng.uniform(-1.5, 1.5, 2))
            x = np.array([1.0, rng.normal()])
            worst = max(worst, float(np.max(np.abs(analytic.gradient(theta, x) - fd.gradient(theta, x)))))
    return _at_most("target_gradient_vs_fd", worst, 1e-5)


def check_grad_rho() -> CheckResult:
    arms, dist, target = _reference()
    s = summary(arms, dist, target)
    theta = np.concatenate([arms[0].theta, arms[1].theta])
    h = 1e-6
    fd = np.empty(theta.size)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        fd[i] = (rho_of_theta((up[:2], up[2:]), target, dist) - rho_of_theta((down[:2], down[2:]), target, dist)) / (2 * h)
    return _at_most("grad_rho_vs_fd", float(np.max(np.abs(fd - s.grad_rho))), 1e-4)


def check_g_symmetry(g_func: Callable = g) -> CheckResult:
    grid = np.linspace(0.05, 0.95, 10)
    worst = 0.0
    for pi, a, b in itertools.product(grid, grid, grid):
        for gamma in (0.5, 2.0, 10.0):
            worst = max(worst, abs(g_func(pi, a, b, gamma) + g_func(1 - pi, 1 - a, 1 - b, gamma) - 1.0))
    return _at_most("g_symmetry", worst, 1e-12)


def check_g_monotone(g_func: Callable = g) -> CheckResult:
    """Largest violation of: increasing in ``b``, decreasing in ``a``."""
    grid = np.linspace(0.02, 0.98, 25)
    worst = 0.0
    for pi, gamma in itertools.product((0.1, 0.5, 0.9), (0.5, 2.0, 10.0)):
        for fixed in grid:
            in_b = np.array([g_func(pi, fixed, b, gamma) for b in grid])
            in_a = np.array([g_func(pi, a, fixed, gamma) for a in grid])
            worst = max(worst, float(np.max(-np.diff(in_b), initial=0.0)), float(np.max(np.diff(in_a), initial=0.0)))
    return _at_most("g_monotone", worst, 0.0)


def check_burn_in() -> CheckResult:
    arms, dist, target = _reference()
    worst = 0
    for m0 in (1, 3, 5):
        cfg = TrialConfig(2 * m0 + 1, arms, dist, target, CADBCD(1.0, m0=m0))
        for seed in range(25):
            rng = np.random.default_rng(seed)
            state = TrialState(cfg, rng)
            for _ in range(2 * m0):
                step(state, cfg, rng)
            worst = max(worst, abs(int(state.counts[0]) - m0), abs(int(state.counts[1]) - m0))
    return _at_most("burn_in_balance", worst, 0, "counts equal (m0, m0) after 2*m0 subjects")


def check_zhcc_equivalence() -> CheckResult:
    rng = np.random.default_rng(3)
    target = RSIHR()
    worst = 0.0
    for _ in range(1000):
        theta = (rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2))
        m = int(rng.integers(10, 1000))
        n1 = int(rng.integers(1, m))
        state = SimpleNamespace(m=m, counts=(n1, m - n1), m0=5, theta_hat=theta, rho_hat=float(rng.uniform(0.05, 0.95)))
        x = np.array([1.0, float(rng.integers(0, 2))])
        diff = allocation_probability(ZHCC(), state, x, target) - allocation_probability(CADBCD(0.0), state, x, target)
        worst = max(worst, abs(diff))
    return _at_most("zhcc_equals_gamma0", worst, 1e-12)


def run_checks(perturb_g_exponent: float = 1.0) -> list[CheckResult]:
    """Run every check. ``perturb_g_exponent`` scales gamma inside g (negative control)."""
    if perturb_g_exponent == 1.0:
        g_func = g
    else:
        def g_func(pi, a, b, gamma):
            return g(pi, a, b, gamma * perturb_g_exponent)

    return [
        check_variance_identity(),
        check_g_expansion(g_func),
        check_score(),
        check_target_gradient(),
        check_grad_rho(),
        check_g_symmetry(g_func),
        check_g_monotone(g_func),
        check_burn_in(),
        check_zhcc_equivalence(),
    ]
