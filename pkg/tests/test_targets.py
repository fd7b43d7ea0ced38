import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cara_lab.glm import BERNOULLI, POISSON
from cara_lab.targets import (
    FINITE_DIFFERENCE,
    P_CLAMP,
    RSIHR,
    Composite,
    Fixed,
    NeymanBinary,
    evaluate,
    gradient,
)

coef = st.lists(st.floats(-10, 10), min_size=2, max_size=2)
covar = st.lists(st.floats(-3, 3), min_size=1, max_size=1).map(lambda v: [1.0] + v)


@settings(max_examples=50)
@given(coef, covar)
def test_rsihr_equal_arms_is_half(theta, x):
    assert evaluate(RSIHR(), (theta, theta), x) == pytest.approx(0.5, abs=1e-15)


def test_fixed_is_constant():
    rng = np.random.default_rng(0)
    for _ in range(10):
        th = (rng.normal(size=2), rng.normal(size=2))
        assert evaluate(Fixed(0.7), th, [1.0, rng.normal()]) == 0.7
        np.testing.assert_array_equal(gradient(Fixed(0.7), th, [1.0, 0.3]), np.zeros(4))


def test_rsihr_point_value():
    # logit(0.8) = log 4, logit(0.2) = -log 4; sqrt(0.8) = 2 sqrt(0.2).
    th = ([np.log(4.0)], [-np.log(4.0)])
    assert evaluate(RSIHR(), th, [1.0]) == pytest.approx(2 / 3, abs=1e-12)


def test_binary_targets_reject_count_arms():
    with pytest.raises(ValueError):
        RSIHR(families=(POISSON, BERNOULLI))


@pytest.mark.parametrize("target", [RSIHR(), NeymanBinary()])
def test_analytic_gradient_matches_finite_differences(target):
    fd = type(target)(gradient_mode=FINITE_DIFFERENCE)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        th = (rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2))
        x = np.array([1.0, rng.normal()])
        worst = max(worst, np.max(np.abs(target.gradient(th, x) - fd.gradient(th, x))))
    assert worst < 1e-5


def test_rsihr_gradient_antisymmetric_at_equal_arms():
    th = ([0.3, -0.4], [0.3, -0.4])
    grad = RSIHR().gradient(th, [1.0, 0.8])
    np.testing.assert_allclose(grad[:2], -grad[2:], atol=1e-15)


def test_vectorised_gradient_matches_rowwise():
    th = ([0.5, 0.5], [-0.5, 0.5])
    xs = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, -2.0]])
    stacked = RSIHR().gradient(th, xs)
    rows = np.array([RSIHR().gradient(th, x) for x in xs])
    np.testing.assert_allclose(stacked, rows, atol=1e-15)


@pytest.mark.parametrize("target", [RSIHR(), NeymanBinary()])
def test_swapping_arms_complements(target):
    rng = np.random.default_rng(2)
    for _ in range(30):
        t1, t2 = rng.uniform(-4, 4, 2), rng.uniform(-4, 4, 2)
        x = [1.0, rng.normal()]
        assert abs(target.evaluate((t2, t1), x) - (1 - target.evaluate((t1, t2), x))) < 1e-15


@pytest.mark.parametrize("target", [RSIHR(), NeymanBinary()])
def test_bounded_away_from_zero_and_one_on_box(target):
    grid = np.linspace(-10, 10, 9)
    xs = np.array([[1.0, v] for v in (-1.0, 0.0, 1.0)])
    lo, hi = 1.0, 0.0
    for a in grid:
        for b in grid:
            for c in grid:
                for d in grid:
                    vals = target.evaluate(([a, b], [c, d]), xs)
                    lo, hi = min(lo, vals.min()), max(hi, vals.max())
    eps = 1e-4  # with p clamped to [1e-6, 1 - 1e-6], pi1 >= ~1e-3
    assert lo > eps and hi < 1 - eps


def test_clamp_constant():
    assert P_CLAMP == 1e-6


def test_composite_hook():
    half = Composite(func=lambda p1, p2: p1 / (p1 + p2), partials=lambda p1, p2: (p2 / (p1 + p2) ** 2, -p1 / (p1 + p2) ** 2))
    fd = Composite(func=half.func)
    th = ([0.2, 0.1], [-0.3, 0.4])
    x = [1.0, 0.5]
    assert half.evaluate(th, x) == pytest.approx(fd.evaluate(th, x))
    np.testing.assert_allclose(half.gradient(th, x), fd.gradient(th, x), atol=1e-8)
