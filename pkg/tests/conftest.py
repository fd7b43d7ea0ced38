import numpy as np
import pytest

from cara_lab.covariates import Bernoulli, CovariateDistribution, Intercept
from cara_lab.designs import CADBCD
from cara_lab.glm import BERNOULLI, ArmModel
from cara_lab.targets import RSIHR
from cara_lab.trial import TrialConfig

REF_THETA = ((0.5, 0.5), (-0.5, 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ref_arms():
    return (ArmModel(BERNOULLI, REF_THETA[0]), ArmModel(BERNOULLI, REF_THETA[1]))


@pytest.fixture
def ref_dist():
    return CovariateDistribution([Intercept(), Bernoulli(0.5)])


def reference_config(gamma=1.0, n=2000, seed=0, **kwargs):
    return TrialConfig(
        n,
        (ArmModel(BERNOULLI, REF_THETA[0]), ArmModel(BERNOULLI, REF_THETA[1])),
        CovariateDistribution([Intercept(), Bernoulli(0.5)]),
        RSIHR(),
        CADBCD(gamma, m0=5),
        seed=seed,
        **kwargs,
    )


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.LINES:
            terminalreporter.write_line(line)
