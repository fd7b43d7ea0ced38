"""Replicated trials compared against their limiting theory.

Replication ``r`` runs with seed ``split_seed(base_seed, r)``. Per-replication
summaries are collected in replication order before any reduction, and the
reductions use exactly rounded sums, so a report does not depend on how many
worker processes produced it.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .asymptotics import AsymptoticSummary, summary
from .covariates import ContinuousCovariateError
from .designs import CADBCD, ZHCC, CompleteRandomization
from .targets import Fixed
from .trial import TrialConfig, run_trial

_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15

SKEW_LIMIT = 0.15
KURTOSIS_LIMIT = 0.3
VARIANCE_REL_TOL = 0.20
COVARIANCE_REL_TOL = 0.25


def _mix64(z: int) -> int:
    """SplitMix64 output finaliser."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def split_seed(base_seed: int, r: int) -> int:
    """64-bit seed of replication ``r``: mix(mix(base) + (r + 1) * golden)."""
    return _mix64(_mix64(base_seed) + (r + 1) * _GOLDEN64)


@dataclass(frozen=True, eq=False)
class MCConfig:
    template: TrialConfig
    replications: int
    base_seed: int = 0

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("at least two replications are required")


@dataclass(frozen=True)
class Comparison:
    name: str
    empirical: float
    theoretical: float
    se: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "empirical": self.empirical,
            "theoretical": self.theoretical,
            "se": self.se,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def _compare(name, empirical, theoretical, se, tolerance) -> Comparison:
    ok = bool(abs(empirical - theoretical) <= tolerance)
    return Comparison(name, float(empirical), float(theoretical), float(se), float(tolerance), ok)


def _mean(x) -> float:
    return math.fsum(x) / len(x)


def _central_moment(x, k: int, center: float) -> float:
    return math.fsum((xi - center) ** k for xi in x) / len(x)


def _sample_variance(x) -> float:
    c = _mean(x)
    return math.fsum((xi - c) ** 2 for xi in x) / (len(x) - 1)


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    n: int
    replications: int
    base_seed: int
    gamma: float
    theory: AsymptoticSummary
    proportions: np.ndarray = field(repr=False)
    mean_proportion: float
    variance_scaled: float
    skewness: float
    excess_kurtosis: float
    strata: list[dict] | None
    theta_covariance: np.ndarray
    fit_failures: int
    replications_with_failures: int
    comparisons: list[Comparison]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.comparisons)

    def comparison(self, name: str) -> Comparison:
        for c in self.comparisons:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "replications": self.replications,
            "base_seed": self.base_seed,
            "gamma": "inf" if math.isinf(self.gamma) else self.gamma,
            "mean_proportion": self.mean_proportion,
            "variance_scaled": self.variance_scaled,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
            "strata": self.strata,
            "theta_covariance": self.theta_covariance.tolist(),
            "fit_failures": self.fit_failures,
            "replications_with_failures": self.replications_with_failures,
            "all_passed": self.all_passed,
            "comparisons": [c.to_dict() for c in self.comparisons],
            "theory": self.theory.to_dict(),
        }


def effective_design(template: TrialConfig):
    """Target and gamma whose theory describes ``template.policy``."""
    policy = template.policy
    if isinstance(policy, CompleteRandomization):
        return Fixed(policy.p, families=template.target.families), 0.0
    if isinstance(policy, ZHCC):
        return template.target, 0.0
    if isinstance(policy, CADBCD):
        return template.target, policy.gamma
    raise TypeError(f"unknown policy {policy!r}")


def _replicate(template: TrialConfig, seed: int) -> dict:
    res = run_trial(replace(template, seed=seed, keep_history=False))
    return {
        "proportion": res.proportion,
        "theta": np.concatenate([np.array(t) for t in res.theta_hat]),
        "strata": None if res.strata is None else [(s.n_x, s.n1_x, s.psi_mean) for s in res.strata],
        "failures": sum(res.fit_failures),
    }


def _run_chunk(args):
    template, seeds = args
    return [_replicate(template, s) for s in seeds]


def simulate_replications(mc: MCConfig, workers: int = 1) -> list[dict]:
    seeds = [split_seed(mc.base_seed, r) for r in range(mc.replications)]
    if workers <= 1:
        return [_replicate(mc.template, s) for s in seeds]
    size = math.ceil(len(seeds) / (4 * workers))
    chunks = [(mc.template, seeds[i : i + size]) for i in range(0, len(seeds), size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, chunks))
    return [rec for part in parts for rec in part]


def run(mc: MCConfig, workers: int = 1) -> MonteCarloReport:
    template = mc.template
    target, gamma = effective_design(template)
    theory = summary(template.arms, template.covariates, target, gamma)
    records = simulate_replications(mc, workers)
    return _reduce(mc, theory, target, gamma, records)


def _reduce(mc, theory, target, gamma, records) -> MonteCarloReport:
    template = mc.template
    n, R = template.n, mc.replications
    props = np.array([rec["proportion"] for rec in records])
    scaled = [math.sqrt(n) * (p - theory.v) for p in props]
    sigma_sq = theory.sigma_sq(gamma)

    mean_prop = _mean(props)
    c = _mean(scaled)
    var = math.fsum((s - c) ** 2 for s in scaled) / (R - 1)
    m2 = _central_moment(scaled, 2, c)
    m3 = _central_moment(scaled, 3, c)
    m4 = _central_moment(scaled, 4, c)
    skew = m3 / m2**1.5 if m2 > 0 else 0.0
    exkurt = m4 / m2**2 - 3.0 if m2 > 0 else 0.0
    var_se = math.sqrt(max(m4 - m2 * m2, 0.0) / R)

    comparisons = []
    mean_se = math.sqrt(sigma_sq / (n * R))
    comparisons.append(_compare("mean_proportion", mean_prop, theory.v, mean_se, 3.0 * mean_se))
    comparisons.append(
        _compare("variance", var, sigma_sq, var_se, max(VARIANCE_REL_TOL * sigma_sq, 3.0 * var_se))
    )

    strata = None
    if records[0]["strata"] is not None:
        atoms, _ = template.covariates.atom_matrix()
        true_theta = template.true_theta()
        strata = []
        for a, x in enumerate(atoms):
            pi_x = float(target.evaluate(true_theta, x))
            fracs = [rec["strata"][a][1] / rec["strata"][a][0] for rec in records if rec["strata"][a][0] > 0]
            psis = [rec["strata"][a][2] for rec in records if not math.isnan(rec["strata"][a][2])]
            row = {"x": x.tolist(), "target": pi_x, "replications": len(fracs)}
            label = ",".join(f"{v:g}" for v in x)
            if len(fracs) >= 2:
                row["proportion"] = _mean(fracs)
                row["se"] = math.sqrt(_sample_variance(fracs) / len(fracs))
                comparisons.append(
                    _compare(f"stratum[{label}]", row["proportion"], pi_x, row["se"], 3.0 * row["se"])
                )
            if len(psis) >= 2:
                row["psi_mean"] = _mean(psis)
                row["psi_se"] = math.sqrt(_sample_variance(psis) / len(psis))
                comparisons.append(
                    _compare(f"psi[{label}]", row["psi_mean"], pi_x, row["psi_se"], 3.0 * row["psi_se"])
                )
            strata.append(row)

    thetas = np.array([rec["theta"] for rec in records])
    z = math.sqrt(n) * (thetas - np.concatenate(template.true_theta()))
    zc = z - np.array([_mean(col) for col in z.T])
    p = z.shape[1]
    cov = np.zeros((p, p))
    for i in range(p):
        for j in range(p):
            prods = zc[:, i] * zc[:, j]
            cov[i, j] = math.fsum(prods) / (R - 1)
            se = math.sqrt(_sample_variance(prods) / R)
            target_v = theory.V[i, j]
            comparisons.append(
                _compare(f"theta_cov[{i},{j}]", cov[i, j], target_v, se, max(COVARIANCE_REL_TOL * abs(target_v), 3.0 * se))
            )

    comparisons.append(_compare("skewness", skew, 0.0, math.sqrt(6.0 / R), SKEW_LIMIT))
    comparisons.append(_compare("excess_kurtosis", exkurt, 0.0, math.sqrt(24.0 / R), KURTOSIS_LIMIT))

    failures = [rec["failures"] for rec in records]
    return MonteCarloReport(
        n=n,
        replications=R,
        base_seed=mc.base_seed,
        gamma=gamma,
        theory=theory,
        proportions=props,
        mean_proportion=mean_prop,
        variance_scaled=var,
        skewness=skew,
        excess_kurtosis=exkurt,
        strata=strata,
        theta_covariance=cov,
        fit_failures=int(sum(failures)),
        replications_with_failures=int(sum(1 for f in failures if f)),
        comparisons=comparisons,
    )


def stratum_report(report: MonteCarloReport) -> list[dict]:
    """Per-atom mean arm-1 share against the target at the true parameters."""
    if report.strata is None:
        raise ContinuousCovariateError("stratum_report needs a discrete covariate law; use trial.ball_proportion")
    rows = []
    for row in report.strata:
        prop = row.get("proportion", math.nan)
        rows.append(
            {
                "x": row["x"],
                "proportion": prop,
                "target": row["target"],
                "deviation": prop - row["target"],
                "se": row.get("se", math.nan),
            }
        )
    return rows
