"""Limiting quantities for two-arm covariate-adjusted adaptive designs.

For a target ``pi1(theta, x)`` and covariate law ``xi``:

* ``v = E pi1``, the limiting share of arm 1;
* ``I_k = E[pi_k I_k(theta_k | xi)]`` and ``V = diag(I_1^-1, I_2^-1)``;
* ``sigma1^2 = E[pi1 (1 - pi1)]``, ``sigma2^2 = Var pi1``,
  ``sigma3^2 = g V g'`` with ``g = E d pi1 / d theta``;
* ``lambda = gamma sigma1^2 / (v (1 - v))`` and the asymptotic variance of
  ``sqrt(n) (N1/n - v)``

      sigma^2(gamma) = (sigma1^2 + sigma3^2) / (1 + 2 lambda) + sigma2^2 + sigma3^2,

  which falls from ``2 sigma3^2 + v(1 - v)`` at ``gamma = 0`` to the lower
  bound ``B = sigma2^2 + sigma3^2`` as ``gamma`` grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .covariates import DEFAULT_MC_SAMPLES, DEFAULT_MC_SEED, CovariateDistribution
from .glm import ArmModel
from .targets import TargetFunction

SINGULAR_TOL = 1e-10


class SingularInformationError(np.linalg.LinAlgError):
    def __init__(self, arm: int, eigmin: float):
        super().__init__(f"information matrix of arm {arm} is singular (smallest eigenvalue {eigmin:.3g})")
        self.arm = arm


def _arm_information(arm: ArmModel, points, weights, alloc) -> np.ndarray:
    """sum_j w_j alloc_j a''(x_j theta) / phi outer(x_j, x_j)."""
    var = arm.family.variance_function(points @ arm.theta) / arm.family.phi
    coef = weights * alloc * var
    return (points * coef[:, None]).T @ points


def _check_nonsingular(info: np.ndarray, k: int) -> None:
    eig = np.linalg.eigvalsh(info)
    if eig[0] <= SINGULAR_TOL * max(1.0, eig[-1]):
        raise SingularInformationError(k, float(eig[0]))


def information(
    k: int,
    arms: tuple[ArmModel, ArmModel],
    target: TargetFunction,
    dist: CovariateDistribution,
    *,
    n_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = DEFAULT_MC_SEED,
) -> np.ndarray:
    """Allocation-weighted Fisher information of arm ``k`` (1 or 2)."""
    if k not in (1, 2):
        raise ValueError("arm index must be 1 or 2")
    points, weights = dist.integration_points(n_samples, seed)
    pi1 = np.broadcast_to(target.evaluate((arms[0].theta, arms[1].theta), points), weights.shape)
    alloc = pi1 if k == 1 else 1.0 - pi1
    info = _arm_information(arms[k - 1], points, weights, alloc)
    _check_nonsingular(info, k)
    return info


@dataclass(frozen=True, eq=False)
class AsymptoticSummary:
    v: float
    grad_rho: np.ndarray
    info: tuple[np.ndarray, np.ndarray]
    V: np.ndarray
    sigma1_sq: float
    sigma2_sq: float
    sigma3_sq: float
    gamma: float
    exact: bool
    mc_standard_errors: dict

    @property
    def rho(self) -> np.ndarray:
        return np.array([self.v, 1.0 - self.v])

    @property
    def B(self) -> float:
        return self.sigma2_sq + self.sigma3_sq

    @property
    def sigma_zhcc(self) -> float:
        return 2.0 * self.sigma3_sq + self.v * (1.0 - self.v)

    def lam(self, gamma: float | None = None) -> float:
        gamma = self.gamma if gamma is None else gamma
        if math.isinf(gamma):
            return math.inf
        return gamma * self.sigma1_sq / (self.v * (1.0 - self.v))

    def sigma_sq(self, gamma: float | None = None) -> float:
        return self.efficiency_gap(gamma) + self.B

    def efficiency_gap(self, gamma: float | None = None) -> float:
        """sigma^2(gamma) - B = (sigma1^2 + sigma3^2) / (1 + 2 lambda)."""
        lam = self.lam(gamma)
        if math.isinf(lam):
            return 0.0
        return (self.sigma1_sq + self.sigma3_sq) / (1.0 + 2.0 * lam)

    def _allocation_matrix(self, scale: float, extra: np.ndarray) -> np.ndarray:
        # Arm 2's share is 1 - arm 1's, so both gradients are +-grad_rho.
        g = np.vstack([self.grad_rho, -self.grad_rho])
        return scale * g @ self.V @ g.T + extra

    def B_matrix(self) -> np.ndarray:
        return self._allocation_matrix(1.0, self.sigma2_sq * np.array([[1.0, -1.0], [-1.0, 1.0]]))

    def sigma_zhcc_matrix(self) -> np.ndarray:
        rho = self.rho
        return self._allocation_matrix(2.0, np.diag(rho) - np.outer(rho, rho))

    def to_dict(self) -> dict:
        return {
            "v": self.v,
            "rho": self.rho.tolist(),
            "grad_rho": self.grad_rho.tolist(),
            "I1": self.info[0].tolist(),
            "I2": self.info[1].tolist(),
            "V": self.V.tolist(),
            "sigma1_sq": self.sigma1_sq,
            "sigma2_sq": self.sigma2_sq,
            "sigma3_sq": self.sigma3_sq,
            "gamma": _json_gamma(self.gamma),
            "lambda": _json_gamma(self.lam()),
            "sigma_sq": self.sigma_sq(),
            "B": self.B,
            "B_matrix": self.B_matrix().tolist(),
            "sigma_zhcc": self.sigma_zhcc,
            "sigma_zhcc_matrix": self.sigma_zhcc_matrix().tolist(),
            "exact": self.exact,
            "mc_standard_errors": self.mc_standard_errors,
        }


def _json_gamma(value: float):
    return "inf" if math.isinf(value) else value


def summary(
    arms: tuple[ArmModel, ArmModel],
    dist: CovariateDistribution,
    target: TargetFunction,
    gamma: float = 0.0,
    *,
    n_samples: int = DEFAULT_MC_SAMPLES,
    seed: int = DEFAULT_MC_SEED,
) -> AsymptoticSummary:
    """All limiting quantities at the true parameters of ``arms``.

    Discrete covariate laws are integrated exactly over their atoms. A
    continuous law uses one fixed Monte Carlo sample for every expectation,
    so identities such as ``sigma1^2 + sigma2^2 = v (1 - v)`` hold to
    rounding; the sampling error of each scalar is reported alongside.
    """
    points, weights = dist.integration_points(n_samples, seed)
    theta = (arms[0].theta, arms[1].theta)
    pi1 = np.broadcast_to(np.asarray(target.evaluate(theta, points), dtype=float), weights.shape)
    grads = np.broadcast_to(target.gradient(theta, points), (weights.size, 2 * arms[0].d))

    v = float(weights @ pi1)
    sigma1_sq = float(weights @ (pi1 * (1.0 - pi1)))
    sigma2_sq = float(weights @ (pi1 - v) ** 2)
    grad_rho = weights @ grads

    infos = []
    for k, alloc in ((1, pi1), (2, 1.0 - pi1)):
        info = _arm_information(arms[k - 1], points, weights, alloc)
        _check_nonsingular(info, k)
        infos.append(info)
    d = arms[0].d
    V = np.zeros((2 * d, 2 * d))
    V[:d, :d] = np.linalg.inv(infos[0])
    V[d:, d:] = np.linalg.inv(infos[1])
    sigma3_sq = float(grad_rho @ V @ grad_rho)

    exact = dist.is_discrete()
    ses = {}
    if not exact:
        root_m = math.sqrt(weights.size)
        ses = {
            "v": float(np.std(pi1, ddof=1) / root_m),
            "sigma1_sq": float(np.std(pi1 * (1.0 - pi1), ddof=1) / root_m),
            "sigma2_sq": float(np.std((pi1 - v) ** 2, ddof=1) / root_m),
            "grad_rho": (np.std(grads, axis=0, ddof=1) / root_m).tolist(),
        }
    return AsymptoticSummary(
        v=v,
        grad_rho=np.asarray(grad_rho, dtype=float),
        info=(infos[0], infos[1]),
        V=V,
        sigma1_sq=sigma1_sq,
        sigma2_sq=sigma2_sq,
        sigma3_sq=sigma3_sq,
        gamma=float(gamma),
        exact=exact,
        mc_standard_errors=ses,
    )


def efficiency_gap(summary: AsymptoticSummary, gamma: float) -> float:
    return summary.efficiency_gap(gamma)


def rho_of_theta(theta, target: TargetFunction, dist: CovariateDistribution, **kwargs) -> float:
    """rho(theta) = E pi1(theta, xi), for finite-difference checks of grad_rho."""
    points, weights = dist.integration_points(**kwargs)
    pi1 = np.broadcast_to(target.evaluate(theta, points), weights.shape)
    return float(weights @ pi1)
