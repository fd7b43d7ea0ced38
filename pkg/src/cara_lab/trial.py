"""Sequential simulation of a single two-arm trial.

Each step draws the next subject's covariate, assigns an arm (permuted
burn-in block first, then the policy), observes only the assigned arm's
response, refits that arm by maximum likelihood and recomputes

    rho_hat_m = (1/m) * sum_i pi1(theta_hat_m, xi_i)

over every covariate seen so far. With a discrete covariate law the sum is
taken atom by atom and each arm's likelihood is kept as per-atom sufficient
statistics, so a step costs O(#atoms) instead of O(m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .covariates import CovariateDistribution
from .designs import (
    CompleteRandomization,
    Policy,
    allocation_probability,
    burnin_assignment,
    burnin_schedule,
    default_m0,
)
from .glm import ArmData, ArmModel, DimensionError, fit_mle
from .targets import TargetFunction

SNAPSHOT_GROWTH = 1.5


@dataclass(frozen=True, eq=False)
class TrialConfig:
    n: int
    arms: tuple[ArmModel, ArmModel]
    covariates: CovariateDistribution
    target: TargetFunction
    policy: Policy
    refit_stride: int = 1
    seed: int = 0
    theta0: tuple | None = None
    keep_history: bool = False
    exact_rho: bool = True

    def __post_init__(self):
        if len(self.arms) != 2:
            raise ValueError("trials have exactly two arms")
        for arm in self.arms:
            if arm.d != self.covariates.d:
                raise DimensionError(f"arm has {arm.d} coefficients but covariates have dimension {self.covariates.d}")
        if self.refit_stride < 1:
            raise ValueError("refit_stride must be at least 1")
        if self.n <= 2 * self.m0:
            raise ValueError(f"horizon n={self.n} must exceed the burn-in length 2*m0={2 * self.m0}")

    @property
    def d(self) -> int:
        return self.covariates.d

    @property
    def m0(self) -> int:
        return self.policy.m0 if self.policy.m0 is not None else default_m0(self.d)

    def initial_theta(self) -> tuple[np.ndarray, np.ndarray]:
        if self.theta0 is None:
            return tuple(arm.box_center() for arm in self.arms)
        return tuple(np.array(t, dtype=float) for t in self.theta0)

    def true_theta(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(arm.theta for arm in self.arms)


def snapshot_grid(m0: int, n: int) -> list[int]:
    grid = [2 * m0]
    while grid[-1] < n:
        grid.append(min(n, math.ceil(grid[-1] * SNAPSHOT_GROWTH)))
    return grid


class TrialState:
    """Mutable history of one trial; ``step`` advances it in place."""

    def __init__(self, config: TrialConfig, rng: np.random.Generator):
        n, d = config.n, config.d
        self.m = 0
        self.m0 = config.m0
        self.counts = np.zeros(2, dtype=np.int64)
        # Covariates are i.i.d. and independent of everything else, so the
        # whole stream is drawn up front; only covariates[:m] are ever read.
        self.covariates = config.covariates.sample_many(rng, n)
        self.assignments = np.zeros(n, dtype=np.int8)
        self.responses = np.zeros(n)
        self.psi = np.full(n, np.nan)
        self.theta_hat = [t.copy() for t in config.initial_theta()]
        self.rho_hat = math.nan
        self.schedule = burnin_schedule(self.m0, rng)
        self.fit_attempts = np.zeros(2, dtype=np.int64)
        self.fit_failures = np.zeros(2, dtype=np.int64)
        self.snapshots: list[tuple[int, float, float]] = []
        self._snapshot_at = set(snapshot_grid(self.m0, n))
        self._dirty = [False, False]

        self.discrete = config.covariates.is_discrete()
        if self.discrete:
            self.atoms, _ = config.covariates.atom_matrix()
            self.atom_of = np.array([config.covariates.atom_index(x) for x in self.covariates], dtype=np.int64)
            n_atoms = self.atoms.shape[0]
            self.atom_counts = np.zeros((2, n_atoms), dtype=np.int64)
            self.atom_ysum = np.zeros((2, n_atoms))
        else:
            self.arm_rows = np.zeros(2, dtype=np.int64)
            self.arm_x = np.zeros((2, n, d))
            self.arm_y = np.zeros((2, n))

    def arm_data(self, k: int) -> ArmData:
        """Observed sample of arm ``k`` (0-based), aggregated when discrete."""
        if self.discrete:
            w = self.atom_counts[k]
            seen = w > 0
            return ArmData(self.atoms[seen], self.atom_ysum[k, seen] / w[seen], w[seen])
        rows = self.arm_rows[k]
        return ArmData(self.arm_x[k, :rows], self.arm_y[k, :rows])

    def stratum_totals(self) -> np.ndarray:
        return self.atom_counts.sum(axis=0)


def _refit(state: TrialState, config: TrialConfig, k: int) -> None:
    arm = config.arms[k]
    theta, ok = fit_mle(arm.family, arm.box, state.arm_data(k), state.theta_hat[k])
    state.fit_attempts[k] += 1
    if not ok:
        state.fit_failures[k] += 1
    state.theta_hat[k] = theta
    state._dirty[k] = False


def _recompute_rho(state: TrialState, config: TrialConfig) -> None:
    theta = state.theta_hat
    if state.discrete:
        pis = config.target.evaluate(theta, state.atoms)
        state.rho_hat = float(np.dot(state.stratum_totals(), pis) / state.m)
    else:
        state.rho_hat = float(np.mean(config.target.evaluate(theta, state.covariates[: state.m])))


def step(state: TrialState, config: TrialConfig, rng: np.random.Generator) -> TrialState:
    """Enrol subject ``m + 1``."""
    m = state.m
    if m >= config.n:
        raise RuntimeError("trial horizon reached")
    xi = state.covariates[m]

    burn_end = 2 * state.m0
    if m + 1 <= burn_end:
        arm = burnin_assignment(m + 1, state.schedule) - 1
    else:
        psi = allocation_probability(config.policy, state, xi, config.target)
        state.psi[m] = psi
        arm = 0 if rng.random() < psi else 1

    y = config.arms[arm].family.sample(float(xi @ config.arms[arm].theta), rng)

    state.assignments[m] = arm + 1
    state.responses[m] = y
    state.counts[arm] += 1
    if state.discrete:
        a = state.atom_of[m]
        state.atom_counts[arm, a] += 1
        state.atom_ysum[arm, a] += y
    else:
        r = state.arm_rows[arm]
        state.arm_x[arm, r] = xi
        state.arm_y[arm, r] = y
        state.arm_rows[arm] += 1
    state._dirty[arm] = True
    state.m = m + 1

    # Adaptive policies need estimates from subject 2*m0 onward; complete
    # randomization never reads them but still tracks them for reporting.
    if state.m == burn_end:
        _refit(state, config, 0)
        _refit(state, config, 1)
        _recompute_rho(state, config)
    elif state.m > burn_end:
        if state.m % config.refit_stride == 0:
            for k in (0, 1):
                if state._dirty[k]:
                    _refit(state, config, k)
            _recompute_rho(state, config)
        elif config.exact_rho:
            _recompute_rho(state, config)

    if state.m in state._snapshot_at:
        state.snapshots.append((state.m, float(state.counts[0] / state.m), state.rho_hat))
    return state


@dataclass(frozen=True)
class StratumRow:
    x: tuple[float, ...]
    n_x: int
    n1_x: int
    proportion: float
    psi_mean: float


@dataclass(frozen=True, eq=False)
class TrialResult:
    n: int
    counts: tuple[int, int]
    theta_hat: tuple[tuple[float, ...], tuple[float, ...]]
    snapshots: list[tuple[int, float, float]]
    fit_attempts: tuple[int, int]
    fit_failures: tuple[int, int]
    strata: list[StratumRow] | None = None
    history: dict | None = field(default=None, repr=False)

    @property
    def proportion(self) -> float:
        return self.counts[0] / self.n

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "counts": list(self.counts),
            "proportion": self.proportion,
            "theta_hat": [list(t) for t in self.theta_hat],
            "snapshots": [{"m": m, "proportion": p, "rho_hat": r} for m, p, r in self.snapshots],
            "fit_attempts": list(self.fit_attempts),
            "fit_failures": list(self.fit_failures),
        }
        if self.strata is not None:
            out["strata"] = [
                {"x": list(s.x), "n_x": s.n_x, "n1_x": s.n1_x, "proportion": s.proportion, "psi_mean": s.psi_mean}
                for s in self.strata
            ]
        if self.history is not None:
            out["history"] = {
                "covariates": self.history["covariates"].tolist(),
                "assignments": self.history["assignments"].tolist(),
                "psi": [None if math.isnan(p) else p for p in self.history["psi"].tolist()],
                "ball_columns": list(self.history["ball_columns"]),
            }
        return out


def _ball_columns(dist: CovariateDistribution) -> list[int]:
    from .covariates import Intercept

    cols, start = [], 0
    for comp in dist.components:
        if not isinstance(comp, Intercept):
            cols.extend(range(start, start + comp.dim))
        start += comp.dim
    return cols


def _result(state: TrialState, config: TrialConfig) -> TrialResult:
    strata = None
    if state.discrete:
        second_half = np.arange(config.n) >= config.n // 2
        strata = []
        for a, x in enumerate(state.atoms):
            n1 = int(state.atom_counts[0, a])
            n_x = n1 + int(state.atom_counts[1, a])
            in_atom = (state.atom_of == a) & second_half & ~np.isnan(state.psi)
            psi_mean = float(state.psi[in_atom].mean()) if in_atom.any() else math.nan
            strata.append(StratumRow(tuple(float(v) for v in x), n_x, n1, n1 / n_x if n_x else math.nan, psi_mean))
    history = None
    if config.keep_history:
        history = {
            "covariates": state.covariates.copy(),
            "assignments": state.assignments.copy(),
            "psi": state.psi.copy(),
            "ball_columns": _ball_columns(config.covariates),
        }
    return TrialResult(
        n=config.n,
        counts=(int(state.counts[0]), int(state.counts[1])),
        theta_hat=tuple(tuple(float(v) for v in t) for t in state.theta_hat),
        snapshots=list(state.snapshots),
        fit_attempts=(int(state.fit_attempts[0]), int(state.fit_attempts[1])),
        fit_failures=(int(state.fit_failures[0]), int(state.fit_failures[1])),
        strata=strata,
        history=history,
    )


def run_trial(config: TrialConfig, seed: int | None = None) -> TrialResult:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    state = TrialState(config, rng)
    for _ in range(config.n):
        step(state, config, rng)
    return _result(state, config)


def ball_proportion(result: TrialResult, x_center, r: float):
    """Arm-1 share among subjects whose covariate lies within ``r`` of ``x_center``.

    Distances use the non-intercept coordinates only. Returns
    ``(n1_in_ball, n_in_ball, ratio)`` with ``ratio`` None for an empty ball.
    """
    if result.history is None:
        raise ValueError("ball_proportion needs a trial run with keep_history=True")
    if not r > 0:
        raise ValueError("radius must be positive")
    cols = result.history["ball_columns"]
    xs = result.history["covariates"][:, cols]
    center = np.asarray(x_center, dtype=float)[cols]
    inside = np.linalg.norm(xs - center, axis=1) <= r
    n_in = int(inside.sum())
    n1_in = int(np.sum(inside & (result.history["assignments"] == 1)))
    return n1_in, n_in, (n1_in / n_in if n_in else None)
