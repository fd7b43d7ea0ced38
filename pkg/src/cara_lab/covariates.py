"""Covariate laws: independent components stacked into one vector.

Discrete laws can be enumerated atom by atom, which lets every expectation be
computed exactly. Continuous laws fall back to a fixed-seed Monte Carlo
sample.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

DEFAULT_MC_SAMPLES = 200_000
DEFAULT_MC_SEED = 20_240_917


class ContinuousCovariateError(ValueError):
    """Raised when atoms are requested from a law with a continuous part."""


@dataclass(frozen=True)
class Intercept:
    dim = 1

    def sample(self, rng, size):
        return np.ones((size, 1))

    def atoms(self):
        return [((1.0,), 1.0)]


@dataclass(frozen=True)
class Bernoulli:
    p: float
    dim = 1

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("Bernoulli p must lie in (0, 1)")

    def sample(self, rng, size):
        return (rng.random((size, 1)) < self.p).astype(float)

    def atoms(self):
        return [((0.0,), 1.0 - self.p), ((1.0,), self.p)]


@dataclass(frozen=True)
class Categorical:
    """Dummy-coded categorical; level 0 is the dropped reference level."""

    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if len(probs) < 2 or any(not 0.0 < p < 1.0 for p in probs):
            raise ValueError("Categorical needs at least two probabilities in (0, 1)")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ValueError("Categorical probabilities must sum to 1")
        object.__setattr__(self, "probs", probs)

    @property
    def dim(self) -> int:
        return len(self.probs) - 1

    def _code(self, level: int) -> tuple[float, ...]:
        return tuple(1.0 if j == level - 1 else 0.0 for j in range(self.dim))

    def sample(self, rng, size):
        cdf = np.cumsum(self.probs)
        levels = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), len(self.probs) - 1)
        out = np.zeros((size, self.dim))
        hit = levels > 0
        out[np.nonzero(hit)[0], levels[hit] - 1] = 1.0
        return out

    def atoms(self):
        return [(self._code(level), p) for level, p in enumerate(self.probs)]


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float
    dim = 1

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("Uniform needs b > a")

    def sample(self, rng, size):
        return rng.uniform(self.a, self.b, (size, 1))

    def atoms(self):
        return None


@dataclass(frozen=True)
class Gaussian:
    mean: float
    sd: float
    dim = 1

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("Gaussian sd must be positive")

    def sample(self, rng, size):
        return rng.normal(self.mean, self.sd, (size, 1))

    def atoms(self):
        return None


class Expectation(NamedTuple):
    value: object
    se: object


class CovariateDistribution:
    """Product law of independent components, i.i.d. across subjects."""

    def __init__(self, components: Sequence):
        if not components:
            raise ValueError("at least one covariate component is required")
        self.components = tuple(components)
        self.d = sum(c.dim for c in self.components)
        self._atoms = None
        if self.is_discrete():
            self._atoms = self._build_atoms()
            self._atom_index = {x: i for i, (x, _) in enumerate(self._atoms)}

    def __repr__(self):
        return f"CovariateDistribution({list(self.components)!r})"

    def is_discrete(self) -> bool:
        return all(c.atoms() is not None for c in self.components)

    def _build_atoms(self):
        atoms = []
        for combo in itertools.product(*(c.atoms() for c in self.components)):
            x = tuple(v for part, _ in combo for v in part)
            atoms.append((x, math.prod(p for _, p in combo)))
        return atoms

    def enumerate_atoms(self) -> list[tuple[np.ndarray, float]]:
        if self._atoms is None:
            raise ContinuousCovariateError(f"{self!r} has a continuous component; it has no atoms")
        return [(np.array(x), p) for x, p in self._atoms]

    def atom_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Atoms stacked as rows, with their probabilities."""
        atoms = self.enumerate_atoms()
        return np.array([x for x, _ in atoms]), np.array([p for _, p in atoms])

    def atom_index(self, x) -> int:
        """Position of ``x`` in :meth:`enumerate_atoms`."""
        if self._atoms is None:
            raise ContinuousCovariateError(f"{self!r} has a continuous component; it has no atoms")
        return self._atom_index[tuple(float(v) for v in x)]

    def sample_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.hstack([c.sample(rng, size) for c in self.components])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_many(rng, 1)[0]

    def integration_points(self, n_samples=DEFAULT_MC_SAMPLES, seed=DEFAULT_MC_SEED):
        """Points and weights such that ``E f = sum(w * f(points))``.

        Exact atoms for a discrete law; otherwise an equally weighted
        fixed-seed sample, so repeated calls see the same points.
        """
        if self._atoms is not None:
            return self.atom_matrix()
        points = self.sample_many(np.random.default_rng(seed), n_samples)
        return points, np.full(n_samples, 1.0 / n_samples)

    def expect(
        self,
        f: Callable,
        mode: str = "auto",
        *,
        vectorized: bool = False,
        n_samples: int = DEFAULT_MC_SAMPLES,
        seed: int = DEFAULT_MC_SEED,
    ) -> Expectation:
        """E[f(xi)] with its standard error (zero when exact).

        ``mode`` is ``"auto"``, ``"exact"`` or ``"mc"``. With ``vectorized``
        the callable receives the whole ``(M, d)`` point array at once.
        """
        if mode not in ("auto", "exact", "mc"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "exact" and self._atoms is None:
            raise ContinuousCovariateError("exact expectation needs a discrete law")
        if mode == "mc":
            points = self.sample_many(np.random.default_rng(seed), n_samples)
            weights = np.full(n_samples, 1.0 / n_samples)
            exact = False
        else:
            points, weights = self.integration_points(n_samples, seed)
            exact = self._atoms is not None
        values = f(points) if vectorized else np.array([np.asarray(f(x), dtype=float) for x in points])
        values = np.asarray(values, dtype=float)
        mean = np.tensordot(weights, values, axes=(0, 0))
        if exact:
            return Expectation(mean, np.zeros_like(mean))
        m = points.shape[0]
        se = np.std(values, axis=0, ddof=1) / math.sqrt(m)
        return Expectation(mean, se)


def expect(dist: CovariateDistribution, f: Callable, mode: str = "auto", **kwargs) -> Expectation:
    return dist.expect(f, mode, **kwargs)
