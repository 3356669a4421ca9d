"""Reproducible scenario generation.

All randomness flows through counter-based Philox streams keyed by
``(seed, stream_id)`` with the block counter set from ``(source, index)``.
Scenario ``i`` of any source is therefore addressable directly: draws never
depend on how many scenarios were generated before it, and distinct
``stream_id`` values (e.g. optimization vs. validation) can never collide.

Normal variates are produced by applying the inverse normal CDF to 53-bit
uniforms on the open interval (0, 1), which keeps streams identical under
any vectorization of the draw order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError

_TWO53 = float(2**53)

# counter tags separating draw sources under one (seed, stream_id) key
_TAG_INITIAL_STATE = 0
_TAG_PARAMETERS = 1
_TAG_BROWNIAN = 2
_TAG_FIELD = 3


@dataclass(frozen=True)
class RandomSeed:
    """Root seed plus a stream id separating independent draw streams."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= int(v) < 2**64):
                raise ConfigurationError(f"{name} must be an unsigned 64-bit integer, got {v}")


def _generator(seed: RandomSeed, tag: int, index: int) -> np.random.Generator:
    # high counter words hold (tag, index): blocks are 2^128 draws apart,
    # so per-index streams can never overlap
    bitgen = np.random.Philox(counter=[0, 0, tag, index], key=[seed.seed, seed.stream_id])
    return np.random.Generator(bitgen)


def _standard_normal(gen: np.random.Generator, shape) -> np.ndarray:
    u = gen.integers(1, 2**53, size=shape, dtype=np.int64) / _TWO53
    return ndtri(u)


# ---------------------------------------------------------------------------
# distribution specs


@dataclass(frozen=True)
class Fixed:
    """Degenerate distribution: every draw equals ``value``."""

    value: tuple

    @property
    def dim(self) -> int:
        return len(self.value)

    def mean(self) -> np.ndarray:
        return np.asarray(self.value, dtype=float)

    def sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        return np.tile(self.mean(), (count, 1))


@dataclass(frozen=True)
class UniformBox:
    """Componentwise uniform draw on [low, high]."""

    low: tuple
    high: tuple

    def __post_init__(self):
        lo, hi = self.mean_bounds()
        if lo.shape != hi.shape:
            raise ConfigurationError("uniform bounds must have equal length")
        if np.any(lo > hi):
            raise ConfigurationError("uniform bounds require low <= high componentwise")

    def mean_bounds(self):
        return np.asarray(self.low, dtype=float), np.asarray(self.high, dtype=float)

    @property
    def dim(self) -> int:
        return len(self.low)

    def mean(self) -> np.ndarray:
        lo, hi = self.mean_bounds()
        return 0.5 * (lo + hi)

    def sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        lo, hi = self.mean_bounds()
        return lo + (hi - lo) * gen.random((count, self.dim))


@dataclass(frozen=True)
class GaussianVector:
    """Multivariate normal with the given mean and covariance."""

    mean_vector: tuple
    covariance: tuple  # row tuples, must be symmetric PSD

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        n = len(self.mean_vector)
        if cov.shape != (n, n):
            raise ConfigurationError("covariance shape must match mean dimension")
        if not np.allclose(cov, cov.T):
            raise ConfigurationError("covariance must be symmetric")
        eigs = np.linalg.eigvalsh(cov)
        if eigs.min() < -1e-12 * max(1.0, eigs.max()):
            raise ConfigurationError("covariance must be positive semidefinite")

    @property
    def dim(self) -> int:
        return len(self.mean_vector)

    def mean(self) -> np.ndarray:
        return np.asarray(self.mean_vector, dtype=float)

    def _factor(self) -> np.ndarray:
        cov = np.asarray(self.covariance, dtype=float)
        # eigen factor tolerates semidefinite covariances (exact zeros allowed)
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))

    def sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        z = _standard_normal(gen, (count, self.dim))
        return self.mean() + z @ self._factor().T


Sampler = Union[Fixed, UniformBox, GaussianVector]


# ---------------------------------------------------------------------------
# scenario sets


@dataclass(frozen=True)
class ScenarioSet:
    """M sampled uncertainty realizations on an S-step grid.

    ``brownian_increments[i, k]`` holds W_((k+1)dt) - W_(k dt) for scenario i;
    each component is N(0, dt). ``initial_states`` and ``parameters`` are the
    per-scenario epistemic draws, independent of the increments.
    """

    initial_states: np.ndarray      # (M, n)
    parameters: np.ndarray          # (M, q)
    brownian_increments: np.ndarray  # (M, S, noise_dim)
    dt: float

    def __post_init__(self):
        for arr in (self.initial_states, self.parameters, self.brownian_increments):
            arr.setflags(write=False)
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        M = self.initial_states.shape[0]
        if self.parameters.shape[0] != M or self.brownian_increments.shape[0] != M:
            raise ConfigurationError("scenario arrays disagree on sample count")

    @property
    def count(self) -> int:
        return self.initial_states.shape[0]

    @property
    def steps(self) -> int:
        return self.brownian_increments.shape[1]


def sample_scenarios(
    seed: RandomSeed,
    M: int,
    S: int,
    dt: float,
    initial_state: Sampler,
    parameters: Sampler | None = None,
    noise_dim: int | None = None,
) -> ScenarioSet:
    """Draw M iid scenarios: initial states, parameters, Brownian increments.

    Deterministic in all arguments; scenario i depends only on (seed, i).
    """
    if M < 1 or S < 1:
        raise ConfigurationError(f"need M >= 1 and S >= 1, got M={M}, S={S}")
    if dt <= 0:
        raise ConfigurationError(f"dt must be positive, got {dt}")
    n = initial_state.dim
    if noise_dim is None:
        noise_dim = n
    if noise_dim < 0 or n < 1:
        raise ConfigurationError("invalid state or noise dimension")

    x0 = np.empty((M, n))
    q = 0 if parameters is None else parameters.dim
    xi = np.empty((M, q))
    dW = np.empty((M, S, noise_dim))
    sqrt_dt = np.sqrt(dt)
    for i in range(M):
        x0[i] = initial_state.sample(_generator(seed, _TAG_INITIAL_STATE, i), 1)[0]
        if parameters is not None:
            xi[i] = parameters.sample(_generator(seed, _TAG_PARAMETERS, i), 1)[0]
        dW[i] = sqrt_dt * _standard_normal(_generator(seed, _TAG_BROWNIAN, i), (S, noise_dim))
    return ScenarioSet(initial_states=x0, parameters=xi, brownian_increments=dW, dt=float(dt))


# ---------------------------------------------------------------------------
# random cosine fields (spatially correlated epistemic uncertainty)


@dataclass(frozen=True)
class RandomFieldSpec:
    """Spec for a 1-D random field: mean level plus random cosine terms."""

    mean_level: float
    term_count: int = 30
    amplitude_range: tuple = (0.0, 0.1)
    frequency_range: tuple = (0.0, 10.0)
    phase_range: tuple = (0.0, 2.0 * np.pi)

    def __post_init__(self):
        if self.term_count < 1:
            raise ConfigurationError("term_count must be >= 1")
        for name in ("amplitude_range", "frequency_range", "phase_range"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ConfigurationError(f"{name} must be a non-empty interval, got ({lo}, {hi})")


@dataclass(frozen=True)
class RandomFieldRealization:
    """One frozen field draw: position -> mean_level + sum of cosines."""

    mean_level: float
    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray

    def __call__(self, position) -> np.ndarray:
        p = np.asarray(position, dtype=float)
        phase = np.multiply.outer(p, self.frequencies) + self.phases
        return self.mean_level + np.cos(phase) @ self.amplitudes

    @property
    def coefficients(self) -> np.ndarray:
        """(term_count, 3) array of (amplitude, frequency, phase) rows."""
        return np.stack([self.amplitudes, self.frequencies, self.phases], axis=1)


def sample_rff_field(seed: RandomSeed, spec: RandomFieldSpec, index: int = 0) -> RandomFieldRealization:
    """Draw one field realization; ``index`` addresses independent draws."""
    gen = _generator(seed, _TAG_FIELD, index)

    def uniform(rng_range, size):
        lo, hi = rng_range
        return lo + (hi - lo) * gen.random(size)

    tc = spec.term_count
    amplitudes = uniform(spec.amplitude_range, tc)
    frequencies = uniform(spec.frequency_range, tc)
    phases = uniform(spec.phase_range, tc)
    return RandomFieldRealization(
        mean_level=float(spec.mean_level),
        amplitudes=amplitudes,
        frequencies=frequencies,
        phases=phases,
    )


# ---------------------------------------------------------------------------
# CSV export for external auditing


def scenario_set_to_csv(scenarios: ScenarioSet, directory) -> None:
    """Write increments.csv, initial_states.csv, parameters.csv into directory.

    increments.csv rows: scenario_id, step, dW_0 .. dW_{d-1}
    initial_states.csv rows: scenario_id, x0_0 .. x0_{n-1}
    parameters.csv rows: scenario_id, xi_0 .. xi_{q-1}
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    M, S, d = scenarios.brownian_increments.shape

    with open(directory / "increments.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_id", "step"] + [f"dW_{c}" for c in range(d)])
        for i in range(M):
            for k in range(S):
                writer.writerow([i, k] + [repr(float(v)) for v in scenarios.brownian_increments[i, k]])

    with open(directory / "initial_states.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        n = scenarios.initial_states.shape[1]
        writer.writerow(["scenario_id"] + [f"x0_{c}" for c in range(n)])
        for i in range(M):
            writer.writerow([i] + [repr(float(v)) for v in scenarios.initial_states[i]])

    with open(directory / "parameters.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        q = scenarios.parameters.shape[1]
        writer.writerow(["scenario_id"] + [f"xi_{c}" for c in range(q)])
        for i in range(M):
            writer.writerow([i] + [repr(float(v)) for v in scenarios.parameters[i]])
