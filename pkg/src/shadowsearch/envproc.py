"""Stochastic hole-pose distributions and their evolution over time.

A hole process owns a base Gaussian mixture over 2D positions (mm) and a rule
for how the mixture's modes move between timesteps: stationary, linear drift,
Brownian motion, or occasional uniform shifts. All mode motion is rigid: one
shared offset translates every mean, weights and covariances never change.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .rng import TAG_HOLES, TAG_MIXTURE, make_rng

_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class HolePose:
    """A single realized hole position in the XY-plane (mm)."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ContractError(f"hole pose must be finite, got ({self.x}, {self.y})")

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


class GaussianMixture2D:
    """Weighted mixture of bivariate Gaussians; validated on construction.

    Weights must be nonnegative and sum to 1 within 1e-9; every covariance must
    be symmetric positive definite (its Cholesky factor is computed eagerly and
    cached for sampling and density evaluation).
    """

    def __init__(self, weights, means, covariances):
        w = np.asarray(weights, dtype=np.float64)
        mu = np.asarray(means, dtype=np.float64)
        cov = np.asarray(covariances, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ContractError("mixture needs at least one component")
        if mu.shape != (w.size, 2) or cov.shape != (w.size, 2, 2):
            raise ContractError(
                f"inconsistent mixture shapes: w{w.shape} mu{mu.shape} cov{cov.shape}"
            )
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
            raise ContractError(f"weights must be >= 0 and sum to 1, got sum {w.sum()!r}")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), atol=1e-12):
            raise ContractError("covariances must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ContractError("covariances must be positive definite") from exc
        self.weights = w
        self.means = mu
        self.covariances = cov
        self._chol = chol
        # log |2 pi Sigma|^(1/2) per component, for density evaluation
        self._log_norm = np.log(2.0 * np.pi) + np.log(chol[:, 0, 0] * chol[:, 1, 1])

    @property
    def n_components(self) -> int:
        return self.weights.size

    def translated(self, offset) -> "GaussianMixture2D":
        """New mixture with every mean shifted by `offset`; shares covariances."""
        out = object.__new__(GaussianMixture2D)
        out.weights = self.weights
        out.means = self.means + np.asarray(offset, dtype=np.float64)
        out.covariances = self.covariances
        out._chol = self._chol
        out._log_norm = self._log_norm
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n points: component by weight, then the component's normal."""
        idx = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, 2))
        return self.means[idx] + np.einsum("nij,nj->ni", self._chol[idx], z)

    def log_density(self, point) -> float:
        """log of the mixture density at a single 2D point."""
        p = np.asarray(point, dtype=np.float64)
        d = p - self.means  # (k, 2)
        # solve L y = d per component; quadratic form = |y|^2
        y0 = d[:, 0] / self._chol[:, 0, 0]
        y1 = (d[:, 1] - self._chol[:, 1, 0] * y0) / self._chol[:, 1, 1]
        logs = np.log(self.weights) - self._log_norm - 0.5 * (y0 * y0 + y1 * y1)
        m = logs.max()
        return float(m + np.log(np.exp(logs - m).sum()))

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture2D":
        return cls(d["weights"], d["means"], d["covariances"])


@dataclass(frozen=True)
class MixtureSpec:
    """Generator config for random test mixtures.

    Component count is uniform in [count_min, count_max]; means are uniform in
    the centered square of half-width mean_bound; covariance eigenvalues are
    log-uniform in [eig_min, eig_max] (mm^2) with a uniform rotation angle,
    which guarantees SPD covariances. Weights are uniform on the simplex.
    """

    count_min: int = 2
    count_max: int = 4
    mean_bound: float = 8.0
    eig_min: float = 0.25
    eig_max: float = 2.25

    def validate(self):
        if self.count_min < 1 or self.count_max < self.count_min:
            raise ConfigError(f"bad component count range [{self.count_min}, {self.count_max}]")
        if self.eig_min <= 0 or self.eig_max < self.eig_min:
            raise ConfigError(f"bad eigenvalue range [{self.eig_min}, {self.eig_max}]")
        if self.mean_bound < 0:
            raise ConfigError(f"mean bound must be >= 0, got {self.mean_bound}")


def sample_mixture(seed: int, spec: MixtureSpec = MixtureSpec()) -> GaussianMixture2D:
    """Deterministically generate a random mixture from `spec` under `seed`."""
    spec.validate()
    rng = make_rng(seed, TAG_MIXTURE)
    k = int(rng.integers(spec.count_min, spec.count_max + 1))
    weights = rng.dirichlet(np.ones(k))
    means = rng.uniform(-spec.mean_bound, spec.mean_bound, size=(k, 2))
    eigs = np.exp(rng.uniform(np.log(spec.eig_min), np.log(spec.eig_max), size=(k, 2)))
    angles = rng.uniform(0.0, np.pi, size=k)
    covs = np.empty((k, 2, 2))
    for i in range(k):
        c, s = np.cos(angles[i]), np.sin(angles[i])
        r = np.array([[c, -s], [s, c]])
        covs[i] = r @ np.diag(eigs[i]) @ r.T
        covs[i] = 0.5 * (covs[i] + covs[i].T)
    return GaussianMixture2D(weights, means, covs)


class ProcessKind(str, enum.Enum):
    STATIONARY = "stationary"
    DRIFT = "drift"
    BROWNIAN = "brownian"
    SHIFT = "shift"


@dataclass
class HoleProcess:
    """A (possibly nonstationary) generator of hole poses over discrete steps.

    Single-owner mutable state: `advance` moves the modes, `sample_hole` draws
    from the current mixture and consumes only the process RNG. Drift keeps the
    total offset exact (timestep * per-step offset, one multiplication) so long
    horizons accumulate no floating-point error.
    """

    base: GaussianMixture2D
    kind: ProcessKind = ProcessKind.STATIONARY
    drift_offset: np.ndarray = field(default_factory=lambda: np.zeros(2))
    brownian_stddev: float = 0.05
    p_shift: float = 0.05
    shift_max_offset: float = 2.0
    seed: int = 0
    timestep: int = 0

    def __post_init__(self):
        self.kind = ProcessKind(self.kind)
        self.drift_offset = np.asarray(self.drift_offset, dtype=np.float64)
        if not 0.0 <= self.p_shift <= 1.0:
            raise ContractError(f"p_shift must be in [0,1], got {self.p_shift}")
        if self.brownian_stddev < 0:
            raise ContractError(f"step stddev must be >= 0, got {self.brownian_stddev}")
        if self.timestep < 0:
            raise ContractError("timestep must be nonnegative")
        self._accum = np.zeros(2)  # Brownian/shift offsets accumulated so far
        self._rng = make_rng(self.seed, TAG_HOLES)

    def total_offset(self) -> np.ndarray:
        if self.kind is ProcessKind.DRIFT:
            return self.timestep * self.drift_offset
        return self._accum.copy()

    def current_mixture(self) -> GaussianMixture2D:
        off = self.total_offset()
        if not off.any():
            return self.base
        return self.base.translated(off)

    def advance(self) -> "HoleProcess":
        """Move to the next timestep, translating all modes per the kind."""
        if self.kind is ProcessKind.BROWNIAN:
            self._accum = self._accum + self.brownian_stddev * self._rng.standard_normal(2)
        elif self.kind is ProcessKind.SHIFT:
            if self._rng.uniform() < self.p_shift:
                self._accum = self._accum + self._rng.uniform(
                    -self.shift_max_offset, self.shift_max_offset, size=2
                )
        self.timestep += 1
        return self

    def sample_hole(self) -> HolePose:
        pt = self.current_mixture().sample(self._rng, 1)[0]
        return HolePose(float(pt[0]), float(pt[1]))

    def sample_holes(self, n: int) -> np.ndarray:
        """Batch draw from the current mixture (advances only the RNG)."""
        return self.current_mixture().sample(self._rng, n)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "base": self.base.to_dict(),
            "drift_offset": self.drift_offset.tolist(),
            "brownian_stddev": self.brownian_stddev,
            "p_shift": self.p_shift,
            "shift_max_offset": self.shift_max_offset,
            "seed": self.seed,
            "timestep": self.timestep,
            "accum": self._accum.tolist(),
            "rng_state": _philox_state(self._rng),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HoleProcess":
        proc = cls(
            base=GaussianMixture2D.from_dict(d["base"]),
            kind=ProcessKind(d["kind"]),
            drift_offset=np.asarray(d["drift_offset"]),
            brownian_stddev=d["brownian_stddev"],
            p_shift=d["p_shift"],
            shift_max_offset=d["shift_max_offset"],
            seed=d["seed"],
            timestep=d["timestep"],
        )
        proc._accum = np.asarray(d["accum"], dtype=np.float64)
        if d.get("rng_state") is not None:
            _restore_philox_state(proc._rng, d["rng_state"])
        return proc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "HoleProcess":
        return cls.from_dict(json.loads(s))


def _philox_state(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "counter": [int(v) for v in st["state"]["counter"]],
        "key": [int(v) for v in st["state"]["key"]],
        "buffer": [int(v) for v in st["buffer"]],
        "buffer_pos": int(st["buffer_pos"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def _restore_philox_state(rng: np.random.Generator, d: dict) -> None:
    st = rng.bit_generator.state
    st["state"]["counter"] = np.array(d["counter"], dtype=np.uint64)
    st["state"]["key"] = np.array(d["key"], dtype=np.uint64)
    st["buffer"] = np.array(d["buffer"], dtype=np.uint64)
    st["buffer_pos"] = d["buffer_pos"]
    st["has_uint32"] = d["has_uint32"]
    st["uinteger"] = d["uinteger"]
    rng.bit_generator.state = st


def stationary_process(mixture: GaussianMixture2D, seed: int = 0) -> HoleProcess:
    return HoleProcess(base=mixture, kind=ProcessKind.STATIONARY, seed=seed)


def drift_process(mixture: GaussianMixture2D, offset=(0.05, 0.0), seed: int = 0) -> HoleProcess:
    return HoleProcess(base=mixture, kind=ProcessKind.DRIFT, drift_offset=offset, seed=seed)


def brownian_process(mixture: GaussianMixture2D, stddev: float = 0.05, seed: int = 0) -> HoleProcess:
    return HoleProcess(base=mixture, kind=ProcessKind.BROWNIAN, brownian_stddev=stddev, seed=seed)


def shift_process(
    mixture: GaussianMixture2D, p_shift: float = 0.05, max_offset: float = 2.0, seed: int = 0
) -> HoleProcess:
    return HoleProcess(
        base=mixture, kind=ProcessKind.SHIFT, p_shift=p_shift, shift_max_offset=max_offset, seed=seed
    )
