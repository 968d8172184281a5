"""Seeded, random-access streams of unbiased matrix samples.

A sample is a pure function of ``(spec, k, tag)``: the Philox key comes from
``(seed, tag)`` and the counter from ``k``, so iteration k can be replayed
or drawn out of order without touching the rest of the stream.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import linalg
from .errors import DimensionError, NotPSDError, ValidationError

TAG_A = 1
TAG_B = 2


class OracleKind(enum.Enum):
    EXACT = "exact"
    GAUSS_COV = "gauss_cov"
    ADD_NOISE = "add_noise"


@dataclass(frozen=True, eq=False)
class OracleSpec:
    """How to draw ``M^(k)`` with ``E M^(k) = target``.

    ``GAUSS_COV`` averages ``n_draws`` outer products of ``N(0, target + shift I)``
    vectors and subtracts ``shift I``; ``shift > 0`` lets an indefinite target
    be sampled this way. ``ADD_NOISE`` adds ``sigma (G + G^T) / 2`` with G
    standard Gaussian.
    """

    kind: OracleKind
    target: np.ndarray
    seed: int = 0
    n_draws: int = 40
    sigma: float = 0.0
    shift: float = 0.0

    def __post_init__(self):
        kind = OracleKind(self.kind)
        object.__setattr__(self, "kind", kind)
        T = linalg.as_matrix(self.target, "target")
        linalg.check_symmetric(T, name="target")
        T = 0.5 * (T + T.T)
        T.setflags(write=False)
        object.__setattr__(self, "target", T)
        if self.n_draws < 1:
            raise ValidationError("n_draws must be >= 1")
        if self.sigma < 0 or self.shift < 0:
            raise ValidationError("sigma and shift must be non-negative")
        if kind is OracleKind.GAUSS_COV:
            # fails early on a non-PSD covariance
            _ = self.cov_sqrt

    @property
    def d(self) -> int:
        return self.target.shape[0]

    @cached_property
    def cov_sqrt(self) -> np.ndarray:
        cov = self.target + self.shift * np.eye(self.d)
        try:
            return linalg.sqrt_psd(cov)
        except NotPSDError as exc:
            raise NotPSDError(
                "GaussianCovariance needs a PSD target (raise `shift` for indefinite ones)"
            ) from exc

    @classmethod
    def exact(cls, target) -> "OracleSpec":
        return cls(OracleKind.EXACT, target)

    @classmethod
    def gauss_cov(cls, target, n_draws: int = 40, seed: int = 0, shift="auto") -> "OracleSpec":
        """Sample-covariance oracle; ``shift="auto"`` uses ``max(0, -lambda_min)``."""
        if shift == "auto":
            lam_min = np.linalg.eigvalsh(0.5 * (np.asarray(target) + np.asarray(target).T))[0]
            shift = max(0.0, -float(lam_min))
            if shift > 0:
                shift *= 1.0 + 1e-8
        return cls(OracleKind.GAUSS_COV, target, seed=seed, n_draws=n_draws, shift=shift)

    @classmethod
    def add_noise(cls, target, sigma: float, seed: int = 0) -> "OracleSpec":
        return cls(OracleKind.ADD_NOISE, target, seed=seed, sigma=sigma)

    def to_config(self) -> dict:
        return {"kind": self.kind.value, "n_draws": self.n_draws, "sigma": self.sigma,
                "seed": self.seed, "shift": self.shift}


def spec_from_config(cfg: dict, target, seed: int | None = None) -> OracleSpec:
    """Build from the run-JSON form ``{"kind", "n_draws", "sigma", "seed"}``."""
    kind = OracleKind(cfg.get("kind", "exact"))
    s = int(cfg.get("seed", 0) if seed is None else seed)
    if kind is OracleKind.EXACT:
        return OracleSpec.exact(target)
    if kind is OracleKind.GAUSS_COV:
        return OracleSpec.gauss_cov(target, int(cfg.get("n_draws", 40)), s, cfg.get("shift", "auto"))
    return OracleSpec.add_noise(target, float(cfg.get("sigma", 0.0)), s)


@lru_cache(maxsize=1024)
def _philox_key(seed: int, tag: int) -> tuple[int, int]:
    words = np.random.SeedSequence([seed & (2**64 - 1), tag]).generate_state(2, dtype=np.uint64)
    return int(words[0]), int(words[1])


def rng_for(seed: int, tag: int, k: int) -> np.random.Generator:
    """Independent generator for ``(seed, tag, k)``."""
    lo, hi = _philox_key(int(seed), int(tag))
    key = lo | (hi << 64)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, int(k), 0]))


def next_sample(spec: OracleSpec, k: int, tag: int = 0) -> np.ndarray:
    """The k-th draw; exactly symmetric."""
    if spec.kind is OracleKind.EXACT:
        return spec.target
    rng = rng_for(spec.seed, tag, k)
    d = spec.d
    if spec.kind is OracleKind.GAUSS_COV:
        V = rng.standard_normal((spec.n_draws, d)) @ spec.cov_sqrt
        S = (V.T @ V) / spec.n_draws
        S = 0.5 * (S + S.T)
        if spec.shift:
            S[np.diag_indices(d)] -= spec.shift
        return S
    G = rng.standard_normal((d, d))
    return spec.target + spec.sigma * (0.5 * (G + G.T))


def sampled_pair(specA: OracleSpec, specB: OracleSpec, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Independent ``(A^(k), B^(k))``; the two streams use distinct tags."""
    if specA.d != specB.d:
        raise DimensionError(f"oracle dimensions differ: {specA.d} vs {specB.d}")
    return next_sample(specA, k, TAG_A), next_sample(specB, k, TAG_B)


@dataclass(frozen=True, eq=False)
class OracleMoments:
    mean_estimate: np.ndarray
    second_moment_bound_estimate: float
    n_samples: int
    mean_stderr: np.ndarray = field(repr=False)


def estimate_moments(spec: OracleSpec, n: int, tag: int = 0, start: int = 0) -> OracleMoments:
    """Mean and ``E ||M||_2^2`` from samples ``start .. start + n - 1``."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    d = spec.d
    s1 = np.zeros((d, d))
    s2 = np.zeros((d, d))
    norm2 = 0.0
    for k in range(start, start + n):
        M = next_sample(spec, k, tag)
        s1 += M
        s2 += M * M
        norm2 += np.linalg.norm(M, 2) ** 2
    mean = s1 / n
    if n > 1:
        var = np.maximum(s2 / n - mean * mean, 0.0) * n / (n - 1)
        stderr = np.sqrt(var / n)
    else:
        stderr = np.full((d, d), np.inf)
    return OracleMoments(mean_estimate=mean, second_moment_bound_estimate=norm2 / n,
                         n_samples=n, mean_stderr=stderr)
