"""Diffusion-limit diagnostics for SGHA on commuting pencils (r = 1).

When ``AB = BA`` the pencil shares an orthonormal eigenbasis ``O`` with
``A = O diag(lambda) O^T`` and ``B = O diag(mu) O^T``. The whitened iterate
``w = diag(mu)^{1/2} O^T x`` then evolves coordinate-wise, and the closed
forms below (ratio ODE, Ornstein-Uhlenbeck variances, norm ODE, escape
horizon) can be compared against actual SGHA runs.

All indices are 0-based and refer to the canonical ordering
``beta_0 >= beta_1 >= ...`` with ``beta = lambda / mu``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from . import linalg
from .errors import (
    DomainError,
    NotASaddleError,
    UndefinedRatioError,
    UnstableModeError,
    ValidationError,
)
from .oracle import OracleKind, OracleSpec, sampled_pair
from .sgha import SghaState, step_combined

PHASE_DELTA = 0.1
PHASE_KAPPA = 1.0


@dataclass(frozen=True, eq=False)
class CommutativeSpec:
    O: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    # perm[i] is the position of canonical coordinate i in B's descending eigenbasis
    perm: np.ndarray

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def gap(self) -> float:
        return float(self.beta[0] - self.beta[1]) if self.d > 1 else math.inf

    @property
    def mu_min(self) -> float:
        return float(np.min(self.mu[1:])) if self.d > 1 else float(self.mu[0])

    @property
    def mu_max(self) -> float:
        return float(np.max(self.mu[1:])) if self.d > 1 else float(self.mu[0])

    @property
    def B_inv_sqrt(self) -> np.ndarray:
        return (self.O * self.mu ** -0.5) @ self.O.T

    def equilibrium(self, i: int) -> np.ndarray:
        """The r = 1 equilibrium along canonical coordinate ``i`` (d x 1)."""
        return (self.O[:, i] / math.sqrt(self.mu[i]))[:, None]


def _clusters(values: np.ndarray, tol: float) -> list[np.ndarray]:
    groups, start = [], 0
    for k in range(1, values.size + 1):
        if k == values.size or values[start] - values[k] > tol:
            groups.append(np.arange(start, k))
            start = k
    return groups


def check_commutative(A, B, tol: float = 1e-10) -> CommutativeSpec | None:
    """Shared eigenbasis and ``beta`` ordering, or ``None`` if ``AB != BA``.

    B is diagonalized first; A is then diagonalized inside each eigenspace
    of B, which handles repeated eigenvalues of B.
    """
    A = linalg.as_matrix(A, "A")
    B = linalg.as_matrix(B, "B")
    linalg.check_symmetric(A, name="A")
    linalg.check_symmetric(B, name="B")
    comm = np.linalg.norm(A @ B - B @ A)
    if comm > tol * np.linalg.norm(A) * np.linalg.norm(B):
        return None
    eB = linalg.eig_sym(B)
    if eB.values[-1] <= 0:
        raise ValidationError("B must be positive definite")
    O = eB.vectors.copy()
    for g in _clusters(eB.values, 1e-9 * eB.values[0]):
        if g.size > 1:
            blk = O[:, g].T @ A @ O[:, g]
            O[:, g] = O[:, g] @ linalg.eig_sym(0.5 * (blk + blk.T)).vectors
    lam = np.einsum("ij,ik,kj->j", O, A, O)
    mu = np.einsum("ij,ik,kj->j", O, B, O)
    beta = lam / mu
    if np.any(beta == 0):
        raise ValidationError("beta_i = 0 is outside the analysed regime")
    perm = np.argsort(-beta, kind="stable")
    return CommutativeSpec(O=O[:, perm], lam=lam[perm], mu=mu[perm], beta=beta[perm], perm=perm)


def commutative_pencil(beta, mu, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Random shared basis with the requested ``beta`` and ``mu``."""
    beta = np.asarray(beta, dtype=float)
    mu = np.asarray(mu, dtype=float)
    O = linalg.random_orthogonal(beta.size, np.random.default_rng(seed))
    A = (O * (beta * mu)) @ O.T
    B = (O * mu) @ O.T
    return 0.5 * (A + A.T), 0.5 * (B + B.T)


def w_process(spec: CommutativeSpec, X) -> np.ndarray:
    """``diag(mu)^{1/2} O^T X``, so that ``X^T B X = W^T W``."""
    X = linalg.as_matrix(X, "X")
    return np.sqrt(spec.mu)[:, None] * (spec.O.T @ X)


def v_ratio(w, i: int, j: int, spec: CommutativeSpec) -> tuple[float, float]:
    """``(|w_i|^{mu_j} / |w_j|^{mu_i}, mu_j log|w_i| - mu_i log|w_j|)``."""
    w = np.ravel(w)
    if w[j] == 0:
        raise UndefinedRatioError(f"w[{j}] = 0")
    mi, mj = spec.mu[i], spec.mu[j]
    if w[i] == 0:
        return 0.0, -math.inf
    log_v = mj * math.log(abs(w[i])) - mi * math.log(abs(w[j]))
    return math.exp(log_v), log_v


def ode_prediction(x0: float, t, i: int, j: int, spec: CommutativeSpec):
    rate = spec.mu[j] * spec.mu[i] * (spec.beta[i] - spec.beta[j])
    return x0 * np.exp(rate * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    n: int


def fit_decay_slope(ks, values, eta: float, log: bool = False) -> SlopeFit:
    """Least-squares slope of ``log v`` against ``t = k * eta``.

    With ``log=True`` the values are already logarithms. Non-positive
    values are dropped with a warning.
    """
    ks = np.asarray(ks, dtype=float)
    v = np.asarray(values, dtype=float)
    if log:
        keep = np.isfinite(v)
        y = v
    else:
        keep = v > 0
        y = np.where(keep, np.log(np.where(keep, v, 1.0)), 0.0)
    if not np.all(keep):
        warnings.warn(f"dropping {np.sum(~keep)} non-positive ratio values", RuntimeWarning,
                      stacklevel=2)
    t, y = ks[keep] * eta, y[keep]
    if t.size < 10:
        raise ValidationError("need at least 10 positive records for a slope fit")
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(slope=float(slope), intercept=float(intercept), r2=r2, n=int(t.size))


@dataclass(frozen=True, eq=False)
class DiffusionConstants:
    """``G[j, i]`` is the diffusion coefficient of coordinate j near equilibrium i."""

    G: np.ndarray
    G_se: np.ndarray
    phi: float
    phi_se: float
    n_mc: int


def noise_terms(spec: CommutativeSpec, A_k: np.ndarray | None, B_k: np.ndarray | None) -> np.ndarray:
    """``T[j, i] = Lb[j, i] sqrt(mu_j / mu_i) Lt[i, i] - mu_j Lt[j, i]`` for one sample.

    ``Lb = O^T B_k O`` and ``Lt = O^T B^{-1/2} A_k B^{-1/2} O``. Passing
    ``None`` for a sample means the exact matrix, whose rotated forms are
    ``diag(mu)`` and ``diag(beta)`` without round-off. Stacks of samples
    with a leading batch axis are accepted as well.
    """
    O, mu = spec.O, spec.mu
    Lb = np.diag(mu) if B_k is None else O.T @ B_k @ O
    if A_k is None:
        Lt = np.diag(spec.beta)
    else:
        s = mu ** -0.5
        Lt = (O.T @ A_k @ O) * np.outer(s, s)
    root = np.sqrt(np.outer(mu, 1.0 / mu))
    np.fill_diagonal(root, 1.0)
    diag_t = np.diagonal(Lt, axis1=-2, axis2=-1)[..., None, :]
    return Lb * root * diag_t - mu[:, None] * Lt


def mc_ou_constants(spec: CommutativeSpec, specA: OracleSpec, specB: OracleSpec,
                    n_mc: int = 100_000, start: int = 0, chunk: int = 4096) -> DiffusionConstants:
    """Monte Carlo ``G[j, i] = E T[j, i]^2`` with standard errors; ``phi = sum_j G[j, 0]``."""
    if n_mc < 2:
        raise ValidationError("n_mc must be >= 2")
    d = spec.d
    s1 = np.zeros((d, d))
    s2 = np.zeros((d, d))
    col = np.zeros(n_mc)
    exact_A = specA.kind is OracleKind.EXACT
    exact_B = specB.kind is OracleKind.EXACT
    for lo in range(0, n_mc, chunk):
        ks = range(start + lo, start + min(lo + chunk, n_mc))
        pairs = [sampled_pair(specA, specB, k) for k in ks]
        A_k = None if exact_A else np.stack([a for a, _ in pairs])
        B_k = None if exact_B else np.stack([b for _, b in pairs])
        T2 = np.broadcast_to(noise_terms(spec, A_k, B_k) ** 2, (len(ks), d, d))
        s1 += T2.sum(axis=0)
        s2 += (T2 * T2).sum(axis=0)
        col[lo:lo + len(ks)] = T2[:, :, 0].sum(axis=1)
    G = s1 / n_mc
    var = np.maximum(s2 / n_mc - G * G, 0.0) * n_mc / (n_mc - 1)
    return DiffusionConstants(G=G, G_se=np.sqrt(var / n_mc), phi=float(col.mean()),
                              phi_se=float(col.std(ddof=1) / math.sqrt(n_mc)), n_mc=n_mc)


def ou_stationary_variance(G_i1: float, mu_i: float, beta_1: float, beta_i: float) -> float:
    """Continuous-time stationary variance ``G / (2 mu_i (beta_1 - beta_i))``."""
    if beta_1 <= beta_i:
        raise UnstableModeError(f"beta_1 = {beta_1} <= beta_i = {beta_i}: mode is not mean-reverting")
    if mu_i <= 0:
        raise ValidationError("mu_i must be positive")
    return G_i1 / (2.0 * mu_i * (beta_1 - beta_i))


def z_process(w, eta: float) -> np.ndarray:
    if eta <= 0:
        raise ValidationError("eta must be positive")
    return np.asarray(w, dtype=float) / math.sqrt(eta)


def norm_ode_prediction(x0: float, t, lambda_1: float):
    """Solution of ``dx = -lambda_1 (x^2 - x) dt`` from ``x(0) = x0``.

    Note that ``||w||^2`` under SGHA follows this ODE with rate ``2 lambda_1``.
    """
    if x0 <= 0:
        raise DomainError("x0 must be positive")
    t = np.asarray(t, dtype=float)
    if x0 == 1.0:
        return np.ones_like(t)
    decay = np.exp(-lambda_1 * t)
    if x0 > 1.0:
        # x0 = 1 / (1 - e^C)
        return 1.0 / (1.0 - (1.0 - 1.0 / x0) * decay)
    # x0 = 1 / (1 + e^C)
    return 1.0 / (1.0 + (1.0 / x0 - 1.0) * decay)


class Phase(enum.Enum):
    I = "I"
    II = "II"
    III = "III"


def phase_classifier(w, eta: float, delta: float = PHASE_DELTA, kappa: float = PHASE_KAPPA) -> Phase:
    """Phase I near a saddle, III near the optimum, II in between."""
    w = np.ravel(np.asarray(w, dtype=float))
    if abs(w[0]) <= eta ** (0.5 + delta):
        return Phase.I
    if w[0] ** 2 / float(w @ w) > 1.0 - kappa * eta ** (1.0 + 2.0 * delta):
        return Phase.III
    return Phase.II


def escape_horizon(spec: CommutativeSpec, G_1i: float, i: int, p: float = 0.9) -> float:
    """Time by which the linearized coordinate-0 process exceeds ``sqrt(eta)``
    with probability ``p``.

    Near saddle i, ``z_0`` is an unstable O-U process with rate
    ``a = mu_0 (beta_0 - beta_i)`` started at 0, so
    ``Var z_0(t) = G (exp(2at) - 1) / (2a)``; exiting ``|z_0| > 1`` with
    probability p needs ``1 / sd <= Phi^{-1}(1 - p/2)``.
    """
    if i == 0:
        raise NotASaddleError("coordinate 0 is the optimum")
    a = spec.mu[0] * (spec.beta[0] - spec.beta[i])
    if a <= 0:
        raise UnstableModeError("saddle has no unstable direction along coordinate 0")
    if G_1i <= 0:
        return math.inf
    q = norm.ppf(1.0 - p / 2.0)
    return math.log1p(2.0 * a / (G_1i * q * q)) / (2.0 * a)


@dataclass(frozen=True, eq=False)
class EscapeStats:
    times: np.ndarray  # escape time t = k * eta per seed, nan if not escaped
    horizon: float
    fraction: float
    median_time: float


def escape_experiment(spec: CommutativeSpec, specA: OracleSpec, specB: OracleSpec,
                      eta: float, saddle: int, perturbation: float, seeds,
                      horizon: float) -> EscapeStats:
    """SGHA started at saddle ``saddle`` plus a seeded perturbation of the given size.

    Each seed reseeds both oracles and the perturbation direction. A run
    escapes at the first k with ``|w_0|^2 > eta``; runs stop at ``horizon``.
    """
    if saddle == 0:
        raise NotASaddleError("index 0 is the stable equilibrium, not a saddle")
    if not 0 < saddle < spec.d:
        raise ValidationError(f"saddle index {saddle} out of range")
    X_sad = spec.equilibrium(saddle)
    probe = math.sqrt(spec.mu[0]) * spec.O[:, 0]
    n_iter = int(math.ceil(horizon / eta))
    times = []
    for seed in seeds:
        sA = specA if specA.kind is OracleKind.EXACT else replace(specA, seed=seed)
        sB = specB if specB.kind is OracleKind.EXACT else replace(specB, seed=seed)
        g = np.random.default_rng(seed).standard_normal(X_sad.shape)
        state = SghaState(X=X_sad + perturbation * g / np.linalg.norm(g), Y=np.zeros((1, 1)))
        t_esc = math.nan
        for k in range(n_iter):
            A_k, B_k = sampled_pair(sA, sB, k)
            state = step_combined(state, A_k, B_k, eta)
            w0 = float(probe @ state.X[:, 0])
            if w0 * w0 > eta:
                t_esc = (k + 1) * eta
                break
        times.append(t_esc)
    times = np.array(times)
    escaped = np.isfinite(times)
    frac = float(escaped.mean()) if times.size else 0.0
    med = float(np.median(np.where(escaped, times, np.inf))) if times.size else math.nan
    return EscapeStats(times=times, horizon=horizon, fraction=frac, median_time=med)
