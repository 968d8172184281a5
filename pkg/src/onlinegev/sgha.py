"""Stochastic generalized Hebbian algorithm (SGHA).

Two update rules are offered. ``TWO_STEP`` keeps an explicit dual iterate::

    X' = X - eta (B_k X Y - A_k X)
    Y' = X^T A_k X            (same A_k, pre-update X)

``COMBINED`` substitutes the fresh dual directly::

    X' = X - eta (B_k X X^T - I) A_k X

They agree whenever Y equals ``X^T A_k X``; under noisy oracles the two-step
rule uses the previous iteration's sample in Y.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, IllPosedError, ValidationError
from .oracle import OracleSpec, sampled_pair
from .problem import GevProblem, ground_truth

DIVERGENCE_FACTOR = 1e3


class Mode(enum.Enum):
    TWO_STEP = "two-step"
    COMBINED = "combined"


@dataclass(frozen=True)
class SghaConfig:
    eta: float
    max_iters: int
    mode: Mode = Mode.COMBINED
    record_stride: int = 1
    init_seed: int = 0
    stop_error: float | None = None
    record_x: bool = False
    record_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.eta > 0:
            raise ValidationError("eta must be > 0")
        if self.max_iters < 1 or self.record_stride < 1:
            raise ValidationError("max_iters and record_stride must be >= 1")


@dataclass(frozen=True, eq=False)
class SghaState:
    X: np.ndarray
    Y: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class Record:
    k: int
    error: float
    lagrangian: float
    feasibility: float
    wallclock_ns: int = 0


@dataclass(eq=False)
class Trajectory:
    records: list[Record] = field(default_factory=list)
    # X snapshots aligned with records (only when config.record_x)
    snapshots: list[np.ndarray] = field(default_factory=list)

    @property
    def iters(self) -> np.ndarray:
        return np.array([rec.k for rec in self.records], dtype=np.int64)

    @property
    def errors(self) -> np.ndarray:
        return np.array([rec.error for rec in self.records])

    def append(self, rec: Record, X: np.ndarray | None = None) -> None:
        if self.records and rec.k <= self.records[-1].k:
            raise ValidationError("trajectory iterations must be strictly increasing")
        self.records.append(rec)
        if X is not None:
            self.snapshots.append(X.copy())


def init_state(d: int, r: int, seed: int) -> SghaState:
    """X with i.i.d. N(0, 1/d) entries, Y = 0."""
    if not d >= r >= 1:
        raise DimensionError(f"need d >= r >= 1, got d={d}, r={r}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d, r)) / math.sqrt(d)
    return SghaState(X=X, Y=np.zeros((r, r)), k=0)


def _check_finite(X: np.ndarray, k: int) -> None:
    r = X.shape[1]
    if not np.all(np.isfinite(X)):
        raise DivergenceError(f"non-finite iterate at k={k}", k=k)
    nrm = float(np.linalg.norm(X))
    if nrm > DIVERGENCE_FACTOR * math.sqrt(r):
        raise DivergenceError(f"||X||_F = {nrm:.3e} exceeds {DIVERGENCE_FACTOR:g} sqrt(r) at k={k}", k=k)


def step_two_phase(state: SghaState, A_k: np.ndarray, B_k: np.ndarray, eta: float) -> SghaState:
    X, Y = state.X, state.Y
    AX = A_k @ X
    X_new = X - eta * (B_k @ (X @ Y) - AX)
    Y_new = X.T @ AX
    Y_new = 0.5 * (Y_new + Y_new.T)
    _check_finite(X_new, state.k + 1)
    return SghaState(X=X_new, Y=Y_new, k=state.k + 1)


def step_combined(state: SghaState, A_k: np.ndarray, B_k: np.ndarray, eta: float) -> SghaState:
    X = state.X
    AX = A_k @ X
    Y = X.T @ AX
    Y = 0.5 * (Y + Y.T)
    # (B X X^T - I) A X written as B X (X^T A X) - A X to stay O(d^2 r)
    X_new = X - eta * (B_k @ (X @ Y) - AX)
    _check_finite(X_new, state.k + 1)
    return SghaState(X=X_new, Y=Y, k=state.k + 1)


def optimization_error(p: GevProblem, X, projector: np.ndarray | None = None) -> float:
    """``||B^{1/2} X X^T B^{1/2} - B^{1/2} X* X*^T B^{1/2}||_F``."""
    if projector is None:
        projector = ground_truth(p).projector
    BX = p.B_sqrt @ np.asarray(X, dtype=float)
    return float(np.linalg.norm(BX @ BX.T - projector))


def alignment(p: GevProblem, X, X_star: np.ndarray | None = None) -> float:
    """``tr(X*^T B X X^T B X*) / r``; equals 1 exactly on the optimal subspace."""
    if X_star is None:
        X_star = ground_truth(p).X
    M = X_star.T @ p.B @ np.asarray(X, dtype=float)
    return float(np.sum(M * M) / p.r)


def _record(p: GevProblem, X: np.ndarray, Y: np.ndarray, k: int, projector: np.ndarray,
            t0: int | None) -> Record:
    BX = p.B_sqrt @ X
    err = float(np.linalg.norm(BX @ BX.T - projector))
    C = X.T @ p.B @ X - np.eye(p.r)
    lag = float(-np.trace(X.T @ p.A @ X) + np.sum(Y * C))
    wall = 0 if t0 is None else time.perf_counter_ns() - t0
    return Record(k=k, error=err, lagrangian=lag, feasibility=float(np.linalg.norm(C)),
                  wallclock_ns=wall)


def run(p: GevProblem, specA: OracleSpec, specB: OracleSpec, config: SghaConfig,
        X0: np.ndarray | None = None) -> tuple[Trajectory, SghaState]:
    """Iterate SGHA from ``X0`` (default :func:`init_state`), recording every stride.

    The final iterate is always recorded. Wall-clock stamps are zero unless
    ``config.record_time`` so that replays produce identical records.
    """
    if specA.d != p.d or specB.d != p.d:
        raise DimensionError("oracle dimension does not match the problem")
    if X0 is None:
        state = init_state(p.d, p.r, config.init_seed)
    else:
        X0 = p._check_X(X0).copy()
        state = SghaState(X=X0, Y=np.zeros((p.r, p.r)), k=0)
    projector = ground_truth(p).projector
    step = step_combined if config.mode is Mode.COMBINED else step_two_phase
    t0 = time.perf_counter_ns() if config.record_time else None
    traj = Trajectory()
    keep = config.record_x

    rec = _record(p, state.X, state.Y, 0, projector, t0)
    traj.append(rec, state.X if keep else None)
    stride = config.record_stride
    for k in range(config.max_iters):
        A_k, B_k = sampled_pair(specA, specB, k)
        try:
            state = step(state, A_k, B_k, config.eta)
        except DivergenceError as exc:
            raise DivergenceError(str(exc), k=exc.k, last_record=traj.records[-1]) from None
        if state.k % stride == 0 or state.k == config.max_iters:
            rec = _record(p, state.X, state.Y, state.k, projector, t0)
            traj.append(rec, state.X if keep else None)
            if config.stop_error is not None and rec.error <= config.stop_error:
                break
    return traj, state


def recommend_step_size(spec, consts, eps: float, c: float = 1.0) -> float:
    """``eta = c * eps * mu_min * gap / phi``."""
    if spec.gap <= 0:
        raise IllPosedError(f"gap {spec.gap} must be positive")
    if eps <= 0:
        raise ValidationError("eps must be positive")
    if consts.phi <= 0:
        raise IllPosedError("phi must be positive (noise-free oracles have no step-size rule)")
    return c * eps * spec.mu_min * spec.gap / consts.phi


def predicted_iterations(spec, consts, eps: float, c: float = 1.0) -> tuple[float, float]:
    """Time horizon ``T`` and iteration count ``N = T / eta``."""
    eta = recommend_step_size(spec, consts, eps, c)
    T = (spec.mu_max / spec.mu_min) / (spec.mu[0] * spec.gap) * math.log(1.0 / eta)
    return T, T / eta
