"""The GEV instance: maximize tr(X^T A X) subject to X^T B X = I_r.

Holds the pencil, the Lagrangian and its first derivatives, the whitened
decomposition used to write down every equilibrium, and the ground-truth
optimum used by the error metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import linalg
from .errors import (
    DimensionError,
    IllPosedError,
    NotApplicableError,
    SingularBError,
    ValidationError,
)


def symmetrize(Y) -> np.ndarray:
    Y = linalg.as_matrix(Y, "Y")
    return 0.5 * (Y + Y.T)


@dataclass(frozen=True, eq=False)
class GevProblem:
    """Symmetric pencil ``(A, B)`` with B PSD and target rank ``r``.

    B may be singular; routines that need it invertible raise
    :class:`SingularBError` and the caller must switch to the singular path
    explicitly.
    """

    A: np.ndarray
    B: np.ndarray
    r: int
    rank_tol: float = linalg.RANK_TOL

    def __post_init__(self):
        A = linalg.as_matrix(self.A, "A")
        B = linalg.as_matrix(self.B, "B")
        if A.shape != B.shape or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A {A.shape} and B {B.shape} must be equal square shapes")
        linalg.check_symmetric(A, name="A")
        linalg.check_symmetric(B, name="B")
        A = 0.5 * (A + A.T)
        B = 0.5 * (B + B.T)
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        r = int(self.r)
        if r < 1:
            raise ValidationError("r must be >= 1")
        # raises NotPSDError on indefinite B
        rank = linalg.psd_rank(B, self.rank_tol)
        if r > rank:
            raise ValidationError(f"r = {r} exceeds rank(B) = {rank}; feasible set is empty")
        object.__setattr__(self, "r", r)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @cached_property
    def B_eigen(self) -> linalg.SymEigen:
        return linalg.eig_sym(self.B)

    @cached_property
    def rank_B(self) -> int:
        return linalg.psd_rank(self.B, self.rank_tol)

    @property
    def B_full_rank(self) -> bool:
        return self.rank_B == self.d

    @cached_property
    def B_sqrt(self) -> np.ndarray:
        return linalg.sqrt_psd(self.B, self.rank_tol)

    def _check_X(self, X) -> np.ndarray:
        X = linalg.as_matrix(X, "X")
        if X.shape != (self.d, self.r):
            raise DimensionError(f"X must be {(self.d, self.r)}, got {X.shape}")
        return X

    def _check_Y(self, Y) -> np.ndarray:
        Y = symmetrize(Y)
        if Y.shape != (self.r, self.r):
            raise DimensionError(f"Y must be {(self.r, self.r)}, got {Y.shape}")
        return Y


@dataclass(frozen=True, eq=False)
class WhitenedProblem:
    """``A_tilde = Lambda_B^{-1/2} O_B^T A O_B Lambda_B^{-1/2}`` and its eigenpairs."""

    O_B: np.ndarray
    Lambda_B: np.ndarray
    A_tilde: np.ndarray
    O_Atilde: np.ndarray
    Lambda_Atilde: np.ndarray

    @cached_property
    def transform(self) -> np.ndarray:
        """``O_B Lambda_B^{-1/2}``, maps whitened coordinates back to X."""
        return self.O_B * self.Lambda_B ** -0.5

    @cached_property
    def equilibrium_basis(self) -> np.ndarray:
        """Columns are the primal equilibria for singleton index sets."""
        return self.transform @ self.O_Atilde


def whiten(p: GevProblem) -> WhitenedProblem:
    if not p.B_full_rank:
        raise SingularBError(
            f"rank(B) = {p.rank_B} < d = {p.d}; use landscape.enumerate_equilibria_singular"
        )
    eig = p.B_eigen
    s = eig.values ** -0.5
    At = (eig.vectors.T @ p.A @ eig.vectors) * np.outer(s, s)
    At = 0.5 * (At + At.T)
    ea = linalg.eig_sym(At)
    return WhitenedProblem(
        O_B=eig.vectors,
        Lambda_B=eig.values,
        A_tilde=At,
        O_Atilde=ea.vectors,
        Lambda_Atilde=ea.values,
    )


@dataclass(frozen=True)
class EigengapReport:
    gap: float
    tol: float
    passed: bool
    lambda_r: float


def check_eigengap(p: GevProblem, tol: float | None = None) -> EigengapReport:
    """Gap ``lambda_r - lambda_{r+1}`` of the whitened matrix.

    ``tol`` defaults to ``1e-8 * ||A_tilde||_2``. With ``r == d`` there is no
    competing eigenvalue and the gap is reported as ``inf``.
    """
    w = whiten(p)
    lam = w.Lambda_Atilde
    if tol is None:
        tol = 1e-8 * max(abs(lam[0]), abs(lam[-1]))
    gap = float(lam[p.r - 1] - lam[p.r]) if p.r < p.d else float("inf")
    return EigengapReport(gap=gap, tol=float(tol), passed=gap > tol, lambda_r=float(lam[p.r - 1]))


def lagrangian(p: GevProblem, X, Y) -> float:
    X = p._check_X(X)
    Y = p._check_Y(Y)
    C = X.T @ p.B @ X - np.eye(p.r)
    return float(-np.trace(X.T @ p.A @ X) + np.sum(Y * C))


def grad_lagrangian(p: GevProblem, X, Y) -> tuple[np.ndarray, np.ndarray]:
    """``(2BXY - 2AX, X^T B X - I_r)``."""
    X = p._check_X(X)
    Y = p._check_Y(Y)
    gX = 2.0 * (p.B @ X @ Y - p.A @ X)
    gY = X.T @ p.B @ X - np.eye(p.r)
    return gX, gY


@dataclass(frozen=True, eq=False)
class GroundTruth:
    X: np.ndarray
    value: float
    projector: np.ndarray  # B^{1/2} X* X*^T B^{1/2}


def ground_truth(p: GevProblem) -> GroundTruth:
    """Canonical optimum (rotation fixed to the identity)."""
    report = check_eigengap(p)
    if not report.passed:
        raise IllPosedError(
            f"eigengap {report.gap:.3e} <= tol {report.tol:.3e}; optimum is not identifiable"
        )
    w = whiten(p)
    X = w.equilibrium_basis[:, : p.r]
    value = -float(np.sum(w.Lambda_Atilde[: p.r]))
    BX = p.B_sqrt @ X
    return GroundTruth(X=X, value=value, projector=BX @ BX.T)


def invariance_check(p: GevProblem, X, Y, Psi, tol: float = 1e-8) -> float:
    """``|L(X, Y) - L(X Psi, Psi^T Y Psi)|`` for orthogonal ``Psi``."""
    Psi = linalg.as_matrix(Psi, "Psi")
    if Psi.shape != (p.r, p.r):
        raise DimensionError(f"Psi must be {(p.r, p.r)}")
    if np.linalg.norm(Psi @ Psi.T - np.eye(p.r)) > tol:
        raise ValidationError("Psi is not orthogonal")
    Y = p._check_Y(Y)
    return abs(lagrangian(p, X, Y) - lagrangian(p, X @ Psi, Psi.T @ Y @ Psi))


@dataclass(frozen=True, eq=False)
class SingularVerdict:
    """Outcome of the boundedness check for singular B.

    ``condition`` is ``"negative"`` when A is negative definite on Null(B),
    ``"annihilated"`` when the flat null directions are also decoupled from
    Col(B), and ``"violated"`` otherwise (``witness`` then holds a bad v).
    """

    passed: bool
    condition: str
    witness: np.ndarray | None
    null_curvature: np.ndarray = field(repr=False)


def check_well_defined_singular(p: GevProblem, tol: float = 1e-9) -> SingularVerdict:
    """Does the objective stay bounded when B has a null space?

    For every ``v`` in Null(B) one needs either ``v^T A v < 0``, or
    ``v^T A v = 0`` together with ``u^T A v = 0`` for all ``u`` in Col(B).
    The check runs on the eigenbasis of ``A`` restricted to Null(B): a
    positive eigenvalue is a witness of unboundedness, a zero one must be
    annihilated by the cross block. ``tol`` is relative to ``||A||_2``.
    """
    if p.B_full_rank:
        raise NotApplicableError("B is full rank; the unbounded case cannot occur")
    eA = linalg.eig_sym(p.A)
    scale = max(abs(eA.values[0]), abs(eA.values[-1]))
    if np.min(np.abs(eA.values)) <= tol * scale:
        raise ValidationError("A must be full rank for the singular-B analysis")
    atol = tol * scale
    m = p.rank_B
    col = p.B_eigen.vectors[:, :m]
    null = p.B_eigen.vectors[:, m:]
    W22 = null.T @ p.A @ null
    e22 = linalg.eig_sym(W22)
    if e22.values[0] > atol:
        return SingularVerdict(False, "violated", null @ e22.vectors[:, 0], e22.values)
    flat = np.abs(e22.values) <= atol
    if not np.any(flat):
        return SingularVerdict(True, "negative", None, e22.values)
    for v in (null @ e22.vectors[:, flat]).T:
        if np.linalg.norm(col.T @ p.A @ v) > atol:
            return SingularVerdict(False, "violated", v, e22.values)
    return SingularVerdict(True, "annihilated", None, e22.values)
