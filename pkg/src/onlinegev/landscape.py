"""Equilibria of the GEV Lagrangian and their stable/unstable classification.

Every equilibrium (up to the orthogonal-group action X -> X Psi) is
indexed by an r-subset I of the whitened eigenvectors. The canonical
representative uses Psi = I_r. Index sets are 0-based tuples in Python;
reports print them 1-based.

Curvature is measured with the Hessian of the reduced Lagrangian
``f(X) = L(X, D(X))`` where ``D(X) = X^T A X`` is the dual pinned at its
KKT value. At the optimum this Hessian is PSD and its null space is
exactly the tangent space of the rotation orbit, ``{X S : S = -S^T}``.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from . import linalg
from .errors import (
    DecompositionError,
    IllPosedError,
    SizeError,
    TheoryViolationError,
    ValidationError,
)
from .problem import (
    GevProblem,
    check_eigengap,
    check_well_defined_singular,
    symmetrize,
    whiten,
)

ENUMERATION_CAP = 10**6
CLASSIFY_TOL = 1e-7


class Classification(enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"


@dataclass(frozen=True, eq=False)
class Equilibrium:
    index_set: tuple[int, ...]
    X: np.ndarray
    Y: np.ndarray
    classification: Classification | None = None
    lambda_min_H: float | None = None
    hessian_rank: int | None = None
    curvature_bound: float | None = None
    # lambda_min of H restricted to the complement of the rotation-orbit tangent
    restricted_lambda_min: float | None = None

    @property
    def is_stable(self) -> bool:
        return self.classification is Classification.STABLE


def dual_at(p: GevProblem, X) -> np.ndarray:
    X = p._check_X(X)
    return symmetrize(X.T @ p.A @ X)


def kkt_residual(p: GevProblem, X, Y) -> tuple[float, float]:
    """``(||2BXY - 2AX||_F, ||X^T B X - I_r||_F)``."""
    X = p._check_X(X)
    Y = p._check_Y(Y)
    primal = np.linalg.norm(2.0 * (p.B @ X @ Y - p.A @ X))
    feas = np.linalg.norm(X.T @ p.B @ X - np.eye(p.r))
    return float(primal), float(feas)


def _check_count(n: int, k: int, cap: int) -> None:
    count = math.comb(n, k)
    if count > cap:
        raise SizeError(f"C({n}, {k}) = {count} equilibria exceeds cap {cap}")


def enumerate_equilibria(p: GevProblem, cap: int = ENUMERATION_CAP) -> list[Equilibrium]:
    """All C(d, r) canonical equilibria, sorted lexicographically by index set."""
    report = check_eigengap(p)
    if not report.passed:
        raise IllPosedError(f"eigengap {report.gap:.3e} fails the identifiability check")
    _check_count(p.d, p.r, cap)
    F = whiten(p).equilibrium_basis
    out = []
    for I in itertools.combinations(range(p.d), p.r):
        X = F[:, list(I)]
        out.append(Equilibrium(index_set=I, X=X, Y=dual_at(p, X)))
    return out


def hessian_primal(p: GevProblem, X) -> np.ndarray:
    """Hessian of ``X -> L(X, X^T A X)`` in column-major vec coordinates.

    ``2 sym((X^T B X - 2I)/2 (x) A + I (x) B X X^T A + D/2 (x) B + AX [box] BX)``
    with ``sym(M) = M + M^T`` and ``D = X^T A X``. Valid at any X; at X = 0
    it reduces to ``-4 I (x) A``.
    """
    X = p._check_X(X)
    r = p.r
    A, B = p.A, p.B
    D = symmetrize(X.T @ A @ X)
    C = X.T @ B @ X - 2.0 * np.eye(r)
    M = (
        0.5 * np.kron(C, A)
        + np.kron(np.eye(r), B @ X @ X.T @ A)
        + 0.5 * np.kron(D, B)
        + linalg.boxtimes(A @ X, B @ X)
    )
    return 2.0 * linalg.sym(M)


def hessian_symmetrized_field(p: GevProblem, X) -> np.ndarray:
    """Box-product Hessian form, kept for comparison only.

    ``2 sym(I (x) (B X X^T - I) A + (X^T A X) (x) B + AX [box] BX)``. This is
    ``J + J^T`` for the Jacobian ``J`` of ``X -> 2(B X X^T - I) A X``; it is
    not PSD at the optimum once r >= 2, so classification does not use it.
    """
    X = p._check_X(X)
    r = p.r
    M = (
        np.kron(np.eye(r), (p.B @ X @ X.T - np.eye(p.d)) @ p.A)
        + np.kron(dual_at(p, X), p.B)
        + linalg.boxtimes(p.A @ X, p.B @ X)
    )
    return 2.0 * linalg.sym(M)


def orbit_tangent(X: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of ``{vec(X S) : S antisymmetric}``."""
    d, r = X.shape
    cols = []
    for a, b in itertools.combinations(range(r), 2):
        S = np.zeros((r, r))
        S[a, b], S[b, a] = 1.0, -1.0
        cols.append(linalg.vec(X @ S))
    if not cols:
        return np.zeros((d * r, 0))
    Q, _ = np.linalg.qr(np.column_stack(cols))
    return Q


def _restricted_lambda_min(H: np.ndarray, T: np.ndarray) -> float:
    if T.shape[1] == 0:
        return float(np.linalg.eigvalsh(H)[0])
    # complement of span(T)
    Q, _ = np.linalg.qr(np.column_stack([T, np.eye(H.shape[0])]))
    N = Q[:, T.shape[1] : H.shape[0]]
    return float(np.linalg.eigvalsh(N.T @ H @ N)[0])


def curvature_bound(p: GevProblem, index_set) -> float | None:
    """Upper bound on lambda_min(H) at an unstable equilibrium.

    ``2 (lam[max I] - lam[min I_perp]) / ||F[:, min I_perp]||^2`` where the
    max/min are taken over indices (eigenvalues are sorted descending, so
    this pairs the weakest selected direction with the strongest omitted
    one) and ``F`` is the matrix of singleton equilibria. ``None`` for I = [r].
    """
    I = tuple(index_set)
    if I == tuple(range(p.r)):
        return None
    w = whiten(p)
    comp = [i for i in range(p.d) if i not in I]
    j = min(comp)
    lam = w.Lambda_Atilde
    col = w.equilibrium_basis[:, j]
    return float(2.0 * (lam[max(I)] - lam[j]) / (col @ col))


def classify(p: GevProblem, eq: Equilibrium, tol: float = CLASSIFY_TOL,
             bound: bool = True) -> Equilibrium:
    """Fill in the classification from the spectrum of ``hessian_primal``.

    Unstable iff ``lambda_min < -tol ||H||_2``. Otherwise the point must be
    strongly convex off the rotation orbit, with rank exactly
    ``d r - r(r-1)/2``; anything else raises :class:`TheoryViolationError`.
    """
    H = hessian_primal(p, eq.X)
    ev = np.linalg.eigvalsh(H)
    scale = max(abs(ev[0]), abs(ev[-1]))
    thresh = tol * scale
    rank = int(np.sum(np.abs(ev) > thresh))
    lam_min = float(ev[0])
    restricted = _restricted_lambda_min(H, orbit_tangent(eq.X))
    if lam_min < -thresh:
        cb = curvature_bound(p, eq.index_set) if bound else None
        return replace(eq, classification=Classification.UNSTABLE, lambda_min_H=lam_min,
                       hessian_rank=rank, curvature_bound=cb,
                       restricted_lambda_min=restricted)
    expected = p.d * p.r - p.r * (p.r - 1) // 2
    if rank != expected or restricted <= thresh:
        raise TheoryViolationError(
            f"PSD Hessian at I={eq.index_set} has rank {rank} (expected {expected}) "
            f"and restricted lambda_min {restricted:.3e}"
        )
    return replace(eq, classification=Classification.STABLE, lambda_min_H=lam_min,
                   hessian_rank=rank, curvature_bound=None,
                   restricted_lambda_min=restricted)


def landscape(p: GevProblem, tol: float = CLASSIFY_TOL,
              cap: int = ENUMERATION_CAP) -> list[Equilibrium]:
    """Enumerate and classify; dispatches on the rank of B."""
    if p.B_full_rank:
        return [classify(p, eq, tol) for eq in enumerate_equilibria(p, cap)]
    return [classify(p, eq, tol, bound=False)
            for eq in enumerate_equilibria_singular(p, cap=cap)]


@dataclass(frozen=True, eq=False)
class SingularDecomposition:
    m: int
    O_B: np.ndarray
    Lambda_B_11: np.ndarray
    W: np.ndarray
    A_hat: np.ndarray
    O_Ahat: np.ndarray
    Lambda_Ahat: np.ndarray
    W22_cond: float

    @cached_property
    def blocks(self) -> dict[str, np.ndarray]:
        m = self.m
        return {
            "O11": self.O_B[:m, :m], "O12": self.O_B[:m, m:],
            "O21": self.O_B[m:, :m], "O22": self.O_B[m:, m:],
            "W11": self.W[:m, :m], "W12": self.W[:m, m:],
            "W21": self.W[m:, :m], "W22": self.W[m:, m:],
        }

    @cached_property
    def equilibrium_basis(self) -> np.ndarray:
        """d x m matrix; column i is the primal equilibrium for index set {i}."""
        b = self.blocks
        top = (self.Lambda_B_11 ** -0.5)[:, None] * self.O_Ahat
        bottom = -np.linalg.solve(b["W22"], b["W12"].T @ top)
        return self.O_B @ np.vstack([top, bottom])


def singular_decomposition(p: GevProblem, cond_max: float = 1e12) -> SingularDecomposition:
    m = p.rank_B
    eig = p.B_eigen
    O = eig.vectors
    W = O.T @ p.A @ O
    W = 0.5 * (W + W.T)
    W11, W12, W22 = W[:m, :m], W[:m, m:], W[m:, m:]
    cond = float(np.linalg.cond(W22)) if W22.size else 1.0
    if not np.isfinite(cond) or cond > cond_max:
        raise DecompositionError(f"W22 is singular (condition number {cond:.3e})")
    lam11 = eig.values[:m]
    s = lam11 ** -0.5
    schur = W11 - W12 @ np.linalg.solve(W22, W12.T)
    A_hat = schur * np.outer(s, s)
    A_hat = 0.5 * (A_hat + A_hat.T)
    ea = linalg.eig_sym(A_hat)
    return SingularDecomposition(m=m, O_B=O, Lambda_B_11=lam11, W=W, A_hat=A_hat,
                                 O_Ahat=ea.vectors, Lambda_Ahat=ea.values, W22_cond=cond)


def enumerate_equilibria_singular(p: GevProblem, cap: int = ENUMERATION_CAP,
                                  tol: float = 1e-9) -> list[Equilibrium]:
    """All C(m, r) canonical equilibria when rank(B) = m < d."""
    verdict = check_well_defined_singular(p, tol)
    if not verdict.passed:
        raise IllPosedError(
            f"objective unbounded: witness direction {np.array2string(verdict.witness, precision=4)}"
        )
    dec = singular_decomposition(p)
    if p.r > dec.m:
        raise ValidationError(f"r = {p.r} exceeds rank(B) = {dec.m}")
    _check_count(dec.m, p.r, cap)
    F = dec.equilibrium_basis
    return [
        Equilibrium(index_set=I, X=F[:, list(I)], Y=dual_at(p, F[:, list(I)]))
        for I in itertools.combinations(range(dec.m), p.r)
    ]
