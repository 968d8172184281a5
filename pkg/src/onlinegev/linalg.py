"""Dense symmetric-matrix kernels.

Everything here is a pure function of its inputs. Eigenvalues are always
returned in descending order, and ``sym`` is the unhalved ``M + M^T``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, NotPSDError, ValidationError

SYM_TOL = 1e-9
RANK_TOL = 1e-10


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-d float64 array."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{name} has non-finite entries")
    return M


def _require_square(M: np.ndarray, name: str = "matrix") -> None:
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got {M.shape}")


def sym(M) -> np.ndarray:
    """Return ``M + M^T`` (not the halved symmetric part)."""
    M = as_matrix(M)
    _require_square(M)
    return M + M.T


def kron(U, V) -> np.ndarray:
    return np.kron(as_matrix(U, "U"), as_matrix(V, "V"))


def boxtimes(U, V) -> np.ndarray:
    """Box product of ``U`` (d x r) and ``V`` (m x k), shape (d*k, m*r).

    Block ``(j, i)`` (j over the k columns of V, i over the r columns of U)
    is the outer product ``U[:, i] V[:, j]^T``. Equivalently entry
    ``(j*d + p, i*m + q)`` equals ``U[p, i] * V[q, j]``.
    """
    U = as_matrix(U, "U")
    V = as_matrix(V, "V")
    d, r = U.shape
    m, k = V.shape
    # T[j, p, i, q] = U[p, i] * V[q, j]
    T = np.einsum("pi,qj->jpiq", U, V)
    return T.reshape(k * d, r * m)


@dataclass(frozen=True)
class SymEigen:
    """Eigenpairs of a symmetric matrix, values sorted descending."""

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def check_symmetric(M: np.ndarray, tol: float = SYM_TOL, name: str = "matrix") -> None:
    _require_square(M, name)
    scale = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > tol * max(scale, np.finfo(float).tiny):
        raise ValidationError(f"{name} is not symmetric within relative tolerance {tol:g}")


def eig_sym(M, tol: float = SYM_TOL) -> SymEigen:
    """Symmetric eigendecomposition with descending eigenvalues.

    Exact ties keep LAPACK's order, so the identity maps to the identity.
    Inside a near-degenerate cluster the basis is arbitrary but deterministic.
    Each eigenvector is signed so its largest-magnitude entry is positive.
    """
    M = as_matrix(M)
    check_symmetric(M, tol)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    if V.size:
        pivots = V[np.argmax(np.abs(V), axis=0), np.arange(V.shape[1])]
        V = V * np.where(pivots < 0, -1.0, 1.0)
    return SymEigen(values=w, vectors=V)


def _psd_eigen(M, rank_tol: float) -> tuple[SymEigen, float]:
    eig = eig_sym(M)
    scale = max(abs(eig.values[0]), abs(eig.values[-1])) if eig.values.size else 0.0
    thresh = rank_tol * scale
    if eig.values.size and eig.values[-1] < -thresh:
        raise NotPSDError(
            f"matrix has eigenvalue {eig.values[-1]:.3e} below -{thresh:.3e}"
        )
    return eig, thresh


def psd_rank(M, rank_tol: float = RANK_TOL) -> int:
    eig, thresh = _psd_eigen(M, rank_tol)
    return int(np.sum(eig.values > thresh))


def _psd_function(M, rank_tol, fn) -> np.ndarray:
    eig, thresh = _psd_eigen(M, rank_tol)
    f = np.zeros_like(eig.values)
    keep = eig.values > thresh
    f[keep] = fn(eig.values[keep])
    return (eig.vectors * f) @ eig.vectors.T


def inv_sqrt_psd(M, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Pseudo-inverse square root; null directions map to zero."""
    return _psd_function(M, rank_tol, lambda x: x ** -0.5)


def sqrt_psd(M, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Symmetric PSD square root (eigenvalues at or below the threshold dropped)."""
    return _psd_function(M, rank_tol, np.sqrt)


def frob_dist(M1, M2) -> float:
    M1 = as_matrix(M1, "M1")
    M2 = as_matrix(M2, "M2")
    if M1.shape != M2.shape:
        raise DimensionError(f"shape mismatch {M1.shape} vs {M2.shape}")
    return float(np.linalg.norm(M1 - M2))


def vec(X: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization (matches the Kronecker conventions above)."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v).reshape((rows, cols), order="F")


def save_matrix_csv(path, M) -> None:
    M = as_matrix(M)
    np.savetxt(Path(path), M, delimiter=",", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    M = np.loadtxt(Path(path), delimiter=",", dtype=np.float64, ndmin=2)
    return as_matrix(M, str(path))


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian with sign-fixed R."""
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs
