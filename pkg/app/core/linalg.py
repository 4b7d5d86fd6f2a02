"""
Dense symmetric eigenanalysis, orthogonal projections and subspace metrics.

Bases are plain ``float64`` arrays of shape (n, r) with orthonormal columns;
r = 0 is the empty basis. Nothing here keeps state, so every function is safe
to call from several threads at once.
"""

from __future__ import annotations

import itertools
import logging
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray
from scipy import linalg as sla
from scipy.special import comb

from app.core.errors import ConfigError, ConvergenceError, DimensionError, SingularSystemError
from app.core.settings import get_settings

logger = logging.getLogger(__name__)

Matrix = NDArray[np.float64]
Vector = NDArray[np.float64]

ORTHONORMAL_TOL = 1e-10
SYMMETRY_TOL = 1e-8
JACOBI_OFF_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
JACOBI_MAX_DIM = get_settings().jacobi_max_dim
LS_RANK_TOL = 1e-10
KAPPA_EXACT_LIMIT = 1_000_000


class EigPair(NamedTuple):
    values: Vector
    vectors: Matrix


def as_matrix(a: NDArray, name: str = "matrix") -> Matrix:
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DimensionError(f"{name} must be 2-D with at least one row, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} has non-finite entries")
    return arr


def empty_basis(n: int) -> Matrix:
    return np.zeros((n, 0))


def is_orthonormal(P: Matrix, tol: float = ORTHONORMAL_TOL) -> bool:
    r = P.shape[1]
    if r == 0:
        return True
    return bool(np.linalg.norm(P.T @ P - np.eye(r)) <= tol)


def orthonormalize(A: Matrix) -> Matrix:
    """Thin QR with a positive R diagonal, so column order and orientation survive."""
    if A.shape[1] == 0:
        return A.copy()
    Q, R = sla.qr(A, mode="economic")
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    # row-major, the same layout a restored checkpoint has
    return np.ascontiguousarray(Q * signs)


def _fix_signs(V: Matrix) -> Matrix:
    """Make the first non-negligible entry of every column positive."""
    V = V.copy()
    for j in range(V.shape[1]):
        col = V[:, j]
        cutoff = 1e-12 * np.max(np.abs(col)) if col.size else 0.0
        nz = np.flatnonzero(np.abs(col) > cutoff)
        if nz.size and col[nz[0]] < 0:
            V[:, j] = -col
    return V


def _jacobi_eigh(S: Matrix, max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[Vector, Matrix]:
    """Cyclic Jacobi rotations on a symmetric matrix."""
    A = S.copy()
    n = A.shape[0]
    V = np.eye(n)
    scale = np.linalg.norm(S)
    if scale == 0.0:
        return np.zeros(n), V
    off_tol = JACOBI_OFF_TOL * scale

    for _sweep in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= off_tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c

                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q

                v_p = V[:, p].copy()
                v_q = V[:, q].copy()
                V[:, p] = c * v_p - s * v_q
                V[:, q] = s * v_p + c * v_q
    else:
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off > off_tol:
            raise ConvergenceError(float(off), f"Jacobi did not converge in {max_sweeps} sweeps")

    return np.diag(A).copy(), V


def sym_evd(S: NDArray, tol: float = 1e-10, method: str = "auto") -> EigPair:
    """
    Full eigendecomposition of a symmetric matrix, eigenvalues descending.

    Args:
        S: Symmetric square matrix
        tol: Relative reconstruction tolerance the result must meet
        method: "jacobi", "lapack", or "auto" (Jacobi up to REPROCS_JACOBI_MAX_DIM)

    Returns:
        EigPair with sign-normalized eigenvectors
    """
    S = as_matrix(S, "S")
    n, m = S.shape
    if n != m:
        raise DimensionError(f"sym_evd needs a square matrix, got {S.shape}")
    norm_s = np.linalg.norm(S)
    if np.linalg.norm(S - S.T) > SYMMETRY_TOL * max(norm_s, np.finfo(float).tiny):
        raise DimensionError("sym_evd input is not symmetric")
    S = 0.5 * (S + S.T)

    if method == "auto":
        method = "jacobi" if n <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        values, vectors = _jacobi_eigh(S)
    elif method == "lapack":
        values, vectors = sla.eigh(S)
    else:
        raise ConfigError(f"unknown eigensolver method: {method}")

    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = _fix_signs(vectors[:, order])

    residual = np.linalg.norm(S - (vectors * values) @ vectors.T)
    if residual > tol * max(1.0, norm_s):
        raise ConvergenceError(float(residual), f"eigen reconstruction residual {residual:.3e}")
    return EigPair(values, vectors)


def eigenvectors_above(S: NDArray, thresh: float) -> Matrix:
    """Basis for the eigenvectors whose eigenvalue is >= thresh (ties included)."""
    if not thresh > 0:
        raise ConfigError(f"thresh must be positive, got {thresh}")
    pair = sym_evd(S)
    keep = int(np.count_nonzero(pair.values >= thresh))
    return pair.vectors[:, :keep].copy()


def top_r_eigenvectors(S: NDArray, r: int) -> Matrix:
    S = as_matrix(S, "S")
    if r < 0 or r > S.shape[0]:
        raise DimensionError(f"cannot take {r} eigenvectors of a {S.shape[0]}x{S.shape[0]} matrix")
    if r == 0:
        return empty_basis(S.shape[0])
    return sym_evd(S).vectors[:, :r].copy()


def subspace_dif(Phat: Matrix, P: Matrix) -> float:
    """||(I - Phat Phat') P||_2, the unexplained fraction of range(P)."""
    if Phat.shape[0] != P.shape[0]:
        raise DimensionError(f"basis dimensions differ: {Phat.shape[0]} vs {P.shape[0]}")
    if P.shape[1] == 0:
        raise DimensionError("subspace_dif needs a non-empty reference basis")
    residual = proj_orth(Phat, P)
    value = float(sla.svdvals(residual)[0])
    return min(max(value, 0.0), 1.0)


def proj_orth(P: Matrix, M: NDArray) -> NDArray:
    """(I - P P') M applied as M - P (P' M); M may be a vector or a matrix."""
    M = np.asarray(M, dtype=np.float64)
    if M.shape[0] != P.shape[0]:
        raise DimensionError(f"cannot project {M.shape} with a basis of dimension {P.shape[0]}")
    if P.shape[1] == 0:
        return M.copy()
    return M - P @ (P.T @ M)


class ProjectionOperator:
    """Phi = I - P P' for a basis P, never materialized unless asked."""

    def __init__(self, basis: Matrix) -> None:
        self.basis = basis
        self.n = basis.shape[0]

    @classmethod
    def identity(cls, n: int) -> ProjectionOperator:
        return cls(empty_basis(n))

    def apply(self, v: NDArray) -> NDArray:
        return proj_orth(self.basis, v)

    def columns(self, idx: NDArray | list[int]) -> Matrix:
        """The columns of Phi listed in idx, as an n x |idx| matrix."""
        idx = np.asarray(idx, dtype=int)
        cols = np.zeros((self.n, idx.size))
        cols[idx, np.arange(idx.size)] = 1.0
        if self.basis.shape[1]:
            cols -= self.basis @ self.basis[idx].T
        return cols

    def gram(self, idx: NDArray | list[int]) -> Matrix:
        """(Phi_T)'(Phi_T), which equals the principal submatrix Phi[T, T]."""
        idx = np.asarray(idx, dtype=int)
        rows = self.basis[idx]
        return np.eye(idx.size) - rows @ rows.T

    def dense(self) -> Matrix:
        return np.eye(self.n) - self.basis @ self.basis.T


def denseness_mu(P: Matrix) -> float:
    """Smallest mu with max_i ||row_i(P)||^2 <= mu r / n."""
    n, r = P.shape
    if r == 0:
        raise DimensionError("denseness_mu needs a non-empty basis")
    return float(n / r * np.max(np.sum(P * P, axis=1)))


def kappa_s(P: Matrix, s: int, mode: str = "exact") -> float:
    """
    Denseness coefficient max_{|T|<=s} ||I_T' P||_2.

    Args:
        P: Basis matrix
        s: Row-subset size
        mode: "exact" enumerates every size-s row subset, "bound" returns sqrt(s) * kappa_1

    Returns:
        The coefficient (exact) or its upper bound
    """
    n = P.shape[0]
    if not 1 <= s <= n:
        raise ConfigError(f"s must lie in [1, {n}], got {s}")
    if mode == "bound":
        return float(np.sqrt(s) * np.max(np.linalg.norm(P, axis=1)))
    if mode != "exact":
        raise ConfigError(f"unknown kappa_s mode: {mode}")
    n_subsets = comb(n, s, exact=True)
    if n_subsets > KAPPA_EXACT_LIMIT:
        raise ConfigError(f"C({n},{s}) = {n_subsets} subsets; use mode='bound'")
    best = 0.0
    for rows in itertools.combinations(range(n), s):
        best = max(best, float(np.linalg.norm(P[list(rows)], 2)))
    return best


def ls_restricted(Phi_cols: Matrix, y: Vector) -> Vector:
    """argmin_z ||y - Phi_cols z||_2 through a thin QR factorization."""
    k = Phi_cols.shape[1]
    if k == 0:
        return np.zeros(0)
    if Phi_cols.shape[0] != y.shape[0]:
        raise DimensionError(f"LS system {Phi_cols.shape} vs right-hand side {y.shape}")
    Q, R = sla.qr(Phi_cols, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.max() == 0.0 or diag.min() < LS_RANK_TOL * diag.max():
        raise SingularSystemError(k)
    return sla.solve_triangular(R, Q.T @ y)
