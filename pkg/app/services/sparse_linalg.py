"""
Sparse storage helpers, Jacobi-preconditioned Krylov solvers and the dense
generalized eigensolver behind the spectral oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from app.config import EXPERIMENT_CONFIG, SOLVER_CONFIG
from app.utils.errors import (
    BreakdownError,
    ConvergenceError,
    EigenSolverError,
    NonFiniteError,
    NotSPDError,
    SolverError,
)

logger = logging.getLogger(__name__)

SparseMatrix = sp.csr_matrix

_TINY = np.finfo(float).eps ** 2


@dataclass(frozen=True)
class SolveInfo:
    method: str
    iterations: int
    residual: float
    converged: bool = True


def finalize(matrix) -> SparseMatrix:
    """Canonical CSR: duplicates summed, explicit zeros dropped, indices sorted."""
    csr = sp.csr_matrix(matrix, dtype=float)
    csr.sum_duplicates()
    csr.eliminate_zeros()
    csr.sort_indices()
    return csr


def max_abs(matrix) -> float:
    data = sp.csr_matrix(matrix).data
    return float(np.abs(data).max()) if data.size else 0.0


def is_symmetric(matrix, rtol: float = 1e-13) -> bool:
    scale = max_abs(matrix)
    return max_abs(matrix - matrix.T) <= rtol * scale


def is_skew_symmetric(matrix) -> bool:
    return max_abs(matrix + matrix.T) == 0.0


def _default_max_iter(n: int, max_iter: Optional[int]) -> int:
    return max_iter if max_iter is not None else SOLVER_CONFIG["max_iter_factor"] * max(n, 1)


def _prepare(S, b, tol, x0, method):
    if not 0.0 < tol < 1.0:
        raise SolverError(f"{method}: tolerance must lie in (0, 1), got {tol}")
    b = np.asarray(b, dtype=float)
    if S.shape[0] != S.shape[1] or S.shape[0] != b.shape[0]:
        raise SolverError(f"{method}: shape mismatch {S.shape} vs rhs {b.shape}")
    if not np.all(np.isfinite(b)):
        raise NonFiniteError(f"{method}: right-hand side is not finite")
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    return b, x


def cg_solve(
    S,
    b,
    tol: float = SOLVER_CONFIG["tol"],
    max_iter: Optional[int] = None,
    x0=None,
) -> Tuple[np.ndarray, SolveInfo]:
    """Jacobi-preconditioned conjugate gradients for SPD ``S``.

    Stops when ``||b - Sx||_2 <= tol * ||b||_2``. Every iteration checks that
    the search direction has positive curvature and the preconditioned residual
    product is non-negative, so the error energy norm decreases monotonically.
    """
    b, x = _prepare(S, b, tol, x0, "CG")
    diag = S.diagonal()
    if np.any(diag <= 0.0):
        row = int(np.flatnonzero(diag <= 0.0)[0])
        raise NotSPDError(f"CG: non-positive diagonal entry {diag[row]:.3e} in row {row}")
    max_iter = _default_max_iter(len(b), max_iter)

    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros_like(b), SolveInfo("CG", 0, 0.0)

    r = b - S @ x
    z = r / diag
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / b_norm
    iterations = 0
    while res > tol:
        if iterations >= max_iter:
            raise ConvergenceError("CG", iterations, res, tol)
        Sp = S @ p
        curvature = p @ Sp
        if not curvature > 0.0:
            raise NotSPDError(f"CG: non-positive curvature p'Sp = {curvature:.3e} at iteration {iterations}")
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * Sp
        z = r / diag
        rz_next = r @ z
        if rz_next < 0.0:
            raise NotSPDError(f"CG: negative preconditioned residual product at iteration {iterations}")
        p = z + (rz_next / rz) * p
        rz = rz_next
        iterations += 1
        res = np.linalg.norm(r) / b_norm

    logger.debug("CG converged in %d iterations (residual %.2e)", iterations, res)
    return x, SolveInfo("CG", iterations, float(res))


def bicgstab_solve(
    S,
    b,
    tol: float = SOLVER_CONFIG["tol"],
    max_iter: Optional[int] = None,
    x0=None,
) -> Tuple[np.ndarray, SolveInfo]:
    """Right Jacobi-preconditioned BiCGStab for general square ``S``.

    Vanishing inner products raise :class:`BreakdownError`; running out of
    iterations raises :class:`ConvergenceError`.
    """
    b, x = _prepare(S, b, tol, x0, "BiCGStab")
    diag = S.diagonal()
    if np.any(diag == 0.0):
        row = int(np.flatnonzero(diag == 0.0)[0])
        raise SolverError(f"BiCGStab: zero diagonal entry in row {row}, Jacobi scaling undefined")
    max_iter = _default_max_iter(len(b), max_iter)

    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros_like(b), SolveInfo("BiCGStab", 0, 0.0)

    r = b - S @ x
    r_hat = r.copy()
    r_hat_norm = np.linalg.norm(r_hat)
    rho = alpha = omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    res = np.linalg.norm(r) / b_norm
    iterations = 0
    while res > tol:
        if iterations >= max_iter:
            raise ConvergenceError("BiCGStab", iterations, res, tol)
        rho_next = r_hat @ r
        if abs(rho_next) <= _TINY * r_hat_norm * np.linalg.norm(r):
            raise BreakdownError("rho = (r_hat, r)", iterations)
        p = r + (rho_next / rho) * (alpha / omega) * (p - omega * v)
        rho = rho_next
        p_hat = p / diag
        v = S @ p_hat
        r_hat_v = r_hat @ v
        if abs(r_hat_v) <= _TINY * r_hat_norm * np.linalg.norm(v):
            raise BreakdownError("(r_hat, v)", iterations)
        alpha = rho / r_hat_v
        s = r - alpha * v
        iterations += 1
        if np.linalg.norm(s) / b_norm <= tol:
            x += alpha * p_hat
            r = s
            res = np.linalg.norm(r) / b_norm
            break
        s_hat = s / diag
        t = S @ s_hat
        tt = t @ t
        if tt == 0.0:
            raise BreakdownError("(t, t)", iterations)
        omega = (t @ s) / tt
        if omega == 0.0:
            raise BreakdownError("omega", iterations)
        x += alpha * p_hat + omega * s_hat
        r = s - omega * t
        res = np.linalg.norm(r) / b_norm
        if not np.isfinite(res):
            raise NonFiniteError(f"BiCGStab: residual became non-finite at iteration {iterations}")

    logger.debug("BiCGStab converged in %d iterations (residual %.2e)", iterations, res)
    return x, SolveInfo("BiCGStab", iterations, float(res))


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    """Full spectrum of the pencil (A, M): ascending eigenvalues, M-orthonormal columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mass: SparseMatrix

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def coefficients(self, w) -> np.ndarray:
        """Modal coefficients ``phi_k' M w``."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.size,):
            raise SolverError(f"vector of length {w.shape} does not match eigenbasis of size {self.size}")
        return self.eigenvectors.T @ (self.mass @ w)

    def synthesize(self, coefficients) -> np.ndarray:
        return self.eigenvectors @ coefficients

    def mode(self, k: int) -> np.ndarray:
        """Eigenvector ``k`` (0-based) as a fresh array."""
        return self.eigenvectors[:, k].copy()


def _jacobi_eigh(a: np.ndarray, max_sweeps: int = 50) -> Tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations for a dense symmetric matrix."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    for sweep in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= np.finfo(float).eps * scale:
            logger.debug("Jacobi eigensolver converged after %d sweeps", sweep)
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= _TINY * scale:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    raise EigenSolverError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def generalized_eig(A, M, method: str = "lapack", max_dim: Optional[int] = None) -> EigenDecomposition:
    """Dense solution of ``A phi = lambda M phi``.

    ``M`` is factored as ``L L'``, the reduced matrix ``L^-1 A L^-T`` is
    diagonalized with LAPACK (``method="lapack"``) or cyclic Jacobi rotations
    (``method="jacobi"``), and the eigenvectors are mapped back with ``L^-T``.
    """
    max_dim = EXPERIMENT_CONFIG["oracle_max_dim"] if max_dim is None else max_dim
    n = A.shape[0]
    if A.shape != M.shape or A.shape[0] != A.shape[1]:
        raise EigenSolverError(f"pencil shapes differ: {A.shape} vs {M.shape}")
    if n > max_dim:
        raise EigenSolverError(f"dense eigensolver limited to dimension {max_dim}, got {n}")
    if method not in ("lapack", "jacobi"):
        raise EigenSolverError(f"unknown eigensolver method '{method}'")

    a = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    m = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    try:
        lower = scipy.linalg.cholesky(m, lower=True)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(f"Cholesky factorization of the mass matrix failed: {exc}") from exc

    half = scipy.linalg.solve_triangular(lower, a, lower=True)
    reduced = scipy.linalg.solve_triangular(lower, half.T, lower=True)
    reduced = 0.5 * (reduced + reduced.T)

    if method == "lapack":
        values, vectors = scipy.linalg.eigh(reduced)
    else:
        values, vectors = _jacobi_eigh(reduced)
    order = np.argsort(values, kind="stable")
    values, vectors = values[order], vectors[:, order]
    phi = scipy.linalg.solve_triangular(lower.T, vectors, lower=False)

    logger.debug("Generalized eigensolve (%s, n=%d): lambda in [%.6g, %.6g]", method, n, values[0], values[-1])
    return EigenDecomposition(values, phi, finalize(M))
