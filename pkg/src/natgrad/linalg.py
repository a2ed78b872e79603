"""Dense linear-algebra kernels: QR factorizations, minimum-norm least squares,
triangular solves, conjugate gradient, and pseudoinverse application.

Everything here is plain 64-bit float numpy/scipy. Factorization results are
immutable value objects; all functions are pure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla


class RankDeficiencyError(RuntimeError):
    """Raised when a factorization that assumes full rank meets a singular R."""


@dataclass(frozen=True)
class QRFactors:
    """Economy-size QR factorization A = Q R with orthonormal-column Q."""

    q: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class PivotedQRFactors:
    """Column-pivoted QR factorization A P = Q R with a detected numerical rank.

    ``numerical_rank`` counts the leading diagonal entries of R with
    |R[i,i]| > truncation_tolerance * |R[0,0]|.
    """

    q: np.ndarray
    r: np.ndarray
    permutation: np.ndarray
    numerical_rank: int
    truncation_tolerance: float


@dataclass(frozen=True)
class CgReport:
    """Outcome of a conjugate-gradient solve."""

    solution: np.ndarray
    iterations: int
    final_relative_residual: float
    converged: bool


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def qr_economy(a) -> QRFactors:
    """Economy-size QR of a tall matrix (rows >= cols)."""
    a = _as_matrix(a)
    k, p = a.shape
    if k < p:
        raise ValueError(f"qr_economy requires rows >= cols, got {k}x{p}")
    q, r = sla.qr(a, mode="economic")
    return QRFactors(q=q, r=r)


def qr_column_pivoted(a, tol: float = 1e-10) -> PivotedQRFactors:
    """Rank-revealing QR with column pivoting.

    The numerical rank is the number of diagonal entries of R exceeding
    tol * |R[0,0]|; the pivoting guarantees |R[i,i]| is non-increasing.
    """
    a = _as_matrix(a)
    if not 0.0 < tol < 1.0:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    q, r, perm = sla.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        rank = int(np.count_nonzero(diag > tol * diag[0]))
    return PivotedQRFactors(
        q=q, r=r, permutation=perm, numerical_rank=rank, truncation_tolerance=tol
    )


def solve_least_squares_min_norm(a, b, tol: float = 1e-10) -> np.ndarray:
    """Minimum-norm least-squares solution of ``a @ x ~ b``.

    Uses two QR passes: a column-pivoted QR of ``a`` truncated at the numerical
    rank, then a second QR of the truncated triangular block transposed, so the
    returned solution is the minimum-norm minimizer (equal to pinv(a) @ b).
    A zero (or numerically rank-0) matrix yields the zero vector with a warning.
    """
    a = _as_matrix(a)
    b = np.asarray(b, dtype=float)
    if b.shape != (a.shape[0],):
        raise ValueError(f"rhs shape {b.shape} does not match matrix {a.shape}")
    piv = qr_column_pivoted(a, tol=tol)
    r = piv.numerical_rank
    if r == 0:
        warnings.warn("least-squares matrix is numerically zero; returning 0")
        return np.zeros(a.shape[1])
    qt_b = piv.q[:, :r].T @ b
    r_trunc = piv.r[:r, :]
    q1, r1 = sla.qr(r_trunc.T, mode="economic")
    x_perm = q1 @ sla.solve_triangular(r1.T, qt_b, lower=True)
    x = np.empty(a.shape[1])
    x[piv.permutation] = x_perm
    return x


def triangular_solve(r, b, lower: bool = False) -> np.ndarray:
    """Solve a triangular system by forward/backward substitution."""
    r = _as_matrix(r)
    b = np.asarray(b, dtype=float)
    diag = np.diag(r)
    if np.any(diag == 0.0):
        raise RankDeficiencyError("triangular matrix has a zero diagonal entry")
    return sla.solve_triangular(r, b, lower=lower)


def cg_solve(
    apply_a: Callable[[np.ndarray], np.ndarray],
    b,
    tol: float = 1e-8,
    max_iter: int | None = None,
) -> CgReport:
    """Plain conjugate gradient for a symmetric positive (semi)definite action.

    Stops when ||A x - b|| <= tol * ||b||. Exhausting max_iter returns the best
    iterate with converged=False so the caller can decide how to proceed.
    """
    b = np.asarray(b, dtype=float)
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    n = b.shape[0]
    if max_iter is None:
        max_iter = 3 * n
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return CgReport(np.zeros(n), 0, 0.0, True)
    x = np.zeros(n)
    res = b.copy()
    direction = res.copy()
    rs = res @ res
    rel = np.sqrt(rs) / b_norm
    iterations = 0
    while rel > tol and iterations < max_iter:
        a_dir = apply_a(direction)
        denom = direction @ a_dir
        if denom <= 0.0:
            # Indefinite or null direction; stop with the current iterate.
            break
        alpha = rs / denom
        x = x + alpha * direction
        res = res - alpha * a_dir
        rs_new = res @ res
        direction = res + (rs_new / rs) * direction
        rs = rs_new
        rel = np.sqrt(rs) / b_norm
        iterations += 1
    return CgReport(x, iterations, float(rel), bool(rel <= tol))


def pseudo_apply_underdetermined(bt_factors: QRFactors, zeta) -> np.ndarray:
    """Apply the pseudoinverse of a full-row-rank wide matrix B via QR of B^T.

    Given B^T = Q R, the minimum-norm solution of B y = zeta is
    y = Q (R^T)^{-1} zeta, evaluated by one forward substitution.
    Raises RankDeficiencyError when R has a (numerically) zero diagonal, in
    which case the caller should fall back to the pivoted-QR path.
    """
    zeta = np.asarray(zeta, dtype=float)
    r = bt_factors.r
    diag = np.abs(np.diag(r))
    if diag.size == 0 or np.any(diag <= 1e-14 * max(diag.max(), 1e-300)):
        raise RankDeficiencyError("B^T factor is rank deficient")
    w = sla.solve_triangular(r.T, zeta, lower=True)
    return bt_factors.q @ w
