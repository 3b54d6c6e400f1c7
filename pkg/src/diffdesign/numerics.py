"""Dense and sparse linear-algebra kernels shared by all solver stages.

Dense symmetric matrices are plain ``numpy`` arrays (only the symmetric part
is authoritative); sparse matrices are ``scipy.sparse`` CSR. The pencil
solver reduces to standard form through a Cholesky factor of the metric and
diagonalizes with cyclic Jacobi sweeps, which is robust and cheap at the
matrix sizes this package produces (a few dozen basis fields at most).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import NoConvergence, NotPositiveDefinite

#: pivot threshold, relative to the largest diagonal entry
PIVOT_RTOL = 1e-14

#: off-diagonal reduction target for Jacobi sweeps, relative to ||A||_F
JACOBI_RTOL = 1e-12

JACOBI_MAX_SWEEPS = 50


@dataclass(frozen=True)
class EigenDecomposition:
    """Ascending eigenvalues with matching eigenvector columns.

    For the generalized solver the columns are B-orthonormal:
    ``V.T @ B @ V == I`` up to round-off.
    """

    values: np.ndarray
    vectors: np.ndarray


def symmetric_part(a, rtol=1e-12):
    """Return 0.5*(A + A.T) after checking A is square and nearly symmetric."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = np.abs(a).max()
    if scale > 0.0 and np.abs(a - a.T).max() > rtol * scale * 10.0:
        raise ValueError("matrix is not symmetric within tolerance")
    return 0.5 * (a + a.T)


def cholesky(a):
    """Lower-triangular L with L @ L.T == A (LAPACK-backed).

    Raises NotPositiveDefinite when an elimination pivot falls to or below
    PIVOT_RTOL times the largest diagonal entry of A; rank-deficient PSD
    matrices are rejected by that floor even when the factorization itself
    squeaks through.
    """
    a = symmetric_part(a)
    floor = PIVOT_RTOL * max(float(np.max(np.diag(a))), 0.0)
    try:
        lower = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as err:
        raise NotPositiveDefinite(str(err)) from None
    pivots = np.diag(lower) ** 2
    if pivots.min() <= floor:
        j = int(np.argmin(pivots))
        raise NotPositiveDefinite(f"pivot {pivots[j]:.3e} at column {j}")
    return lower


def solve_lower(lower, b):
    """Forward substitution for L x = b (b may be a vector or matrix)."""
    return scipy.linalg.solve_triangular(lower, np.asarray(b, dtype=float),
                                         lower=True, check_finite=False)


def solve_upper(upper, b):
    """Back substitution for U x = b (b may be a vector or matrix)."""
    return scipy.linalg.solve_triangular(upper, np.asarray(b, dtype=float),
                                         lower=False, check_finite=False)


def cholesky_solve(lower, b):
    """Solve (L L.T) x = b given a precomputed Cholesky factor."""
    return solve_upper(lower.T, solve_lower(lower, b))


def solve_spd_dense(a, rhs):
    """Solve A x = rhs for SPD A via Cholesky factorization."""
    return cholesky_solve(cholesky(a), rhs)


def jacobi_eigensym(a, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps run until the off-diagonal Frobenius mass falls below
    JACOBI_RTOL * ||A||_F; raises NoConvergence after `max_sweeps` sweeps.
    """
    a = symmetric_part(a).copy()
    n = a.shape[0]
    v = np.eye(n)
    norm_a = float(np.linalg.norm(a))
    if n == 1 or norm_a == 0.0:
        return EigenDecomposition(np.diag(a).copy(), v)

    diag_mask = ~np.eye(n, dtype=bool)
    for sweep in range(max_sweeps + 1):
        off = math.sqrt(float(np.sum(a[diag_mask] ** 2)))
        if off <= JACOBI_RTOL * norm_a:
            break
        if sweep == max_sweeps:
            raise NoConvergence(f"Jacobi sweeps exhausted (off={off:.3e})")
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 0.1 * JACOBI_RTOL * norm_a / n:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q

    values = np.diag(a).copy()
    order = np.argsort(values, kind="stable")
    return EigenDecomposition(values[order], v[:, order])


def generalized_eig(a, b):
    """Solve the symmetric pencil A V = Lambda B V with SPD B.

    Reduces to standard form with B = L L.T, C = L^-1 A L^-T, then applies
    `jacobi_eigensym`. Returned eigenvectors are B-orthonormal.
    """
    a = symmetric_part(a)
    lower = cholesky(b)
    c = solve_lower(lower, solve_lower(lower, a).T)
    # the reduction is symmetric up to round-off amplified by cond(B)
    eig = jacobi_eigensym(0.5 * (c + c.T))
    vectors = solve_upper(lower.T, eig.vectors)
    return EigenDecomposition(eig.values, vectors)


def cg_solve(a, rhs, tol=1e-10, x0=None, max_iter=None):
    """Jacobi-preconditioned conjugate gradients for sparse SPD systems.

    Iterates until ||A x - rhs|| <= tol * ||rhs||; raises NoConvergence
    after 10*n iterations (or `max_iter` if given). Accumulation order is
    fixed so repeated solves are bitwise reproducible.
    """
    a = sp.csr_matrix(a)
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros(n)

    inv_diag = 1.0 / a.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - a @ x
    if float(np.linalg.norm(r)) <= tol * rhs_norm:
        return x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(max_iter):
        ap = a @ p
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        if float(np.linalg.norm(r)) <= tol * rhs_norm:
            return x
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NoConvergence(f"CG stalled at ||r||/||b|| = {np.linalg.norm(r) / rhs_norm:.3e}")
