"""Dense symmetric linear algebra: Cholesky, SPD inversion, Jacobi eigenvalues.

Written against plain ``numpy`` arrays without LAPACK calls; sized for the
desk-scale problems in this package (p up to a few hundred).
"""

import numpy as np

from .constants import TOL
from .errors import DimensionMismatch, NoConvergence, NotPositiveDefinite


def as_symmetric(a):
    """Return ``a`` as a float array after checking it is square and symmetric.

    Exact symmetry is required; use :func:`symmetrize` first for matrices that
    are symmetric only up to rounding.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise DimensionMismatch("matrix is not exactly symmetric")
    return a


def symmetrize(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def cholesky(a):
    """Lower-triangular factor ``L`` with ``L @ L.T == a``.

    Parameters
    ----------
    a : array_like, shape (p, p)
        Symmetric matrix, intended to be positive definite.

    Returns
    -------
    ndarray, shape (p, p)

    Raises
    ------
    NotPositiveDefinite
        If a pivot falls to or below ``1e-12`` times the largest diagonal
        entry. For a sample covariance this usually means n <= p or a
        collinear column.
    """
    a = as_symmetric(a)
    p = a.shape[0]
    floor = TOL.cholesky_pivot * max(float(np.max(np.diag(a))), 0.0)
    L = np.zeros_like(a)
    for j in range(p):
        row = L[j, :j]
        pivot = a[j, j] - row @ row
        if not pivot > floor:
            raise NotPositiveDefinite(
                f"pivot {pivot:.3e} at index {j} is not above {floor:.3e}"
            )
        d = np.sqrt(pivot)
        L[j, j] = d
        if j + 1 < p:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ row) / d
    return L


def solve_lower(L, b):
    """Forward substitution for ``L y = b`` (``b`` may hold many columns)."""
    y = np.array(b, dtype=float, copy=True)
    for i in range(L.shape[0]):
        y[i] = (y[i] - L[i, :i] @ y[:i]) / L[i, i]
    return y


def solve_upper(U, b):
    y = np.array(b, dtype=float, copy=True)
    for i in range(U.shape[0] - 1, -1, -1):
        y[i] = (y[i] - U[i, i + 1:] @ y[i + 1:]) / U[i, i]
    return y


def invert_spd(a):
    """Inverse of a symmetric positive definite matrix through its Cholesky factor.

    The two triangular solves run on all columns of the identity at once; the
    result is symmetrized by averaging its triangles.
    """
    L = cholesky(a)
    y = solve_lower(L, np.eye(L.shape[0]))
    inv = solve_upper(L.T, y)
    return symmetrize(inv)


def log_det_spd(a):
    L = cholesky(a)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def symmetric_eigenvalues(a):
    """All eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).

    Sweeps over every off-diagonal pair until the off-diagonal Frobenius norm is
    at most ``1e-12`` times the Frobenius norm of the input.

    Raises
    ------
    NoConvergence
        After 100 sweeps without meeting the tolerance.
    """
    A = as_symmetric(a).copy()
    p = A.shape[0]
    target = TOL.jacobi_offdiag * np.linalg.norm(A)
    for _ in range(TOL.jacobi_max_sweeps + 1):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= target:
            return np.sort(np.diag(A).copy())
        for i in range(p - 1):
            for j in range(i + 1, p):
                aij = A[i, j]
                if aij == 0.0:
                    continue
                diff = A[j, j] - A[i, i]
                if abs(diff) > 1e100 * abs(aij):
                    t = aij / diff
                else:
                    theta = diff / (2.0 * aij)
                    t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ci = A[:, i].copy()
                cj = A[:, j].copy()
                A[:, i] = c * ci - s * cj
                A[:, j] = s * ci + c * cj
                ri = A[i, :].copy()
                rj = A[j, :].copy()
                A[i, :] = c * ri - s * rj
                A[j, :] = s * ri + c * rj
                A[i, j] = A[j, i] = 0.0
    raise NoConvergence(f"Jacobi did not converge in {TOL.jacobi_max_sweeps} sweeps")


def condition_number(a):
    ev = symmetric_eigenvalues(a)
    return float(ev[-1] / ev[0])


def upper_pairs(p):
    """Row-major indices ``(rows, cols)`` of the strict upper triangle."""
    return np.triu_indices(p, k=1)
