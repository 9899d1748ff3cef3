"""Tuning-parameter baselines: correlation / partial-correlation thresholding and
neighborhood selection with node-wise lasso."""

from dataclasses import dataclass

import numba
import numpy as np

from .constants import TOL
from .errors import DegenerateColumn, DimensionMismatch, EmptyGrid, UserInputError
from .linalg import upper_pairs


@dataclass
class LassoFit:
    response: int
    coef: np.ndarray          # length p - 1, over the other columns in order
    lam: float
    iterations: int
    converged: bool

    def support(self):
        others = [k for k in range(len(self.coef) + 1) if k != self.response]
        return {others[k] for k in np.flatnonzero(self.coef)}


@dataclass
class PathResult:
    grid: np.ndarray
    edge_sets: list


def sample_correlations(x, center=False):
    """Sample correlations ``sum_l x_li x_lj / sqrt(sum_l x_li**2 * sum_l x_lj**2)``.

    Uncentered unless ``center`` is set.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch(f"data must be 2-d, got shape {x.shape}")
    if center:
        x = x - x.mean(axis=0)
    norms = np.sqrt(np.sum(x * x, axis=0))
    if np.any(norms == 0):
        raise DegenerateColumn(f"zero-variance column(s): {np.flatnonzero(norms == 0).tolist()}")
    xs = x / norms
    c = np.clip(xs.T @ xs, -1.0, 1.0)
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return c


def threshold_graph(m, grid):
    """Edge sets ``{(i, j): i < j, |m_ij| >= t}`` for each ``t`` in a descending grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyGrid("threshold grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) >= 0):
        raise UserInputError("threshold grid must be positive and strictly descending")
    m = np.asarray(m, dtype=float)
    rows, cols = upper_pairs(m.shape[0])
    mag = np.abs(m[rows, cols])
    sets = []
    for t in grid:
        hit = mag >= t
        sets.append(frozenset(zip(rows[hit].tolist(), cols[hit].tolist())))
    return PathResult(grid=grid, edge_sets=sets)


def linear_grid(top, size=50):
    """``size`` evenly spaced thresholds in ``(0, top]``, descending."""
    if not top > 0:
        raise EmptyGrid("grid upper end must be positive")
    return top * np.arange(size, 0, -1) / size


def log_grid(top, size=50, ratio=100.0):
    """``size`` log-spaced values from ``top`` down to ``top / ratio``."""
    if not top > 0:
        raise EmptyGrid("grid upper end must be positive")
    return top * np.logspace(0.0, -np.log10(ratio), size)


def _standardize(x):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    scale = np.sqrt(np.sum(x * x, axis=0) / n)
    if np.any(scale == 0):
        raise DegenerateColumn(f"zero-variance column(s): {np.flatnonzero(scale == 0).tolist()}")
    return x / scale


@numba.njit(cache=False, nogil=True)
def _cd_gram(gram, corr, lam, beta, tol, max_sweeps):
    # Cyclic coordinate descent on 0.5 b'Gb - c'b + lam |b|_1; grad holds c - Gb.
    m = beta.shape[0]
    grad = corr.copy()
    for k in range(m):
        if beta[k] != 0.0:
            for l in range(m):
                grad[l] -= gram[l, k] * beta[k]
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for k in range(m):
            old = beta[k]
            z = grad[k] + gram[k, k] * old
            if z > lam:
                new = (z - lam) / gram[k, k]
            elif z < -lam:
                new = (z + lam) / gram[k, k]
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[k] = new
                for l in range(m):
                    grad[l] -= gram[l, k] * delta
                if abs(delta) > biggest:
                    biggest = abs(delta)
        if biggest <= tol:
            return sweep, True
    return max_sweeps, False


def _node_problem(xs, j):
    n, p = xs.shape
    others = np.array([k for k in range(p) if k != j])
    design = xs[:, others]
    gram = np.ascontiguousarray(design.T @ design / n)
    corr = design.T @ xs[:, j] / n
    return design, gram, corr


def lasso_coordinate_descent(x, response_j, lam, beta0=None):
    """Node-wise lasso of column ``response_j`` on the remaining columns.

    Minimizes ``(1/2n) ||x_j - X_{-j} b||^2 + lam ||b||_1`` after scaling every
    column to mean square one, so ``lam_max = max_k |x_k' x_j| / n``. Cyclic
    coordinate descent stops when no coefficient moves by more than ``1e-8``
    in a sweep, or after ``10**4`` sweeps (then ``converged`` is False).
    """
    if lam < 0:
        raise UserInputError(f"penalty must be nonnegative, got {lam}")
    xs = _standardize(x)
    _, gram, corr = _node_problem(xs, response_j)
    beta = np.zeros(gram.shape[0]) if beta0 is None else np.array(beta0, dtype=float)
    it, ok = _cd_gram(gram, corr, float(lam), beta, TOL.lasso_tol, TOL.lasso_max_sweeps)
    return LassoFit(response=int(response_j), coef=beta, lam=float(lam), iterations=int(it), converged=bool(ok))


def lasso_objective(x, response_j, coef, lam):
    xs = _standardize(x)
    design, _, _ = _node_problem(xs, response_j)
    resid = xs[:, response_j] - design @ coef
    return float(resid @ resid / (2 * xs.shape[0]) + lam * np.sum(np.abs(coef)))


def kkt_residual(x, fit):
    """Largest violation of the lasso optimality conditions at ``fit``."""
    xs = _standardize(x)
    design, _, _ = _node_problem(xs, fit.response)
    n = xs.shape[0]
    g = design.T @ (xs[:, fit.response] - design @ fit.coef) / n
    active = fit.coef != 0
    viol_active = np.abs(g[active] - fit.lam * np.sign(fit.coef[active]))
    viol_inactive = np.maximum(np.abs(g[~active]) - fit.lam, 0.0)
    return float(max(viol_active.max(initial=0.0), viol_inactive.max(initial=0.0)))


def lambda_max(x):
    xs = _standardize(x)
    n = xs.shape[0]
    g = np.abs(xs.T @ xs) / n
    np.fill_diagonal(g, 0.0)
    return float(g.max())


def _combine(support, rule):
    # support[j, k]: column k is in the lasso support of node j.
    if rule not in ("and", "or"):
        raise UserInputError(f"rule must be 'and' or 'or', got {rule!r}")
    adj = support & support.T if rule == "and" else support | support.T
    rows, cols = upper_pairs(adj.shape[0])
    hit = adj[rows, cols]
    return frozenset(zip(rows[hit].tolist(), cols[hit].tolist()))


def mb_graph(x, lam, rule="and"):
    """Neighborhood selection: node-wise lasso at ``lam`` combined by the and/or rule."""
    p = np.shape(x)[1]
    support = np.zeros((p, p), dtype=bool)
    for j in range(p):
        support[j, list(lasso_coordinate_descent(x, j, lam).support())] = True
    return _combine(support, rule)


def mb_path(x, grid, rules=("and", "or")):
    """Neighborhood selection along a descending penalty grid with warm starts.

    Returns a dict ``rule -> PathResult``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyGrid("penalty grid is empty")
    xs = _standardize(x)
    p = xs.shape[1]
    support = np.zeros((grid.size, p, p), dtype=bool)
    for j in range(p):
        _, gram, corr = _node_problem(xs, j)
        others = np.array([k for k in range(p) if k != j])
        beta = np.zeros(p - 1)
        for g, lam in enumerate(grid):
            _cd_gram(gram, corr, float(lam), beta, TOL.lasso_tol, TOL.lasso_max_sweeps)
            support[g, j, others] = beta != 0
    return {
        rule: PathResult(grid=grid, edge_sets=[_combine(s, rule) for s in support])
        for rule in rules
    }
