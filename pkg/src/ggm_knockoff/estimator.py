"""Knockoff edge selection for Gaussian graphical models.

The pipeline has three stages:

1. sample partial correlations ``R`` from the unnormalized Gram matrix
   ``X.T @ X``, and knockoff partial correlations ``R0`` drawn entrywise from
   the exact null law of a sample partial correlation,
2. hard-threshold entry statistics ``T = |R|``, ``T0 = |R0|`` combined into the
   signed test matrix ``W = max(T, T0) * sign(T - T0)``,
3. a data-driven threshold on ``W`` chosen so that an estimate of the false
   discovery proportion stays below the target level ``q``. The ``"ko+"``
   variant adds one to the numerator of that estimate, which gives exact
   finite-sample control when the conditional and marginal graphs coincide.

Counts in the threshold rule run over unordered pairs ``i < j``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateColumn,
    DiagonalInSwapSet,
    DimensionMismatch,
    InvalidQ,
    NotPositiveDefinite,
    SampleSizeTooSmall,
    UserInputError,
)
from .linalg import as_symmetric, invert_spd, upper_pairs
from .rng import student_t

SCHEMES = ("ko", "ko+")


@dataclass(frozen=True)
class TestMatrix:
    """Signed statistics ``w`` with the entry statistics they came from.

    ``partial`` is the sample partial correlation matrix when known; its
    entries are reported as the retained values of selected edges.
    """

    __test__ = False  # not a pytest class

    w: np.ndarray
    t: np.ndarray
    t0: np.ndarray
    partial: np.ndarray | None = None

    @property
    def p(self):
        return self.w.shape[0]


@dataclass
class SelectionResult:
    threshold: float
    selected_edges: frozenset
    retained_values: dict
    target_q: float
    scheme: str
    edge_statistics: dict = field(default_factory=dict)

    @property
    def n_selected(self):
        return len(self.selected_edges)

    def sorted_edges(self):
        return sorted(self.selected_edges)


def _check_scheme(scheme):
    scheme = scheme.lower()
    if scheme not in SCHEMES:
        raise UserInputError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return scheme


def _check_q(q):
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise InvalidQ(f"target FDR level must lie in [0, 1], got {q}")
    return q


def _check_data(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch(f"data must be a 2-d array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise UserInputError("data contain non-finite values")
    n, p = x.shape
    if n <= p:
        raise SampleSizeTooSmall(f"need more samples than variables, got n={n}, p={p}")
    return x


def precision_to_partial(omega):
    """Partial correlations ``-omega_ij / sqrt(omega_ii * omega_jj)`` with unit diagonal."""
    omega = as_symmetric(omega)
    d = np.diag(omega)
    if np.any(d <= 0):
        raise NotPositiveDefinite("precision matrix has a non-positive diagonal entry")
    s = 1.0 / np.sqrt(d)
    r = -omega * np.outer(s, s)
    np.fill_diagonal(r, 1.0)
    return r


def partial_correlations(x, center=False):
    """Sample partial correlation matrix of the columns of ``x``.

    Parameters
    ----------
    x : array_like, shape (n, p)
        Observations in rows. Requires ``n > p``.
    center : bool
        Subtract column means first. By default the Gram matrix ``x.T @ x`` is
        used as is, which assumes mean-zero data.

    Raises
    ------
    SampleSizeTooSmall
        If ``n <= p``.
    DegenerateColumn
        If the Gram matrix is numerically singular.
    """
    x = _check_data(x)
    if center:
        x = x - x.mean(axis=0)
    gram = x.T @ x
    gram = 0.5 * (gram + gram.T)
    try:
        omega = invert_spd(gram)
    except NotPositiveDefinite as exc:
        raise DegenerateColumn(f"Gram matrix is not positive definite ({exc})") from exc
    return precision_to_partial(omega)


def null_t_statistic(r, n, p):
    """Pivot ``r / sqrt((1 - r**2) / (n - p))``, t-distributed with n - p dof under the null."""
    r = np.asarray(r, dtype=float)
    out = r / np.sqrt((1.0 - r * r) / (n - p))
    return float(out) if out.ndim == 0 else out


def knockoff_entry(z, dof):
    """Map a t-variate to the partial-correlation scale: ``z / sqrt(dof + z**2)``."""
    z = np.asarray(z, dtype=float)
    out = z / np.sqrt(dof + z * z)
    return float(out) if out.ndim == 0 else out


def make_knockoffs(rng, n, p):
    """Symmetric knockoff matrix with one t_{n-p} draw per unordered pair.

    Draws are consumed in row-major order over the strict upper triangle and
    mirrored into the lower triangle.
    """
    n, p = int(n), int(p)
    if n <= p:
        raise SampleSizeTooSmall(f"need more samples than variables, got n={n}, p={p}")
    dof = n - p
    iu = upper_pairs(p)
    z = student_t(rng, dof, size=len(iu[0]))
    r0 = np.eye(p)
    vals = knockoff_entry(z, dof)
    r0[iu] = vals
    r0[iu[1], iu[0]] = vals
    return r0


def entry_statistics(r):
    """Entry point of each off-diagonal element on the hard-threshold path: ``|r_ij|``."""
    r = np.asarray(r, dtype=float)
    t = np.abs(r)
    np.fill_diagonal(t, 0.0)
    return t


def test_matrix(t, t0, partial=None):
    """Signed test matrix ``max(t, t0) * sign(t - t0)``; exact ties give 0."""
    t = np.asarray(t, dtype=float)
    t0 = np.asarray(t0, dtype=float)
    if t.shape != t0.shape or t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise DimensionMismatch(f"entry statistics have shapes {t.shape} and {t0.shape}")
    if partial is not None and np.shape(partial) != t.shape:
        raise DimensionMismatch("partial correlation matrix does not match the statistics")
    w = np.maximum(t, t0) * np.sign(t - t0)
    np.fill_diagonal(w, 0.0)
    return TestMatrix(w=w, t=t, t0=t0, partial=None if partial is None else np.asarray(partial))


test_matrix.__test__ = False


def _select(tm, threshold, q, scheme, edges=None):
    w = tm.w
    if edges is None:
        if math.isinf(threshold):
            edges = []
        else:
            rows, cols = upper_pairs(tm.p)
            hit = w[rows, cols] >= threshold
            edges = zip(rows[hit].tolist(), cols[hit].tolist())
    edges = frozenset((int(i), int(j)) for i, j in edges)
    retained = {}
    if tm.partial is not None:
        retained = {e: float(tm.partial[e]) for e in edges}
    stats = {e: float(w[e]) for e in edges}
    return SelectionResult(
        threshold=float(threshold),
        selected_edges=edges,
        retained_values=retained,
        target_q=q,
        scheme=scheme,
        edge_statistics=stats,
    )


def _threshold(tm, q, offset):
    rows, cols = upper_pairs(tm.p)
    vals = np.sort(tm.w[rows, cols])
    cand = np.unique(np.abs(vals[vals != 0.0]))
    if cand.size == 0:
        return math.inf
    m = vals.size
    neg = np.searchsorted(vals, -cand, side="right")
    pos = m - np.searchsorted(vals, cand, side="left")
    ratio = (neg + offset) / np.maximum(pos, 1)
    ok = np.flatnonzero(ratio <= q)
    return float(cand[ok[0]]) if ok.size else math.inf


def ko_threshold(w, q):
    """Smallest nonzero ``|W|`` value ``t`` with ``#{W <= -t} / max(#{W >= t}, 1) <= q``.

    Returns an infinite threshold and an empty selection when no candidate
    qualifies.
    """
    q = _check_q(q)
    return _select(w, _threshold(w, q, 0), q, "ko")


def ko_plus_threshold(w, q):
    """As :func:`ko_threshold` with ``#{W <= -t} + 1`` in the numerator."""
    q = _check_q(q)
    return _select(w, _threshold(w, q, 1), q, "ko+")


def select(w, q, scheme="ko"):
    scheme = _check_scheme(scheme)
    return ko_threshold(w, q) if scheme == "ko" else ko_plus_threshold(w, q)


def sequential_threshold_oracle(w, q, scheme="ko"):
    """Threshold via the ordered "p-value" formulation of the selection rule.

    Nonzero upper-triangle statistics are ordered by decreasing magnitude and
    given the value 1/2 when positive and 1 when negative. Scanning prefixes
    that end at the last element of a run of equal magnitudes, the largest
    prefix ``k`` whose ratio ``(#{p > 1/2} + offset) / max(#{p <= 1/2}, 1)``
    is at most ``q`` determines the threshold ``|W^k|``; the positive entries
    in that prefix are the selected edges. Written independently of
    :func:`ko_threshold` so the two can check each other.
    """
    q = _check_q(q)
    scheme = _check_scheme(scheme)
    offset = 1 if scheme == "ko+" else 0
    p = w.p
    entries = []
    for i in range(p):
        for j in range(i + 1, p):
            v = float(w.w[i, j])
            if v != 0.0:
                entries.append((abs(v), v, (i, j)))
    entries.sort(key=lambda e: -e[0])

    best_k = 0
    n_neg = n_pos = 0
    for k, (mag, v, _) in enumerate(entries, start=1):
        if v > 0:
            n_pos += 1
        else:
            n_neg += 1
        last_of_run = k == len(entries) or entries[k][0] < mag
        if last_of_run and (n_neg + offset) / max(n_pos, 1) <= q:
            best_k = k

    if best_k == 0:
        return _select(w, math.inf, q, scheme, edges=[])
    chosen = [e for _, v, e in entries[:best_k] if v > 0]
    return _select(w, entries[best_k - 1][0], q, scheme, edges=chosen)


def swap_entries(r, r0, pairs):
    """Exchange the entries of ``r`` and ``r0`` on ``pairs`` (both triangles).

    Returns new arrays; the inputs are not modified.
    """
    r = np.asarray(r, dtype=float)
    r0 = np.asarray(r0, dtype=float)
    if r.shape != r0.shape:
        raise DimensionMismatch(f"shapes {r.shape} and {r0.shape} differ")
    unordered = set()
    for i, j in pairs:
        if i == j:
            raise DiagonalInSwapSet(f"swap set contains diagonal index ({i}, {j})")
        unordered.add((min(i, j), max(i, j)))
    a, b = r.copy(), r0.copy()
    for i, j in unordered:
        a[i, j], b[i, j] = r0[i, j], r[i, j]
        a[j, i], b[j, i] = r0[j, i], r[j, i]
    return a, b


def knockoff_test_matrix(x, rng, center=False):
    """Stages 1 and 2: the test matrix for data ``x`` and one knockoff draw."""
    r = partial_correlations(x, center=center)
    n, p = np.shape(x)
    r0 = make_knockoffs(rng, n, p)
    return test_matrix(entry_statistics(r), entry_statistics(r0), partial=r)


def estimate_graph(x, q, rng, scheme="ko", center=False):
    """Estimate the edge set of a Gaussian graphical model at target FDR ``q``.

    Parameters
    ----------
    x : array_like, shape (n, p)
        Data with ``n > p``.
    q : float
        Target FDR level in [0, 1].
    rng : RngStream
        Consumed for the knockoff draws.
    scheme : {"ko", "ko+"}
    center : bool
        Subtract column means before forming the Gram matrix.

    Returns
    -------
    SelectionResult
    """
    q = _check_q(q)
    scheme = _check_scheme(scheme)
    x = _check_data(x)
    return select(knockoff_test_matrix(x, rng, center=center), q, scheme)
