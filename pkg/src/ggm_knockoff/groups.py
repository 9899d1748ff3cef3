"""Group-level analysis of abundance data.

CSV ingestion, centered log-ratio coordinates, prevalence filtering,
subsampling, the multiple-FDR aggregation into scaled cumulative signal
strengths, and a paired Wilcoxon signed-rank comparison of two groups.
"""

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .constants import WILCOXON_EXACT_MAX_N, WILCOXON_MIN_PAIRS
from .errors import (
    AllFeaturesFiltered,
    DimensionMismatch,
    NonPositiveAfterPseudocount,
    SubsampleTooLarge,
    TooFewPairs,
    UserInputError,
)
from .estimator import estimate_graph
from .linalg import upper_pairs

log = logging.getLogger(__name__)

GROUP_COLUMN = "__group__"


@dataclass
class AbundanceTable:
    values: np.ndarray
    features: list
    groups: list | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.features):
            raise DimensionMismatch("abundance values do not match the feature names")
        if len(set(self.features)) != len(self.features):
            raise UserInputError("feature names must be unique")
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise UserInputError("abundances must be finite and nonnegative")
        if self.groups is not None and len(self.groups) != self.values.shape[0]:
            raise DimensionMismatch("group labels do not match the number of samples")

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def rows(self, index):
        index = np.asarray(index, dtype=int)
        groups = None if self.groups is None else [self.groups[i] for i in index]
        return AbundanceTable(self.values[index], list(self.features), groups)

    def columns(self, keep):
        keep = np.asarray(keep, dtype=bool)
        return replace(self, values=self.values[:, keep],
                       features=[f for f, k in zip(self.features, keep) if k])

    def split(self):
        """Sub-tables per group label, in order of first appearance."""
        if self.groups is None:
            raise UserInputError("table has no group labels")
        labels = list(dict.fromkeys(self.groups))
        return {g: self.rows([i for i, h in enumerate(self.groups) if h == g]) for g in labels}


def read_abundance_csv(path, group_column=GROUP_COLUMN):
    """Read a header-first UTF-8 CSV; ``group_column`` (if present) holds group labels."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise UserInputError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UserInputError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        gcol = header.index(group_column) if group_column in header else None
        features = [h for k, h in enumerate(header) if k != gcol]
        values, groups = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise UserInputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values.append([float(c) for k, c in enumerate(row) if k != gcol])
            except ValueError as exc:
                raise UserInputError(f"{path}:{lineno}: {exc}") from None
            if gcol is not None:
                groups.append(row[gcol].strip())
    if not values:
        raise UserInputError(f"{path}: no data rows")
    return AbundanceTable(np.array(values), features, groups if gcol is not None else None)


def clr_transform(table, pseudocount=0.5):
    """Centered log-ratio coordinates ``log(x + c) - mean_j log(x_j + c)`` per row."""
    shifted = table.values + pseudocount
    if np.any(shifted <= 0):
        raise NonPositiveAfterPseudocount(
            "zero abundances need a positive pseudocount before taking logs"
        )
    logs = np.log(shifted)
    return logs - logs.mean(axis=1, keepdims=True)


def prevalence_mask(table, min_fraction):
    if not 0.0 <= min_fraction <= 1.0:
        raise UserInputError(f"prevalence fraction must lie in [0, 1], got {min_fraction}")
    need = math.ceil(min_fraction * table.n)
    keep = np.count_nonzero(table.values > 0, axis=0) >= need
    if not keep.any():
        raise AllFeaturesFiltered(f"no feature is present in at least {need} samples")
    return keep


def prevalence_filter(table, min_fraction):
    """Keep features with nonzero abundance in at least ``ceil(min_fraction * n)`` samples."""
    return table.columns(prevalence_mask(table, min_fraction))


def subsample_index(rng, n, m):
    """Sorted indices of ``m`` distinct rows out of ``n``, uniform without replacement."""
    if not 0 <= m <= n:
        raise SubsampleTooLarge(f"cannot draw {m} rows from {n}")
    return np.sort(rng.permutation(n)[:m])


def subsample_rows(rng, table, m):
    return table.rows(subsample_index(rng, table.n, m))


@dataclass
class SignalStrengthMatrix:
    values: np.ndarray
    thresholds: list
    targets: list
    n_selected: list = field(default_factory=list)

    @property
    def empty(self):
        return not np.any(self.values)

    def upper(self):
        return self.values[upper_pairs(self.values.shape[0])]


def aggregate_selections(selections, p):
    """Scaled cumulative strengths ``sum_k |R^k_ij| / max_lm sum_k |R^k_lm|``.

    ``selections`` are :class:`SelectionResult` objects (or anything with a
    ``retained_values`` mapping of edges to partial correlations).
    """
    total = np.zeros((p, p))
    for sel in selections:
        for (i, j), r in sel.retained_values.items():
            total[i, j] += abs(r)
            total[j, i] += abs(r)
    top = total.max()
    if top > 0:
        total = total / top
    return total


def multi_fdr_aggregate(runs, base_q, rng, scheme="ko", center=False):
    """Estimate each run at target ``base_q * 0.5**k`` (k = 1, 2, ...) and aggregate.

    Run ``k`` uses child stream ``k`` of ``rng``.
    """
    if not 0.0 < base_q <= 1.0:
        raise UserInputError(f"base target level must lie in (0, 1], got {base_q}")
    runs = [np.asarray(x, dtype=float) for x in runs]
    if not runs:
        raise UserInputError("need at least one run")
    p = runs[0].shape[1]
    if any(x.shape[1] != p for x in runs):
        raise DimensionMismatch("all runs must have the same number of variables")
    selections, targets = [], []
    for k, x in enumerate(runs, start=1):
        q = base_q * 0.5**k
        targets.append(q)
        selections.append(estimate_graph(x, q, rng.child(k), scheme=scheme, center=center))
    return _strengths(selections, targets, p)


def vanilla_strengths(x, q, rng, scheme="ko", center=False):
    """Single-run scaled strengths ``|R_ij(t)| / max |R_lm(t)|`` at target ``q``."""
    x = np.asarray(x, dtype=float)
    sel = estimate_graph(x, q, rng.child(0), scheme=scheme, center=center)
    return _strengths([sel], [q], x.shape[1])


def _strengths(selections, targets, p):
    mat = SignalStrengthMatrix(
        values=aggregate_selections(selections, p),
        thresholds=[s.threshold for s in selections],
        targets=list(targets),
        n_selected=[s.n_selected for s in selections],
    )
    if mat.empty:
        log.warning("no run selected any edge; signal strengths are all zero")
    return mat


# --------------------------------------------------------------------------
# Wilcoxon signed-rank test

@dataclass
class GroupComparison:
    statistic: float
    z: float
    p_value: float
    n_pairs: int
    method: str
    summaries: dict = field(default_factory=dict)


def _midranks(values):
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_p(ranks, w):
    # Enumerate all 2**n sign assignments; p = P(min(T+, T-) <= w).
    total = ranks.sum()
    n = len(ranks)
    signs = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
    t_plus = signs @ ranks
    stat = np.minimum(t_plus, total - t_plus)
    return float(np.count_nonzero(stat <= w + 1e-9) / len(stat))


def _normal_p(ranks, w):
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(counts**3 - counts) / 48.0
    if var <= 0:
        return 0.0, 1.0
    z = (w - mean + 0.5) / math.sqrt(var)
    z = min(z, 0.0)
    return z, min(1.0, math.erfc(-z / math.sqrt(2.0)))


def wilcoxon_signed_rank(a, b, method="auto"):
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped, absolute differences ranked with midranks
    for ties, and ``W = min(T+, T-)``. The p-value is exact (enumeration) when
    at most 12 nonzero differences remain and ``method`` is ``"auto"``;
    otherwise it uses the normal approximation with tie-corrected variance and
    continuity correction.

    Raises
    ------
    TooFewPairs
        If fewer than 6 nonzero differences remain.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch("paired samples must have equal length")
    d = (a - b).ravel()
    d = d[d != 0]
    n = d.size
    if n < WILCOXON_MIN_PAIRS:
        raise TooFewPairs(f"need at least {WILCOXON_MIN_PAIRS} nonzero differences, got {n}")
    if method not in ("auto", "exact", "normal"):
        raise UserInputError(f"unknown method {method!r}")
    ranks = _midranks(np.abs(d))
    t_plus = float(ranks[d > 0].sum())
    t_minus = float(ranks[d < 0].sum())
    w = min(t_plus, t_minus)
    z, p_normal = _normal_p(ranks, w)
    if method == "exact" and n > 20:
        raise UserInputError(f"exact enumeration is limited to 20 pairs, got {n}")
    use_exact = method == "exact" or (method == "auto" and n <= WILCOXON_EXACT_MAX_N)
    if use_exact:
        return GroupComparison(statistic=w, z=z, p_value=_exact_p(ranks, w), n_pairs=n, method="exact")
    return GroupComparison(statistic=w, z=z, p_value=p_normal, n_pairs=n, method="normal")


def connectivity_summary(strengths, bins=10):
    vals = strengths.upper()
    hist, edges = np.histogram(vals[vals > 0], bins=bins, range=(0.0, 1.0))
    return {
        "n_nonzero": int(np.count_nonzero(vals)),
        "n_pairs": int(vals.size),
        "mean_strength": float(vals.mean()) if vals.size else 0.0,
        "histogram_counts": hist.tolist(),
        "histogram_edges": edges.tolist(),
    }


# --------------------------------------------------------------------------
# two-group pipeline

@dataclass
class GroupAnalysis:
    features: list
    strengths: dict            # group label -> SignalStrengthMatrix
    schemes: dict              # group label -> "multi-fdr" | "vanilla"
    comparison: GroupComparison | None
    comparison_error: str | None
    subsample_size: int | None


def group_design_matrices(table, pseudocount=0.5, min_prevalence=0.05):
    """CLR coordinates over all features, restricted to the prevalent ones.

    Prevalence is judged on the raw abundances of the pooled table. CLR is
    taken over the full composition first; if every feature survives the
    filter, the retained coordinates sum to zero in each row and the Gram
    matrix is singular, which the estimator reports as a degenerate column.
    """
    keep = prevalence_mask(table, min_prevalence)
    coords = clr_transform(table, pseudocount)[:, keep]
    return coords, [f for f, k in zip(table.features, keep) if k]


def analyze_groups(table, rng, base_q=0.2, subsamples=10, pseudocount=0.5,
                   min_prevalence=0.05, scheme="ko", center=False):
    """Compare the graphs of exactly two groups.

    The larger group is subsampled ``subsamples`` times down to the size of the
    smaller one and aggregated with :func:`multi_fdr_aggregate`; the smaller
    group gets a single run at ``base_q``. Equal sizes skip subsampling and
    both groups get the single-run treatment. The groups are compared with a
    signed-rank test paired over upper-triangle entries.
    """
    parts = table.split()
    if len(parts) != 2:
        raise UserInputError(f"expected exactly two groups, found {len(parts)}: {sorted(parts)}")
    coords, features = group_design_matrices(table, pseudocount, min_prevalence)
    labels = list(parts)
    index = {g: [i for i, h in enumerate(table.groups) if h == g] for g in labels}
    sizes = {g: len(index[g]) for g in labels}
    small, large = sorted(labels, key=lambda g: (sizes[g], labels.index(g)))
    strengths, schemes = {}, {}
    subsample_size = None
    if sizes[small] == sizes[large]:
        log.info("group sizes are equal (%d); no subsampling", sizes[small])
        for k, g in enumerate(labels):
            strengths[g] = vanilla_strengths(coords[index[g]], base_q, rng.child(k), scheme, center)
            schemes[g] = "vanilla"
    else:
        subsample_size = sizes[small]
        sub_rng = rng.child(0)
        big = coords[index[large]]
        runs = []
        for k in range(subsamples):
            runs.append(big[subsample_index(sub_rng.child(k), big.shape[0], subsample_size)])
        strengths[large] = multi_fdr_aggregate(runs, base_q, rng.child(1), scheme, center)
        schemes[large] = "multi-fdr"
        strengths[small] = vanilla_strengths(coords[index[small]], base_q, rng.child(2), scheme, center)
        schemes[small] = "vanilla"
        strengths = {g: strengths[g] for g in labels}
        schemes = {g: schemes[g] for g in labels}

    comparison, error = None, None
    try:
        comparison = wilcoxon_signed_rank(strengths[labels[0]].upper(), strengths[labels[1]].upper())
        comparison.summaries = {g: connectivity_summary(strengths[g]) for g in labels}
    except TooFewPairs as exc:
        error = str(exc)
        log.warning("group comparison skipped: %s", exc)
    return GroupAnalysis(features=features, strengths=strengths, schemes=schemes,
                         comparison=comparison, comparison_error=error,
                         subsample_size=subsample_size)
