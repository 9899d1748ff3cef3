"""Ground-truth graphs, error metrics and the Monte Carlo driver."""

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import baselines
from .constants import KS_C_ALPHA_001, TOL
from .errors import (
    ConfigError,
    EmptySample,
    InfeasibleShift,
    NotPositiveDefinite,
    ReplicateFailed,
    SampleSizeTooSmall,
    UserInputError,
)
from .estimator import knockoff_test_matrix, partial_correlations, select
from .linalg import cholesky, condition_number, invert_spd, symmetric_eigenvalues, upper_pairs
from .rng import RngStream, sample_mvn

METHODS = ("ko", "ko+", "ct", "pt", "mb_and", "mb_or")
CSV_COLUMNS = ("method", "q_or_lambda", "replicate", "fdp", "power", "n_selected", "threshold")
GRID_SIZE = 50
MB_GRID_RATIO = 100.0


# --------------------------------------------------------------------------
# ground truth

@dataclass
class GroundTruthModel:
    kind: str
    p: int
    precision: np.ndarray
    covariance: np.ndarray
    edges: frozenset
    marginal_edges: frozenset
    condition_numbers: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def sparsity(self):
        return len(self.edges) / (self.p * (self.p - 1) / 2)

    def covariance_factor(self):
        if "_factor" not in self.__dict__:
            self.__dict__["_factor"] = cholesky(self.covariance)
        return self.__dict__["_factor"]


def _pattern(m, tol):
    rows, cols = upper_pairs(m.shape[0])
    hit = np.abs(m[rows, cols]) > tol
    return frozenset(zip(rows[hit].tolist(), cols[hit].tolist()))


def _unit_diagonal(sigma):
    s = 1.0 / np.sqrt(np.diag(sigma))
    out = sigma * np.outer(s, s)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 1.0)
    return out


def default_bandwidth(p, sparsity=1 / 25):
    """Bandwidth whose band density ``b(2p - b - 1) / (p(p - 1))`` is closest to ``sparsity``."""
    best = min(range(1, p), key=lambda b: abs(b * (2 * p - b - 1) / (p * (p - 1)) - sparsity))
    return best


def band_graph(p, bandwidth, strength=-0.4, kappa=200.0):
    """Band precision matrix shifted to a prescribed condition number.

    ``B`` has unit diagonal and ``strength`` on the first ``bandwidth``
    off-diagonals; ``Omega = B + delta * I`` with ``delta`` chosen so that
    ``cond(Omega) == kappa``. The covariance is ``inv(Omega)`` rescaled to unit
    diagonal and the stored precision is the inverse of that rescaled
    covariance (same zero pattern as ``B``).

    ``condition_numbers`` records the condition number before rescaling
    (equal to ``kappa``) and after.
    """
    p, bandwidth = int(p), int(bandwidth)
    if not 1 <= bandwidth < p:
        raise UserInputError(f"bandwidth must satisfy 1 <= bandwidth < p, got {bandwidth}")
    if strength == 0:
        raise UserInputError("band strength must be nonzero")
    if not kappa > 1:
        raise UserInputError(f"condition number must exceed 1, got {kappa}")
    idx = np.arange(p)
    lag = np.abs(idx[:, None] - idx[None, :])
    B = np.where((lag >= 1) & (lag <= bandwidth), float(strength), 0.0)
    np.fill_diagonal(B, 1.0)
    ev = symmetric_eigenvalues(B)
    lo, hi = ev[0], ev[-1]
    delta = (hi - kappa * lo) / (kappa - 1.0)
    if not lo + delta > 0:
        raise InfeasibleShift(f"shift {delta} leaves Omega indefinite")
    omega_raw = B + delta * np.eye(p)
    sigma_raw = invert_spd(omega_raw)
    sigma = _unit_diagonal(sigma_raw)
    omega = invert_spd(sigma)
    omega[lag > bandwidth] = 0.0
    conds = {
        "precision_unscaled": condition_number(omega_raw),
        "covariance_unscaled": condition_number(sigma_raw),
        "covariance": condition_number(sigma),
    }
    return GroundTruthModel(
        kind="band",
        p=p,
        precision=omega,
        covariance=sigma,
        edges=_pattern(omega_raw, 0.0),
        marginal_edges=_pattern(sigma, TOL.marginal_zero),
        condition_numbers=conds,
        params={"bandwidth": bandwidth, "strength": float(strength), "kappa": float(kappa), "shift": float(delta)},
    )


def block_graph(p, block_size, strength=0.3):
    """Block-diagonal equicorrelated covariance; conditional and marginal graphs coincide.

    Raises
    ------
    NotPositiveDefinite
        If ``strength`` makes a block indefinite.
    UserInputError
        If ``block_size`` does not divide ``p``.
    """
    p, block_size = int(p), int(block_size)
    if block_size < 1 or p % block_size:
        raise UserInputError(f"block size {block_size} must divide p={p}")
    blocks = np.arange(p) // block_size
    same = blocks[:, None] == blocks[None, :]
    sigma = np.where(same, float(strength), 0.0)
    np.fill_diagonal(sigma, 1.0)
    cholesky(sigma)
    omega = invert_spd(sigma)
    omega[~same] = 0.0
    edges = _pattern(omega, TOL.block_zero)
    marginal = _pattern(sigma, TOL.block_zero)
    if edges != marginal:
        raise NotPositiveDefinite("block precision has unexpected zero entries")
    return GroundTruthModel(
        kind="block",
        p=p,
        precision=omega,
        covariance=sigma,
        edges=edges,
        marginal_edges=marginal,
        condition_numbers={"covariance": condition_number(sigma)},
        params={"block_size": block_size, "strength": float(strength)},
    )


# --------------------------------------------------------------------------
# metrics

def fdp(selected, truth):
    """False discovery proportion ``#(selected - truth) / max(#selected, 1)``."""
    selected = set(selected)
    return len(selected - set(truth)) / max(len(selected), 1)


def power(selected, truth):
    truth = set(truth)
    return len(set(selected) & truth) / max(len(truth), 1)


def ks_statistic(sample, reference_cdf):
    """One-sample Kolmogorov-Smirnov distance to a continuous reference CDF."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise EmptySample("KS statistic needs a nonempty sample")
    f = np.asarray(reference_cdf(x), dtype=float)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def ks_two_sample(a, b):
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("KS statistic needs nonempty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical_value(n, m=None):
    """Asymptotic KS critical value at alpha = 0.001 (two-sample if ``m`` is given)."""
    eff = n if m is None else n * m / (n + m)
    return KS_C_ALPHA_001 / math.sqrt(eff)


# --------------------------------------------------------------------------
# configuration

@dataclass
class SimulationConfig:
    graph: str = "block"
    p: int = 40
    n: int = 200
    bandwidth: int | None = None
    block_size: int = 4
    strength: float | None = None
    kappa: float = 200.0
    replicates: int = 100
    q_grid: tuple = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    seed: int = 0
    center: bool = False
    methods: tuple = ("ko", "ko+")

    @classmethod
    def from_mapping(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.q_grid = tuple(float(q) for q in cfg.q_grid)
        cfg.methods = tuple(str(m).lower() for m in cfg.methods)
        cfg.validate()
        return cfg

    def validate(self):
        if self.graph not in ("band", "block"):
            raise ConfigError(f"graph must be 'band' or 'block', got {self.graph!r}")
        for name in ("p", "n", "replicates"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.p < 2:
            raise ConfigError("p must be at least 2")
        if not self.q_grid or any(not 0.0 <= q <= 1.0 for q in self.q_grid):
            raise ConfigError(f"q grid must be a nonempty subset of [0, 1], got {self.q_grid}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown method(s) {bad}; valid names: {', '.join(METHODS)}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.n <= self.p and any(m in ("ko", "ko+", "pt") for m in self.methods):
            raise SampleSizeTooSmall(f"need n > p, got n={self.n}, p={self.p}")
        return self

    def resolved(self):
        """Copy with graph defaults filled in."""
        data = asdict(self)
        if self.graph == "band":
            if data["bandwidth"] is None:
                data["bandwidth"] = default_bandwidth(self.p)
            if data["strength"] is None:
                data["strength"] = -0.4
        elif data["strength"] is None:
            data["strength"] = 0.3
        return SimulationConfig(**data)

    def build_model(self):
        cfg = self.resolved()
        if cfg.graph == "band":
            return band_graph(cfg.p, cfg.bandwidth, cfg.strength, cfg.kappa)
        return block_graph(cfg.p, cfg.block_size, cfg.strength)

    def to_dict(self):
        data = asdict(self.resolved())
        data["q_grid"] = list(data["q_grid"])
        data["methods"] = list(data["methods"])
        return data


# --------------------------------------------------------------------------
# results

def _num(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _fmt(x):
    return _num(x) if isinstance(_num(x), str) else repr(float(x))


@dataclass
class MetricsRecord:
    config: dict
    rows: list
    grids: dict

    def method_rows(self, method, value=None):
        out = [r for r in self.rows if r["method"] == method]
        if value is not None:
            out = [r for r in out if r["q_or_lambda"] == value]
        return out

    def aggregates(self):
        """Mean FDP (the FDR), mean power and their standard errors per method and grid value."""
        out = []
        for method in [m for m in METHODS if m in self.grids]:
            for value in self.grids[method]:
                rows = self.method_rows(method, value)
                fd = np.array([r["fdp"] for r in rows])
                pw = np.array([r["power"] for r in rows])
                ns = np.array([r["n_selected"] for r in rows])
                entry = {
                    "method": method,
                    "q_or_lambda": value,
                    "fdr": float(fd.mean()),
                    "fdr_se": _se(fd),
                    "power": float(pw.mean()),
                    "power_se": _se(pw),
                    "mean_selected": float(ns.mean()),
                }
                if method in ("ko", "ko+"):
                    mean, se = modified_fdr_stats(self, value, method)
                    entry["modified_fdr"] = mean
                    entry["modified_fdr_se"] = se
                out.append(entry)
        return out

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([
                r["method"], _fmt(r["q_or_lambda"]), r["replicate"], _fmt(r["fdp"]),
                _fmt(r["power"]), r["n_selected"], _fmt(r["threshold"]),
            ])
        return buf.getvalue()

    def summary(self):
        aggs = self.aggregates()
        ko_table = [
            {"method": a["method"], "target_fdr": a["q_or_lambda"], "actual_fdr": a["fdr"],
             "actual_fdr_se": a["fdr_se"], "modified_fdr": a["modified_fdr"], "power": a["power"]}
            for a in aggs if a["method"] in ("ko", "ko+")
        ]
        return {
            "config": self.config,
            "grids": {k: [_num(v) for v in g] for k, g in self.grids.items()},
            "aggregates": [{k: _num(v) if isinstance(v, float) else v for k, v in a.items()} for a in aggs],
            "target_vs_actual_fdr": ko_table,
        }

    def to_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _se(values):
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(values.size))


def modified_fdr_stats(record, q, method="ko"):
    """Mean and standard error of ``#(selected not in E') / (#selected + 1/q)``."""
    rows = record.method_rows(method, q)
    if not rows:
        raise UserInputError(f"no {method} rows at q={q}")
    inv_q = math.inf if q == 0 else 1.0 / q
    vals = np.array([r["n_false_marginal"] / (r["n_selected"] + inv_q) for r in rows])
    return float(vals.mean()), _se(vals)


def modified_fdr_estimate(record, q, method="ko"):
    return modified_fdr_stats(record, q, method)[0]


# --------------------------------------------------------------------------
# Monte Carlo driver

def _row(method, value, replicate, selected, model, threshold):
    n_sel = len(selected)
    n_false = len(selected - model.edges)
    return {
        "method": method,
        "q_or_lambda": float(value),
        "replicate": replicate,
        "fdp": n_false / max(n_sel, 1),
        "power": power(selected, model.edges),
        "n_selected": n_sel,
        "threshold": float(threshold),
        "n_false": n_false,
        "n_false_marginal": len(selected - model.marginal_edges),
    }


def _draw(cfg, model, replicate):
    stream = RngStream(cfg.seed, replicate)
    x = sample_mvn(stream.child(0), model.covariance, cfg.n, factor=model.covariance_factor())
    return x, stream


def _first_pass(cfg, model, methods, replicate):
    x, stream = _draw(cfg, model, replicate)
    rows, extra = [], {}
    partial = None
    if "ko" in methods or "ko+" in methods:
        tm = knockoff_test_matrix(x, stream.child(1), center=cfg.center)
        partial = tm.partial
        for scheme in ("ko", "ko+"):
            if scheme in methods:
                for q in cfg.q_grid:
                    sel = select(tm, q, scheme)
                    rows.append(_row(scheme, q, replicate, sel.selected_edges, model, sel.threshold))
    if "pt" in methods:
        extra["pt"] = partial if partial is not None else partial_correlations(x, center=cfg.center)
    if "ct" in methods:
        extra["ct"] = baselines.sample_correlations(x, center=cfg.center)
    if "mb_and" in methods or "mb_or" in methods:
        extra["lambda_max"] = baselines.lambda_max(_mb_data(x, cfg))
    return rows, extra


def _mb_data(x, cfg):
    return x - x.mean(axis=0) if cfg.center else x


def _mb_pass(cfg, model, rules, grid, replicate):
    x, _ = _draw(cfg, model, replicate)
    paths = baselines.mb_path(_mb_data(x, cfg), grid, rules=rules)
    rows = []
    for rule, path in paths.items():
        for lam, edges in zip(path.grid, path.edge_sets):
            rows.append(_row(f"mb_{rule}", lam, replicate, edges, model, lam))
    return rows


def _parallel_map(fn, items, threads):
    def guarded(r):
        try:
            return fn(r)
        except Exception as exc:  # re-raised with the replicate index attached
            raise ReplicateFailed(r, exc) from exc

    if threads <= 1:
        return [guarded(r) for r in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, items))


def _max_offdiag(m):
    rows, cols = upper_pairs(m.shape[0])
    return float(np.max(np.abs(m[rows, cols]))) if rows.size else 0.0


def run_monte_carlo(cfg, methods=None, threads=1, model=None, replicate_order=None):
    """Simulate ``cfg.replicates`` data sets and score every method on each.

    Replicate ``r`` draws its data from stream ``(cfg.seed, r)``; results are
    assembled in replicate-index order, so neither ``threads`` nor
    ``replicate_order`` (a permutation of the indices, for testing) affects
    the output.

    The CT/PT threshold grid is 50 linear points in ``(0, m]`` with ``m`` the
    largest off-diagonal magnitude over all replicates; the MB penalty grid is
    50 log-spaced points from the largest ``lambda_max`` down by a factor 100.
    """
    if methods is not None:
        cfg = replace(cfg, methods=tuple(m.lower() for m in methods))
    cfg = cfg.resolved().validate()
    methods = cfg.methods
    model = cfg.build_model() if model is None else model
    order = list(range(cfg.replicates)) if replicate_order is None else list(replicate_order)
    if sorted(order) != list(range(cfg.replicates)):
        raise UserInputError("replicate_order must be a permutation of the replicate indices")

    results = dict(zip(order, _parallel_map(lambda r: _first_pass(cfg, model, methods, r), order, threads)))
    rows = {r: list(results[r][0]) for r in range(cfg.replicates)}
    grids = {m: list(cfg.q_grid) for m in ("ko", "ko+") if m in methods}

    for method in ("ct", "pt"):
        if method in methods:
            top = max(_max_offdiag(results[r][1][method]) for r in range(cfg.replicates))
            grid = baselines.linear_grid(top if top > 0 else 1.0, GRID_SIZE)
            grids[method] = grid.tolist()
            for r in range(cfg.replicates):
                path = baselines.threshold_graph(results[r][1][method], grid)
                for t, edges in zip(grid, path.edge_sets):
                    rows[r].append(_row(method, t, r, edges, model, t))

    rules = tuple(rule for rule in ("and", "or") if f"mb_{rule}" in methods)
    if rules:
        top = max(results[r][1]["lambda_max"] for r in range(cfg.replicates))
        grid = baselines.log_grid(top, GRID_SIZE, MB_GRID_RATIO)
        for rule in rules:
            grids[f"mb_{rule}"] = grid.tolist()
        mb_rows = dict(zip(order, _parallel_map(lambda r: _mb_pass(cfg, model, rules, grid, r), order, threads)))
        for r in range(cfg.replicates):
            rows[r].extend(mb_rows[r])

    rank = {m: i for i, m in enumerate(METHODS)}
    flat = []
    for r in range(cfg.replicates):
        flat.extend(sorted(rows[r], key=lambda row: rank[row["method"]]))
    config = cfg.to_dict()
    config["model"] = {"kind": model.kind, "n_edges": len(model.edges),
                       "n_marginal_edges": len(model.marginal_edges),
                       "condition_numbers": model.condition_numbers, **model.params}
    return MetricsRecord(config=config, rows=flat, grids=grids)
