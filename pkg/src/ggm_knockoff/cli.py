"""Command-line interface: ``ggm-ko {estimate,simulate,benchmark,groups}``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
Every command writes into a fresh output directory, which appears only once
all of its files are complete.
"""

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import re
import shutil
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, GGMError, NumericalError, ReplicateFailed, UserInputError
from .estimator import SCHEMES, estimate_graph
from .groups import GROUP_COLUMN, analyze_groups, read_abundance_csv
from .rng import RngStream
from .simulation import METHODS, SimulationConfig, run_monte_carlo

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("ggm_knockoff")

THREADS_ENV = "GGM_KO_THREADS"
SIMULATE_METHODS = ("ko", "ko+")


# --------------------------------------------------------------------------
# helpers

def _num(x):
    x = float(x)
    return ("inf" if x > 0 else "-inf") if math.isinf(x) else x


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(command, config, seed, inputs=()):
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def _publish(out_dir, files):
    """Write ``files`` (name -> text) into ``out_dir`` all at once.

    The directory must not exist or must be empty.
    """
    out = Path(out_dir)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise UserInputError(f"output directory {out} already exists and is not empty")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for name, text in files.items():
            with open(tmp / name, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        if out.exists():
            out.rmdir()
        os.rename(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def _threads(value):
    if value is None:
        value = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(value)
    except ValueError:
        raise ConfigError(f"thread count must be an integer, got {value!r}") from None
    if value < 1:
        raise ConfigError(f"thread count must be positive, got {value}")
    return value


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _name_list(text):
    return [v.strip().lower() for v in text.split(",") if v.strip()]


def read_data_csv(path):
    """Numeric CSV with a header of variable names; returns ``(values, names)``."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise UserInputError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise UserInputError(f"{path}: empty file")
        names = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(names):
                raise UserInputError(f"{path}:{lineno}: expected {len(names)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise UserInputError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise UserInputError(f"{path}: no data rows")
    values = np.array(rows)
    if not np.all(np.isfinite(values)):
        raise UserInputError(f"{path}: non-finite values")
    return values, names


# --------------------------------------------------------------------------
# commands

def cmd_estimate(args):
    x, names = read_data_csv(args.input)
    q = 0.2 if args.q is None else args.q
    sel = estimate_graph(x, q, RngStream(args.seed), scheme=args.scheme, center=args.center)
    lines = ["i\tj\tname_i\tname_j\tW\tR"]
    for i, j in sel.sorted_edges():
        lines.append(f"{i}\t{j}\t{names[i]}\t{names[j]}\t{sel.edge_statistics[(i, j)]!r}"
                     f"\t{sel.retained_values[(i, j)]!r}")
    config = {"input": str(args.input), "q": q, "scheme": args.scheme, "center": args.center}
    result = {
        "threshold": _num(sel.threshold),
        "q": q,
        "scheme": sel.scheme,
        "n": int(x.shape[0]),
        "p": int(x.shape[1]),
        "n_selected": sel.n_selected,
    }
    _publish(args.out_dir, {
        "edges.tsv": "\n".join(lines) + "\n",
        "result.json": _dumps(result),
        "manifest.json": _dumps(_manifest("estimate", config, args.seed, [args.input])),
    })
    log.info("selected %d edges, threshold %s", sel.n_selected, _num(sel.threshold))
    return 0


_SIM_FLAGS = ("graph", "p", "n", "bandwidth", "block_size", "strength", "kappa",
              "replicates", "q_grid", "seed", "center", "methods")


def _simulation_config(args, default_methods):
    data = _load_config(args.config)
    data.setdefault("methods", list(default_methods))
    for key in _SIM_FLAGS:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            data[key] = value
    try:
        return SimulationConfig.from_mapping(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _run_simulation(args, command, default_methods):
    cfg = _simulation_config(args, default_methods)
    record = run_monte_carlo(cfg, threads=_threads(args.threads))
    inputs = [args.config] if args.config else []
    _publish(args.out_dir, {
        "results.csv": record.to_csv(),
        "summary.json": record.to_json(),
        "manifest.json": _dumps(_manifest(command, cfg.to_dict(), cfg.seed, inputs)),
    })
    return 0


def cmd_simulate(args):
    return _run_simulation(args, "simulate", SIMULATE_METHODS)


def cmd_benchmark(args):
    return _run_simulation(args, "benchmark", METHODS)


def _slug(label):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label) or "group"


def _square_csv(features, values):
    lines = ["," + ",".join(features)]
    for name, row in zip(features, values):
        lines.append(name + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def cmd_groups(args):
    group_column = args.group_column or GROUP_COLUMN
    table = read_abundance_csv(args.input, group_column=group_column)
    if table.groups is None:
        raise UserInputError(f"{args.input}: no group column {group_column!r}")
    base_q = 0.2 if args.q is None else args.q
    result = analyze_groups(
        table, RngStream(args.seed), base_q=base_q, subsamples=args.subsamples,
        pseudocount=args.pseudocount, min_prevalence=args.min_prevalence,
        scheme=args.scheme, center=args.center,
    )
    files = {}
    groups = {}
    for label, mat in result.strengths.items():
        name = f"strengths_{_slug(label)}.csv"
        files[name] = _square_csv(result.features, mat.values)
        groups[label] = {
            "file": name,
            "scheme": result.schemes[label],
            "targets": mat.targets,
            "thresholds": [_num(t) for t in mat.thresholds],
            "n_selected": mat.n_selected,
            "all_zero": mat.empty,
        }
    comp = None
    if result.comparison is not None:
        c = result.comparison
        comp = {"statistic": c.statistic, "z": c.z, "p_value": c.p_value,
                "n_pairs": c.n_pairs, "method": c.method, "summaries": c.summaries}
    summary = {
        "features": result.features,
        "groups": groups,
        "subsample_size": result.subsample_size,
        "comparison": comp,
        "comparison_error": result.comparison_error,
    }
    config = {"input": str(args.input), "group_column": group_column, "q": base_q,
              "subsamples": args.subsamples, "pseudocount": args.pseudocount,
              "min_prevalence": args.min_prevalence, "scheme": args.scheme, "center": args.center}
    files["comparison.json"] = _dumps(summary)
    files["manifest.json"] = _dumps(_manifest("groups", config, args.seed, [args.input]))
    _publish(args.out_dir, files)
    return 0


# --------------------------------------------------------------------------
# parser

def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _unit(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="ggm-ko", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--out-dir", required=True, help="fresh directory for the outputs")
        p.add_argument("--seed", type=_seed, default=seed_default)
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: ${THREADS_ENV} or 1)")

    est = sub.add_parser("estimate", help="select edges from a data CSV")
    est.add_argument("--input", required=True)
    est.add_argument("--q", type=_unit, default=None, help="target FDR level (default 0.2)")
    est.add_argument("--scheme", choices=SCHEMES, default="ko")
    est.add_argument("--center", action="store_true", help="subtract column means first")
    common(est)
    est.set_defaults(func=cmd_estimate)

    for name, func, helptext in (
        ("simulate", cmd_simulate, "Monte Carlo FDR/power study of KO and KO+"),
        ("benchmark", cmd_benchmark, "KO/KO+ against CT, PT and MB on shared replicates"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None, help="TOML file with simulation settings")
        p.add_argument("--graph", choices=("band", "block"))
        p.add_argument("--p", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--bandwidth", type=int)
        p.add_argument("--block-size", type=int)
        p.add_argument("--strength", type=float)
        p.add_argument("--kappa", type=float)
        p.add_argument("--replicates", type=int)
        p.add_argument("--q-grid", type=_float_list)
        p.add_argument("--methods", type=_name_list,
                       help=f"comma-separated subset of {','.join(METHODS)}")
        p.add_argument("--center", action="store_true", default=None)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seed", type=_seed, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: ${THREADS_ENV} or 1)")
        p.set_defaults(func=func)

    grp = sub.add_parser("groups", help="compare the graphs of two groups in an abundance CSV")
    grp.add_argument("--input", required=True)
    grp.add_argument("--group-column", default=None, help=f"default {GROUP_COLUMN}")
    grp.add_argument("--q", type=_unit, default=None, help="base target FDR level (default 0.2)")
    grp.add_argument("--subsamples", type=int, default=10)
    grp.add_argument("--pseudocount", type=float, default=0.5)
    grp.add_argument("--min-prevalence", type=_unit, default=0.05)
    grp.add_argument("--scheme", choices=SCHEMES, default="ko")
    grp.add_argument("--center", action="store_true")
    common(grp)
    grp.set_defaults(func=cmd_groups)
    return parser


def _exit_code(exc):
    if isinstance(exc, ReplicateFailed):
        return _exit_code(exc.cause)
    if isinstance(exc, NumericalError):
        return 3
    return 2


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except GGMError as exc:
        print(f"ggm-ko {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
