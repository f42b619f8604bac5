"""Command-line front end: ``fit``, ``predict``, ``bench`` and ``standardize``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import simbench
from .averaging import enumerate_candidates
from .ensemble import METHODS, fit_ensemble
from .fpca import FunctionalDataset
from .io import (
    DataError,
    atomic_write_text,
    curve_grid,
    load_bundle,
    read_table,
    response_vector,
    save_bundle,
    write_predictions,
)
from .plfam import DEFAULT_TAU_GRID, FitError, LayoutError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("cvma")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _tau_grid(text: str | None) -> np.ndarray:
    """``lo,hi,count`` in log10 units, or an explicit comma list prefixed by ``=``."""
    if text is None:
        return DEFAULT_TAU_GRID
    try:
        if text.startswith("="):
            grid = np.array([float(v) for v in text[1:].split(",")])
        else:
            lo, hi, num = text.split(",")
            grid = np.logspace(float(lo), float(hi), int(num))
    except ValueError:
        raise UsageError(f"bad --tau-grid {text!r}; use 'lo,hi,count' (log10) or '=v1,v2,...'") from None
    if grid.size == 0 or np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise UsageError("--tau-grid values must be positive and finite")
    return grid


def _floats(text: str, name: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad {name} list {text!r}") from None


def _ints(text: str, name: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad {name} list {text!r}") from None


def load_candidate_config(path) -> dict:
    """Parse the candidate JSON; ``score_pool`` entries are 1-based score indices."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: expected a JSON object")
    for key in ("mode", "scalar_pool", "score_pool"):
        if key not in cfg:
            raise DataError(f"{path}: missing key {key!r}")
    if cfg["mode"] not in ("nested", "non_nested"):
        raise DataError(f"{path}: mode must be 'nested' or 'non_nested'")
    if not isinstance(cfg["scalar_pool"], list) or not cfg["scalar_pool"]:
        raise DataError(f"{path}: scalar_pool must be a nonempty list of column names")
    pool = cfg["score_pool"]
    if not isinstance(pool, list) or not pool or not all(isinstance(k, int) and k >= 1 for k in pool):
        raise DataError(f"{path}: score_pool must be a nonempty list of 1-based integers")
    return cfg


def _load_training(args):
    scal = read_table(args.scalars)
    curves = read_table(args.curves).reorder(scal.ids)
    resp = read_table(args.response).reorder(scal.ids)
    grid = curve_grid(curves)
    return scal, FunctionalDataset(grid, curves.values), response_vector(resp)


def cmd_fit(args) -> int:
    cfg = load_candidate_config(args.candidates)
    scal, curves, y = _load_training(args)
    names = [str(c) for c in cfg["scalar_pool"]]
    missing = [c for c in names if c not in scal.columns]
    if missing:
        raise DataError(f"{args.scalars}: missing scalar columns {missing} named in {args.candidates}")
    X = scal.select(names)
    Q = args.Q if args.Q is not None else int(cfg.get("Q", 5))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    if not 2 <= Q <= y.size:
        raise UsageError(f"Q must satisfy 2 <= Q <= n={y.size}, got {Q}")
    specs = enumerate_candidates(cfg["mode"], range(len(names)), [k - 1 for k in cfg["score_pool"]])
    fit = fit_ensemble(X, curves, y, specs, Q=Q, seed=seed, tau_grid=_tau_grid(args.tau_grid), scalar_names=names)
    if not fit.weights.converged:
        raise NumericalFailure("averaging weights did not converge; no bundle written")
    out = save_bundle(fit, args.out, extra={"candidates": cfg, "Q": Q, "seed": seed})
    print(f"fitted {fit.n_candidates} candidates on {y.size} rows; bundle written to {out}")
    print((out / "weights.csv").read_text(), end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    fit = load_bundle(args.model)
    scal = read_table(args.scalars)
    curves_tab = read_table(args.curves).reorder(scal.ids)
    grid = curve_grid(curves_tab)
    if grid.size != fit.fpca.grid.size or not np.allclose(grid, fit.fpca.grid):
        raise DataError(f"{args.curves}: curves are not observed on the training grid")
    if fit.scalar_names is None:
        raise DataError(f"{args.model}: bundle has no scalar column names")
    X = scal.select(list(fit.scalar_names))
    pred = fit.predict(X, FunctionalDataset(grid, curves_tab.values), args.method)
    if args.out:
        write_predictions(args.out, scal.ids, pred)
    else:
        sys.stdout.write("id,prediction\n" + "".join(f"{i},{format(p, '.17g')}\n" for i, p in zip(scal.ids, pred)))
    if args.response:
        y = response_vector(read_table(args.response).reorder(scal.ids))
        print(f"MSPE {format(float(np.mean((pred - y) ** 2)), '.17g')}")
    return EXIT_OK


def cmd_bench(args) -> int:
    started = time.perf_counter()
    levels = _floats(args.r2, "--r2")
    sizes = _ints(args.n, "--n")
    cand = simbench.CandidateConfig(
        mode=args.mode,
        scalar_pool=tuple(range(args.scalar_pool)),
        score_pool=tuple(range(args.score_pool)),
        Q=args.Q if args.Q is not None else 5,
    )
    seed = args.seed if args.seed is not None else 0
    try:
        configs = [
            simbench.DesignConfig(design=args.design, n_train=n, R2=r2, seed=seed, replications=args.reps, n_test=args.n_test)
            for n in sizes
            for r2 in levels
        ]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(
        f"bench design={args.design} n={sizes} R2={levels} reps={args.reps} seed={seed} "
        f"mode={cand.mode} pools=({args.scalar_pool},{args.score_pool}) Q={cand.Q}"
    )
    reports = []
    for c in configs:
        rep = simbench.run_replications(c, cand, tau_grid=_tau_grid(args.tau_grid))
        if rep.n_failed:
            print(f"n={c.n_train} R2={c.R2}: {rep.n_failed} failed replications excluded")
        reports.append(rep)
    out = Path(args.out)
    atomic_write_text(out / "replications.csv", simbench.raw_csv(reports))
    atomic_write_text(out / "summary.csv", simbench.summary_csv(reports))
    print(simbench.render_table(reports))
    print(f"wrote {out / 'replications.csv'} and {out / 'summary.csv'} in {time.perf_counter() - started:.1f}s")
    return EXIT_OK


def cmd_standardize(args) -> int:
    tab = read_table(args.input)
    cols = [c.strip() for c in args.columns.split(",")] if args.columns else list(tab.columns)
    vals = tab.select(cols)
    if args.stats_in:
        try:
            stats = json.loads(Path(args.stats_in).read_text())
            mean = np.array([stats["mean"][c] for c in cols], dtype=float)
            sd = np.array([stats["sd"][c] for c in cols], dtype=float)
        except (OSError, KeyError, json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"{args.stats_in}: unusable statistics file ({exc})") from exc
    else:
        if vals.shape[0] < 2:
            raise DataError(f"{args.input}: need at least 2 rows to standardize")
        mean = vals.mean(axis=0)
        sd = vals.std(axis=0, ddof=1)
    zero = [c for c, s in zip(cols, sd) if not s > 0]
    if zero:
        raise DataError(f"{args.input}: zero standard deviation in columns {zero}")
    out = tab.values.copy()
    idx = [tab.columns.index(c) for c in cols]
    out[:, idx] = (vals - mean) / sd
    lines = [",".join(["id"] + tab.columns)]
    lines += [",".join([i] + [format(v, ".17g") for v in row]) for i, row in zip(tab.ids, out)]
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    if not args.stats_in:
        stats_path = args.stats_out or str(Path(args.out).with_suffix(".stats.json"))
        stats = {
            "ddof": 1,
            "mean": {c: float(m) for c, m in zip(cols, mean)},
            "sd": {c: float(s) for c, s in zip(cols, sd)},
        }
        atomic_write_text(stats_path, json.dumps(stats, indent=2, sort_keys=True) + "\n")
        print(f"wrote {args.out} and {stats_path}")
    else:
        print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="plfam", description="Cross-validation model averaging for partially linear functional additive models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit candidates and averaging weights, write a model bundle")
    f.add_argument("--scalars", required=True, help="CSV of scalar covariates (id first)")
    f.add_argument("--curves", required=True, help="CSV of curves; header after id holds the grid")
    f.add_argument("--response", required=True, help="CSV with id and one response column")
    f.add_argument("--candidates", required=True, help="candidate-set JSON")
    f.add_argument("--Q", type=int, default=None, help="number of folds (default: JSON value or 5)")
    f.add_argument("--seed", type=int, default=None, help="fold seed (default: JSON value or 0)")
    f.add_argument("--tau-grid", default=None, help="smoothing grid 'lo,hi,count' in log10 units")
    f.add_argument("--out", required=True, help="bundle directory")
    f.set_defaults(func=cmd_fit)

    q = sub.add_parser("predict", help="predict new rows from a model bundle")
    q.add_argument("--model", required=True, help="bundle directory written by fit")
    q.add_argument("--scalars", required=True)
    q.add_argument("--curves", required=True)
    q.add_argument("--response", default=None, help="optional responses; prints the MSPE")
    q.add_argument("--method", default="cvma", type=str.lower, choices=METHODS)
    q.add_argument("--out", default=None, help="predictions CSV (default: stdout)")
    q.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench", help="run the simulation benchmark")
    b.add_argument("--design", type=int, choices=(1, 2, 3), required=True)
    b.add_argument("--r2", default="0.3,0.6,0.9", help="comma list of R2 levels")
    b.add_argument("--n", default="100", help="comma list of training sizes")
    b.add_argument("--reps", type=int, default=50)
    b.add_argument("--n-test", type=int, default=500)
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--mode", choices=("nested", "non_nested"), default="nested")
    b.add_argument("--scalar-pool", type=int, default=5, help="use X1..Xp as the scalar pool")
    b.add_argument("--score-pool", type=int, default=3, help="use xi1..xiq as the score pool")
    b.add_argument("--Q", type=int, default=None)
    b.add_argument("--tau-grid", default=None)
    b.add_argument("--out", required=True, help="output directory for the CSVs")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("standardize", help="centre and scale columns with sample statistics")
    s.add_argument("--input", required=True)
    s.add_argument("--columns", default=None, help="comma list (default: all columns)")
    s.add_argument("--stats-in", default=None, help="apply stored training statistics instead")
    s.add_argument("--stats-out", default=None, help="where to write statistics")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_standardize)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"plfam: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, LayoutError) as exc:
        print(f"plfam: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, NumericalFailure, np.linalg.LinAlgError) as exc:
        print(f"plfam: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"plfam: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
