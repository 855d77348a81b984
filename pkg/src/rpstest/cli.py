"""Command-line interface.

Results go to stdout as JSON or CSV; diagnostics go to stderr.  Exit codes:
0 success, 2 invalid input or data, 3 missing table or checkpoints,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_DATA = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4

DEFAULT_SEED = 20240601


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _emit(doc) -> None:
    sys.stdout.write(json.dumps(doc, indent=1) + "\n")


def parse_samples(text: str) -> np.ndarray:
    """Newline-separated decimals; ``#`` starts a comment."""
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise CliError(f"line {lineno}: cannot parse {line!r} as a number", EXIT_DATA) from None
    if not values:
        raise CliError("no samples", EXIT_DATA)
    return np.array(values)


def _read_input(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except FileNotFoundError:
        raise CliError(f"input file {path} not found", EXIT_MISSING) from None


def quantile_file_cdf(path: str):
    """Monotone interpolation of a two-column ``x F(x)`` table."""
    from rpstest.splines import MonotoneCubic

    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            rows.append([float(v) for v in line.replace(",", " ").split()[:2]])
    xy = np.array(rows)
    if xy.ndim != 2 or xy.shape[0] < 2 or xy.shape[1] != 2:
        raise CliError(f"{path}: need at least two rows of 'x F(x)'", EXIT_DATA)
    if np.any(np.diff(xy[:, 0]) <= 0) or np.any(np.diff(xy[:, 1]) < 0):
        raise CliError(f"{path}: x must increase and F must not decrease", EXIT_DATA)
    if xy[0, 1] < 0 or xy[-1, 1] > 1:
        raise CliError(f"{path}: F values must lie in [0, 1]", EXIT_DATA)
    interp = MonotoneCubic(xy[:, 0], xy[:, 1])
    lo, hi = xy[0, 0], xy[-1, 0]

    def cdf(x):
        x = np.asarray(x, dtype=np.float64)
        # outside the tabulated support: mark invalid
        return np.where((x < lo) | (x > hi), np.nan, interp(x))

    return cdf


def _null_model(args):
    if args.dist == "uniform":
        return lambda x: x
    if args.dist == "exponential":
        if args.rate <= 0:
            raise CliError("--rate must be positive", EXIT_DATA)
        return lambda x: np.where(x < 0, np.nan, -np.expm1(-args.rate * x))
    if not args.quantile_file:
        raise CliError("--dist quantile-file needs --quantile-file PATH", EXIT_DATA)
    return quantile_file_cdf(args.quantile_file)


def cmd_test(args) -> int:
    from rpstest.kernels import pit_transform
    from rpstest.pvalue import compute_statistic, load_table, pvalue

    raw = parse_samples(_read_input(args.input))
    sample = pit_transform(raw, _null_model(args), policy=args.policy)
    value = compute_statistic(sample, args.statistic)
    table = None
    if sample.n > 1:
        table = load_table(args.table, statistic=args.statistic)
    res = pvalue(value, sample.n, table=table, statistic=args.statistic, two_sided=args.two_sided)
    _emit({
        "statistic": res.statistic,
        "pvalue": res.pvalue,
        "pvalue_error": res.pvalue_error,
        "n": res.n,
        "saturated": res.saturated,
    })
    return EXIT_OK


def parse_grid(spec: str) -> list[int]:
    from rpstest.tabulation import make_ngrid

    try:
        count, lo, hi = (int(v) for v in spec.split(":"))
    except ValueError:
        raise CliError(f"--grid expects COUNT:MIN:MAX, got {spec!r}", EXIT_DATA) from None
    return make_ngrid(count, lo, hi)


def cmd_tabulate(args) -> int:
    from rpstest.tabulation import MIN_TRIALS, checkpoint_name, default_p_grid, moments_name, tabulate

    if args.N < MIN_TRIALS:
        raise CliError(f"--N {args.N} is below the minimum of {MIN_TRIALS}", EXIT_DATA)
    if (args.n is None) == (args.grid is None):
        raise CliError("give exactly one of --n or --grid", EXIT_DATA)
    n_values = sorted(set(args.n)) if args.n is not None else parse_grid(args.grid)
    if min(n_values) < 2:
        raise CliError("simulate n >= 2; n = 1 is known in closed form", EXIT_DATA)
    p_min = max(args.p_min, 1.0 / args.N)
    if p_min > args.p_min:
        _log(f"--p-min raised to {p_min:g}: smaller quantiles are not estimable with N={args.N}")
    p_grid = default_p_grid(p_min=p_min)
    try:
        tabulate(args.statistic, n_values, args.N, args.seed, args.out, p_grid=p_grid,
                 chunks=args.chunks, workers=args.workers, force=args.force, log=_log)
    except FileExistsError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    out = Path(args.out)
    _emit({
        "statistic": args.statistic,
        "N": args.N,
        "seed": args.seed,
        "n": n_values,
        "checkpoints": [str(out / checkpoint_name(args.statistic, n)) for n in n_values],
        "moments": str(out / moments_name(args.statistic)),
    })
    return EXIT_OK


def cmd_fit(args) -> int:
    from rpstest.table_fit import FitError, QuantileSurface, solve_surface
    from rpstest.tabulation import load_moments, moments_name

    path = Path(args.checkpoints) / moments_name(args.statistic)
    if not path.exists():
        raise CliError(f"{path} not found; run 'rpstest tabulate' first", EXIT_MISSING)
    moments, doc = load_moments(path)
    if len(moments) < 4:
        raise CliError(
            f"{path} covers {len(moments)} sample sizes; need at least 4 besides n=1",
            EXIT_MISSING,
        )
    surface = QuantileSurface.from_moments(moments, seeds=[doc["seed"]])
    try:
        table = solve_surface(surface)
    except FitError as exc:
        _log(json.dumps(exc.diagnostics, indent=1, default=str))
        raise CliError(f"fit failed: {exc}", EXIT_NUMERIC) from None
    table.meta["p_min"] = float(surface.p_grid[0])
    table.save(args.out)
    _emit({"table": str(args.out), **table.meta["fit"]})
    return EXIT_OK


def cmd_error(args) -> int:
    from rpstest.pvalue import relative_error, required_samples

    if args.curve:
        if args.N is None:
            raise CliError("--curve needs --N", EXIT_DATA)
        lo = max(args.p_min, 1.0 / args.N)
        grid = np.geomspace(lo, 0.5, args.points)
        sys.stdout.write("p,relative_error\n")
        for p in grid:
            sys.stdout.write(f"{float(p)!r},{relative_error(float(p), args.N, args.credibility)!r}\n")
        return EXIT_OK
    if args.p is None or (args.N is None) == (args.delta is None):
        raise CliError("give --p with exactly one of --N or --delta", EXIT_DATA)
    if args.N is not None:
        value = relative_error(args.p, args.N, args.credibility)
        _emit({"p": args.p, "N": args.N, "credibility": args.credibility, "relative_error": value})
    else:
        value = required_samples(args.p, args.delta, args.credibility)
        _emit({"p": args.p, "delta": args.delta, "credibility": args.credibility,
               "required_samples": value})
    return EXIT_OK


def _suite(args):
    from rpstest.benchmark import TestSuite
    from rpstest.pvalue import load_table

    table = load_table(args.table, "rps_star") if "rps" in args.tests else None
    rss_table = load_table(None, "rss") if "rss" in args.tests else None
    return TestSuite(args.tests, table=table, rss_table=rss_table,
                     reference_trials=args.reference_trials)


def _write_outputs(args, csv_text: str, manifest_text: str, name: str) -> None:
    if args.out is None:
        sys.stdout.write(csv_text)
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.csv").write_text(csv_text)
    (out / f"{name}_manifest.json").write_text(manifest_text)
    _emit({"csv": str(out / f"{name}.csv"), "manifest": str(out / f"{name}_manifest.json")})


def cmd_benchmark(args) -> int:
    from rpstest.benchmark import manifest, median_pvalue_scan, summaries_csv

    suite = _suite(args)
    if "rps" in args.tests and max(args.n) > suite.table.n_max:
        raise CliError(
            f"table covers n <= {suite.table.n_max}; extend it with 'rpstest tabulate'",
            EXIT_MISSING,
        )
    rows = median_pvalue_scan(suite, args.n, args.s, args.w, trials=args.trials,
                              seed=args.seed, workers=args.workers)
    csv_text = summaries_csv(rows, ["n", "s", "w"])
    man = manifest("benchmark", suite, args.seed, args.trials,
                   grid={"n": args.n, "s": args.s, "w": args.w})
    _write_outputs(args, csv_text, man, "benchmark")
    return EXIT_OK


def cmd_bumphunt(args) -> int:
    from rpstest.benchmark import bumphunt_scan, crossings, manifest, summaries_csv

    suite = _suite(args)
    rows = bumphunt_scan(suite, args.ns, nb_mean=args.nb, trials=args.trials,
                         seed=args.seed, workers=args.workers)
    cross = crossings(rows, args.level)
    cross_doc = {k: (None if math.isinf(v) else v) for k, v in cross.items()}
    for name, v in cross.items():
        _log(f"{name}: crossing {'censored' if math.isinf(v) else f'{v:.2f}'}")
    csv_text = summaries_csv(rows, ["nb_mean", "ns_mean"])
    man = manifest("bumphunt", suite, args.seed, args.trials, nb_mean=args.nb,
                   ns_mean=list(args.ns), level=args.level, crossings=cross_doc)
    _write_outputs(args, csv_text, man, "bumphunt")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpstest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="test a sample against a null distribution")
    p.add_argument("input", nargs="?", default="-", help="file of newline-separated values (default stdin)")
    p.add_argument("--dist", choices=["uniform", "exponential", "quantile-file"], default="uniform")
    p.add_argument("--rate", type=float, default=1.0, help="rate of the exponential null")
    p.add_argument("--quantile-file", help="two-column 'x F(x)' table for --dist quantile-file")
    p.add_argument("--statistic", choices=["rps_star", "rss"], default="rps_star")
    p.add_argument("--table", help="fitted table (default: bundled, or $RPSTEST_TABLE)")
    p.add_argument("--policy", choices=["strict", "jitter"], default="strict")
    p.add_argument("--two-sided", action="store_true")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("tabulate", help="simulate null distributions and quantile moments")
    p.add_argument("--statistic", default="rps_star")
    p.add_argument("--n", type=int, nargs="+", help="sample sizes")
    p.add_argument("--grid", help="COUNT:MIN:MAX log-spaced sample sizes")
    p.add_argument("--N", type=int, default=10**6, help="trials per sample size")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--chunks", type=int, help="chunk count (default: one per 50000 trials)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--p-min", type=float, default=1e-4, help="smallest tabulated quantile level")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--force", action="store_true", help="overwrite mismatched checkpoints")
    p.set_defaults(func=cmd_tabulate)

    p = sub.add_parser("fit", help="fit a p-value table from tabulated moments")
    p.add_argument("checkpoints", help="directory written by 'rpstest tabulate'")
    p.add_argument("--statistic", choices=["rps_star", "rss"], default="rps_star")
    p.add_argument("--out", required=True, help="table path (.json, or .npz for binary)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("error", help="tabulation error model")
    p.add_argument("--p", type=float)
    p.add_argument("--N", type=float)
    p.add_argument("--delta", type=float, help="target relative error")
    p.add_argument("--credibility", type=float, default=0.98)
    p.add_argument("--curve", action="store_true", help="CSV of relative error over p at --N")
    p.add_argument("--p-min", type=float, default=1e-7)
    p.add_argument("--points", type=int, default=50)
    p.set_defaults(func=cmd_error)

    def common(p, trials):
        p.add_argument("--tests", nargs="+", default=["rps", "ks", "ad", "cvm", "moran"])
        p.add_argument("--trials", type=int, default=trials)
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--reference-trials", type=int, default=20_000)
        p.add_argument("--table")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", help="output directory (default: CSV on stdout)")

    p = sub.add_parser("benchmark", help="median p-values over a localized-signal grid")
    p.add_argument("--n", type=int, nargs="+", default=[10, 30, 100, 300])
    p.add_argument("--s", type=float, nargs="+",
                   default=[0.0] + [round(0.05 * i, 2) for i in range(1, 11)])
    p.add_argument("--w", type=float, nargs="+", default=[0.01, 0.05, 0.1, 0.25, 0.5])
    common(p, 400)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("bumphunt", help="signal-strength scan over exponential background")
    p.add_argument("--nb", type=float, default=100.0, help="expected background count")
    p.add_argument("--ns", type=float, nargs="+", default=[float(v) for v in range(0, 42, 2)])
    p.add_argument("--level", type=float, default=2.0, help="significance in sigma")
    common(p, 1000)
    p.set_defaults(func=cmd_bumphunt)
    return parser


def main(argv=None) -> int:
    from rpstest.kernels import DegenerateSampleError
    from rpstest.pvalue import TableNotFoundError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        _log(f"error: {exc}")
        return exc.code
    except (TableNotFoundError, FileNotFoundError) as exc:
        _log(f"error: {exc}")
        return EXIT_MISSING
    except (DegenerateSampleError, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
