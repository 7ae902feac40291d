"""Command-line front end: ``poolplan {analyze,optimize,simulate,tables,plan}``.

Exit codes: 0 on success (warnings allowed), 1 for usage errors, 2 for
unreadable or malformed input data.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import analytic, cohort, simulator
from .model import MAX_POOL
from .strategies import STRATEGIES

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _cell(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.4f}"
    return str(value)


def render(rows: Sequence[dict], columns: Sequence[str], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{c: r.get(c) for c in columns} for r in rows], indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in (r.get(c, "") for c in columns)])
        return buf.getvalue()
    cells = [[_cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def _prob(text: str) -> float:
    try:
        p = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError(f"prevalence must be in [0, 1], got {p}")
    return p


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return v


def _p_values(args) -> List[float]:
    ps = list(args.prevalence or [])
    if args.p_range:
        try:
            start, stop, step = (float(x) for x in args.p_range.split(":"))
        except ValueError:
            raise UsageError("--p-range expects START:STOP:STEP") from None
        if step <= 0 or stop < start:
            raise UsageError("--p-range needs STEP > 0 and STOP >= START")
        k = int(math.floor((stop - start) / step + 1e-9))
        ps += [round(start + i * step, 10) for i in range(k + 1)]
    if not ps:
        raise UsageError("give at least one -p/--prevalence or --p-range")
    for p in ps:
        if not 0.0 <= p <= 1.0:
            raise UsageError(f"prevalence must be in [0, 1], got {p}")
    return ps


def _check_pool(n: int, args) -> None:
    if n > args.max_pool:
        raise UsageError(f"pool size {n} exceeds --max-pool {args.max_pool}")


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands ---------------------------------------------------------------


def cmd_analyze(args) -> int:
    p, n, m, kind = args.prevalence[0], args.pool_size, args.population, args.strategy
    _check_pool(n, args)
    row = {"strategy": kind, "p": p, "n": n, "m": m}
    if kind == "individual":
        tpp = 1.0
    elif kind == "dorfman":
        tpp = analytic.dorfman_expected_tests(p, n, m) / m
    elif kind == "double":
        tpp = analytic.double_pooling_tpp(p, n)
    elif kind == "grid2d":
        if n < 2:
            raise UsageError("grid2d needs -n >= 2")
        if n * n > m:
            _warn(f"{n}x{n} matrix needs {n * n} samples but population is {m}")
        bound = analytic.grid2d_validity_bound(n)
        if p > 1.0 / n:
            _warn(f"p={p} above 1/n={1.0 / n:.4f}: more expected positives than matrix rows")
        if p >= bound:
            _warn(f"p={p} exceeds the worst-case validity bound {bound:.4f} for n={n}; "
                  "individual testing is cheaper")
        tpp = analytic.grid2d_worstcase_tpp(p, n)
    else:
        raise UsageError("the binary tree has no closed form; use `poolplan simulate --strategy tree`")
    row.update(expected_tests=tpp * m, tpp=tpp)
    _emit(render([row], ["strategy", "p", "n", "m", "expected_tests", "tpp"], args.format), args.out)
    return 0


def cmd_optimize(args) -> int:
    rows = []
    for p in _p_values(args):
        if args.strategy == "dorfman":
            res = analytic.dorfman_optimal_size(p, args.max_pool)
        elif args.strategy == "grid2d":
            res = analytic.grid2d_optimal_size(p, args.population, args.max_pool)
        elif args.strategy == "double":
            res = analytic.double_pooling_optimal_size(p, args.max_pool)
        elif args.strategy == "tree":
            res = simulator.tree_optimal_size(p, args.max_pool)
        else:
            raise UsageError("individual testing has nothing to optimize")
        rows.append({"strategy": args.strategy, "p": p, "best_n": res.best_size,
                     "best_tpp": res.best_tpp,
                     "advice": "pool" if res.pooling else "do not pool"})
    _emit(render(rows, ["strategy", "p", "best_n", "best_tpp", "advice"], args.format), args.out)
    return 0


def cmd_simulate(args) -> int:
    n = args.pool_size
    _check_pool(n, args)
    try:
        cfg = simulator.SimulationConfig(args.strategy, args.prevalence[0], args.population, args.trials,
                                         args.seed, pool_size=n, optimize=args.optimize,
                                         engine=args.engine)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    s = simulator.simulate(cfg, workers=args.workers)
    row = {"strategy": s.strategy, "p": s.p, "n": s.n, "m": s.m, "trials": s.trials,
           "mean_tests": s.mean_tests, "stderr": s.stderr_tests, "mean_tpp": s.mean_tpp,
           "mean_rounds": s.mean_rounds}
    _emit(render([row], simulator.CSV_COLUMNS, args.format), args.out)
    return 0


def cmd_tables(args) -> int:
    if args.which == "table1":
        rep = simulator.replicate_table1(args.trials, args.seed, args.workers)
    elif args.which == "table2":
        rep = simulator.replicate_table2(args.trials, args.seed, args.workers)
    else:
        rep = simulator.replicate_double_table()
    rows = rep.rows()
    columns = ["row", "p", "value", "published", "delta"]
    if rep.best_sizes is not None:
        columns.insert(2, "best_n")
    if args.which == "double":
        for r in rows:
            r["truncated"] = simulator.truncate2(r["value"])
        columns.append("truncated")
    _emit(render(rows, columns, args.format), args.out)
    return 0


def cmd_plan(args) -> int:
    try:
        if args.patients:
            group = cohort.load_patients(args.patients)
        else:
            cdf = cohort.load_cdf(args.cdf) if args.cdf else cohort.synthetic_cdf()
            if not args.size:
                raise UsageError("--size is required when sampling from a CDF")
            group = cohort.sample_cohort(cdf, args.size, args.seed)
    except (OSError, cohort.CohortFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if len(group) == 0:
        print("error: cohort is empty", file=sys.stderr)
        return EXIT_DATA
    family = "dorfman" if args.strategy is None else args.strategy
    plan = cohort.partition(group, family, estimator=args.estimator,
                            max_spread=args.max_spread, max_pool=args.max_pool)
    if args.plan_out:
        plan_format = args.plan_format or ("json" if args.plan_out.endswith(".json") else "csv")
        doc = cohort.plan_to_json(plan) if plan_format == "json" else cohort.plan_to_csv(plan)
        Path(args.plan_out).write_text(doc)
    summary = plan.summary()
    _emit(render([summary], list(summary), args.format), args.out)
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poolplan", description="Pooled-testing analysis, simulation and planning.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, strategies=STRATEGIES, default="dorfman"):
        sp.add_argument("--strategy", choices=strategies, default=default)
        sp.add_argument("--max-pool", type=_positive_int, default=MAX_POOL)
        sp.add_argument("--format", choices=("table", "csv", "json"), default="table")
        sp.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")

    sp = sub.add_parser("analyze", help="closed-form expected tests")
    common(sp)
    sp.add_argument("-p", "--prevalence", type=_prob, nargs=1, required=True)
    sp.add_argument("-n", "--pool-size", type=_positive_int, required=True)
    sp.add_argument("-m", "--population", type=_positive_int, default=32)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("optimize", help="best pool size per prevalence")
    common(sp)
    sp.add_argument("-p", "--prevalence", type=_prob, action="extend", nargs="+")
    sp.add_argument("--p-range", metavar="START:STOP:STEP")
    sp.add_argument("-m", "--population", type=_positive_int, default=400)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("simulate", help="Monte Carlo estimate for one configuration")
    common(sp, default="tree")
    sp.add_argument("-p", "--prevalence", type=_prob, nargs=1, required=True)
    sp.add_argument("-n", "--pool-size", type=_positive_int, default=1)
    sp.add_argument("-m", "--population", type=_positive_int, default=32)
    sp.add_argument("--trials", type=_positive_int, default=100_000)
    sp.add_argument("--seed", type=_seed, default=0)
    sp.add_argument("--optimize", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--workers", type=_positive_int, default=1)
    sp.add_argument("--engine", choices=("vectorized", "exact"), default="vectorized")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("tables", help="replicate the published comparison tables")
    sp.add_argument("which", choices=("table1", "table2", "double"))
    sp.add_argument("--trials", type=_positive_int, default=100_000)
    sp.add_argument("--seed", type=_seed, default=0)
    sp.add_argument("--workers", type=_positive_int, default=1)
    sp.add_argument("--format", choices=("table", "csv", "json"), default="table")
    sp.add_argument("--out", metavar="PATH")
    sp.set_defaults(func=cmd_tables)

    sp = sub.add_parser("plan", help="pooling plan for a risk-scored cohort")
    common(sp, strategies=cohort.FAMILIES, default=None)
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--patients", metavar="FILE", help="patient_id,risk file")
    src.add_argument("--cdf", metavar="FILE", help="risk,cum_fraction file to sample from")
    sp.add_argument("--size", type=_positive_int, help="cohort size when sampling from a CDF")
    sp.add_argument("--seed", type=_seed, default=0)
    sp.add_argument("--estimator", choices=("mean", "max"), default="mean")
    sp.add_argument("--max-spread", type=float, default=0.05)
    sp.add_argument("--plan-out", metavar="PATH", help="write the plan document here")
    sp.add_argument("--plan-format", choices=("csv", "json"))
    sp.set_defaults(func=cmd_plan)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"poolplan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
