"""Command-line interface: ``resalloc {generate,solve,bench,linsys-bench}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .classes import ALIASES, CLASSES, GenerationError, GeneratorSpec, canonical_class, generate
from .model import load_instance, save_instance, validate_assumptions
from .results import Status

log = logging.getLogger("resalloc")

EXIT_OK = 0
EXIT_BAD_INPUT = 1
EXIT_TIMEOUT = 2
EXIT_NUMERICAL = 3


def _class_name(value: str) -> str:
    try:
        return canonical_class(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _dims(value: str) -> list[int]:
    try:
        dims = [int(float(v)) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad dimension list {value!r}") from None
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError("dimensions must be positive")
    return dims


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="resalloc",
        description="Separable convex resource allocation: generators, solvers, benchmarks.",
    )
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    class_help = "one of " + ", ".join(CLASSES) + " (aliases: " + ", ".join(ALIASES) + ")"

    g = sub.add_parser("generate", help="write a random instance as JSON")
    g.add_argument("--class", dest="cls", type=_class_name, required=True, help=class_help)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=None, help="default: $RESALLOC_SEED or 0")
    g.add_argument("--p", type=float)
    g.add_argument("--r", type=float)
    g.add_argument("-o", "--out", type=Path, required=True)

    s = sub.add_parser("solve", help="solve an instance file")
    s.add_argument("instance", type=Path)
    s.add_argument("--solver", choices=bench.SOLVERS, default="ipm")
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--time-limit", type=float, default=None)
    s.add_argument("-o", "--out", type=Path, help="report JSON path (default: stdout)")
    s.add_argument("--write-x", action="store_true", help="include x in the report")

    b = sub.add_parser("bench", help="run a benchmark sweep")
    b.add_argument("--class", dest="cls", type=_class_name, action="append",
                   help=class_help + "; repeatable; default: all")
    b.add_argument("--dims", type=_dims, default=[100, 1000, 10000])
    b.add_argument("--instances", type=int, default=20)
    b.add_argument("--time-limit", type=float, default=1.0,
                   help="limit base: n = 10^k gets base * 10^(k-2) seconds")
    b.add_argument("--solver", choices=bench.SOLVERS, action="append")
    b.add_argument("--seed", type=int, default=None, help="seed base; default $RESALLOC_SEED or 0")
    b.add_argument("--p", type=float)
    b.add_argument("--r", type=float)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", type=Path, required=True, help="output directory")

    lb = sub.add_parser("linsys-bench", help="time the closed-form Newton solve")
    lb.add_argument("--dims", type=_dims, default=[100, 1000, 10000, 100000, 1000000])
    lb.add_argument("--reps", type=int, default=21)
    lb.add_argument("--seed", type=int, default=None)
    lb.add_argument("--out", type=Path, help="CSV path for the timing table")
    return ap


def cmd_generate(args) -> int:
    seed = bench.seed_base() if args.seed is None else args.seed
    try:
        spec = GeneratorSpec(args.cls, args.n, seed, args.p, args.r)
        p = generate(spec)
    except (ValueError, GenerationError) as exc:
        print(f"resalloc generate: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    save_instance(p, args.out)
    rep = validate_assumptions(p)
    print(f"class={p.functions.kind} n={p.n} seed={seed} b={p.b:.10g}")
    print(f"l in [{p.l.min():.6g}, {p.l.max():.6g}]  u in [{p.u.min():.6g}, {p.u.max():.6g}]")
    print(f"assumptions: {'pass' if rep.passed else 'FAIL'}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _exit_code(status: Status) -> int:
    if status is Status.CONVERGED:
        return EXIT_OK
    if status is Status.TIMEOUT:
        return EXIT_TIMEOUT
    return EXIT_NUMERICAL


def cmd_solve(args) -> int:
    try:
        p = load_instance(args.instance)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"resalloc solve: cannot read {args.instance}: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    rep = bench.run_solver(p, args.solver, args.time_limit, args.tol)
    text = rep.to_json(include_x=args.write_x)
    if args.out:
        args.out.write_text(text + "\n")
        print(f"{rep.solver}: {rep.status.value} in {rep.iterations} iterations, "
              f"{rep.wall_time_s * 1e3:.2f} ms, objective {rep.objective:.12g}")
    else:
        print(text)
    return _exit_code(rep.status)


def cmd_bench(args) -> int:
    seed = bench.seed_base() if args.seed is None else args.seed
    try:
        plan = bench.BenchPlan(
            classes=args.cls or bench.CLASSES, dims=args.dims, instances=args.instances,
            limit_base=args.time_limit, solvers=args.solver or bench.SOLVERS, seed=seed,
            p=args.p, r=args.r, jobs=args.jobs,
        )
    except ValueError as exc:
        print(f"resalloc bench: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT

    def progress(cls, n):
        log.info("cell %s n=%d (limit %.3g s)", cls, n, plan.time_limit(n))

    records = bench.run_plan(plan, progress=progress)
    paths = bench.write_outputs(args.out, plan, records)
    print(bench.format_timing(bench.timing_table(records)))
    print()
    print("IPM win percentage")
    print(bench.format_wins(bench.win_table(records)))
    print()
    print(f"records: {paths['records.csv']}, {paths['records.jsonl']}")
    return EXIT_OK


def cmd_linsys(args) -> int:
    seed = bench.seed_base() if args.seed is None else args.seed
    rows = bench.linsys_bench(args.dims, reps=args.reps, seed=seed)
    print(bench.format_linsys(rows))
    dims = {r["n"] for r in rows}
    if {100000, 1000000} <= dims:
        ratio = bench.scaling_ratio(rows, 100000, 1000000)
        ok = 5.0 <= ratio <= 20.0
        print(f"time ratio n=1e6 / n=1e5: {ratio:.2f} ({'within' if ok else 'outside'} [5, 20])")
    if args.out:
        args.out.write_text(bench.timing_csv(rows))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    np.seterr(all="ignore")
    handler = {"generate": cmd_generate, "solve": cmd_solve, "bench": cmd_bench,
               "linsys-bench": cmd_linsys}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
