"""Benchmark harness: dimension sweeps over the instance classes, timing
tables, win percentages and the linear-system micro-benchmark."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .breakpoint import BreakpointOptions, breakpoint_solve
from .classes import CLASSES, PNORM_PAIRS, GeneratorSpec, canonical_class, generate
from .ipm import IpmOptions, closed_form_direction, dense_direction, ipm_solve
from .model import SeparableProblem
from .results import SolveReport, Status

SOLVERS = ("ipm", "breakpoint")
SEED_ENV = "RESALLOC_SEED"
CAP_FACTOR = 10.0
CAP_RULE = "per-cell: breakpoint limit = min(time limit, 10 x worst IPM time in the cell)"

RECORD_FIELDS = (
    "class", "n", "seed", "p", "r", "solver", "status", "wall_time_s",
    "time_limit_s", "iterations", "objective", "rho",
    "rd", "rl", "ru", "rg",
    "dual_evaluations", "subproblem_newton_steps",
    "coordinates_fixed_by_search", "interpolation_iterations", "message",
)
_INT_FIELDS = {"n", "seed", "iterations", "dual_evaluations", "subproblem_newton_steps",
               "coordinates_fixed_by_search", "interpolation_iterations"}
_FLOAT_FIELDS = {"p", "r", "wall_time_s", "time_limit_s", "objective", "rho",
                 "rd", "rl", "ru", "rg"}


def seed_base(default: int = 0) -> int:
    """Seed base, overridden by the RESALLOC_SEED environment variable."""
    raw = os.environ.get(SEED_ENV)
    return default if raw in (None, "") else int(raw)


def instance_spec(cls: str, n: int, seed: int, p=None, r=None) -> GeneratorSpec:
    """Spec for one benchmark instance. Weighted p-norm instances without an
    explicit (p, r) cycle through :data:`PNORM_PAIRS` by seed."""
    cls = canonical_class(cls)
    if cls == "weighted-p-norm" and (p is None or r is None):
        p, r = PNORM_PAIRS[seed % len(PNORM_PAIRS)]
    return GeneratorSpec(cls, n, seed, p, r)


@dataclasses.dataclass
class BenchPlan:
    classes: Sequence[str] = CLASSES
    dims: Sequence[int] = (100, 1000, 10000)
    instances: int = 20
    limit_base: float = 1.0
    solvers: Sequence[str] = SOLVERS
    seed: int = 0
    p: float | None = None
    r: float | None = None
    jobs: int = 1

    def __post_init__(self):
        self.classes = tuple(canonical_class(c) for c in self.classes)
        self.dims = tuple(sorted(int(n) for n in self.dims))
        if self.instances < 1:
            raise ValueError("instances must be at least 1")
        if not self.dims or self.dims[0] < 1:
            raise ValueError("dimensions must be positive")
        bad = [s for s in self.solvers if s not in SOLVERS]
        if bad:
            raise ValueError(f"unknown solver {bad[0]!r}")

    def time_limit(self, n: int) -> float:
        """limit_base * 10^(k-2) seconds for n = 10^k."""
        return self.limit_base * 10.0 ** (math.log10(n) - 2)

    def metadata(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["classes"], doc["dims"] = list(self.classes), list(self.dims)
        doc["solvers"] = list(self.solvers)
        doc["cap_rule"] = CAP_RULE
        return doc


@dataclasses.dataclass
class BenchRecord:
    cls: str
    n: int
    seed: int
    solver: str
    status: str
    wall_time_s: float
    time_limit_s: float
    iterations: int = 0
    objective: float = math.nan
    rho: float = math.nan
    rd: float = math.nan
    rl: float = math.nan
    ru: float = math.nan
    rg: float = math.nan
    dual_evaluations: int = 0
    subproblem_newton_steps: int = 0
    coordinates_fixed_by_search: int = 0
    interpolation_iterations: int = 0
    p: float = math.nan
    r: float = math.nan
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == Status.CONVERGED.value

    @classmethod
    def from_report(cls, spec: GeneratorSpec, rep: SolveReport, limit: float) -> BenchRecord:
        res, counts = rep.residual_norms, rep.counts
        sol = rep.solution
        return cls(
            cls=spec.cls, n=spec.n, seed=spec.seed, solver=rep.solver,
            status=rep.status.value, wall_time_s=rep.wall_time_s, time_limit_s=limit,
            iterations=rep.iterations,
            objective=math.nan if sol is None else sol.objective,
            rho=math.nan if sol is None else sol.rho,
            rd=res.get("rd", math.nan), rl=res.get("rl", math.nan),
            ru=res.get("ru", math.nan), rg=res.get("rg", math.nan),
            dual_evaluations=counts.get("dual_evaluations", 0),
            subproblem_newton_steps=counts.get("subproblem_newton_steps", 0),
            coordinates_fixed_by_search=counts.get("coordinates_fixed_by_search", 0),
            interpolation_iterations=counts.get("interpolation_iterations", 0),
            p=math.nan if spec.p is None else float(spec.p),
            r=math.nan if spec.r is None else float(spec.r),
            message=rep.message,
        )

    def row(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["class"] = doc.pop("cls")
        return {k: doc[k] for k in RECORD_FIELDS}


def run_solver(p: SeparableProblem, solver: str, time_limit: float | None = None,
               tol: float | None = None) -> SolveReport:
    """Run one solver; numerical exceptions become a report with status error."""
    t0 = time.perf_counter()
    try:
        if solver == "ipm":
            opts = IpmOptions(time_limit=time_limit, **({} if tol is None else {"tol": tol}))
            return ipm_solve(p, opts)
        if solver == "breakpoint":
            opts = BreakpointOptions(time_limit=time_limit,
                                     **({} if tol is None else {"tol": tol}))
            return breakpoint_solve(p, opts)
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        return SolveReport(solver, Status.ERROR, None, 0, time.perf_counter() - t0,
                           message=f"{type(exc).__name__}: {exc}")
    raise ValueError(f"unknown solver {solver!r}")


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_cell(plan: BenchPlan, cls: str, n: int, sink=None) -> list[BenchRecord]:
    """All instances of one (class, n) cell: IPM first, then breakpoint capped
    at ``CAP_FACTOR`` times the worst IPM time of the cell."""
    limit = plan.time_limit(n)
    specs = [instance_spec(cls, n, plan.seed + k, plan.p, plan.r)
             for k in range(plan.instances)]
    problems = _map(generate, specs, plan.jobs)
    records: list[BenchRecord] = []

    def emit(recs):
        records.extend(recs)
        if sink is not None:
            for rec in recs:
                sink(rec)

    bp_limit = limit
    if "ipm" in plan.solvers:
        reps = _map(lambda sp: run_solver(sp[1], "ipm", limit), list(zip(specs, problems)),
                    plan.jobs)
        emit([BenchRecord.from_report(s, r, limit) for s, r in zip(specs, reps)])
        bp_limit = min(limit, CAP_FACTOR * max(r.wall_time_s for r in reps))
    if "breakpoint" in plan.solvers:
        reps = _map(lambda sp: run_solver(sp[1], "breakpoint", bp_limit),
                    list(zip(specs, problems)), plan.jobs)
        emit([BenchRecord.from_report(s, r, bp_limit) for s, r in zip(specs, reps)])
    return records


def run_plan(plan: BenchPlan, sink=None, progress=None) -> list[BenchRecord]:
    records = []
    for cls in plan.classes:
        for n in plan.dims:
            if progress is not None:
                progress(cls, n)
            records.extend(run_cell(plan, cls, n, sink))
    return records


# ----------------------------------------------------------------------------
# Record files


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def write_records_csv(records: Iterable[BenchRecord], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS, lineterminator="\n")
    w.writeheader()
    for rec in records:
        w.writerow({k: _fmt(v) for k, v in rec.row().items()})


def read_records_csv(fh) -> list[BenchRecord]:
    out = []
    for row in csv.DictReader(fh):
        kw = {}
        for k, v in row.items():
            if k in _INT_FIELDS:
                kw[k] = int(v)
            elif k in _FLOAT_FIELDS:
                kw[k] = math.nan if v == "" else float(v)
            else:
                kw[k] = v
        kw["cls"] = kw.pop("class")
        out.append(BenchRecord(**kw))
    return out


def record_to_json(rec: BenchRecord) -> str:
    row = {k: (None if isinstance(v, float) and math.isnan(v) else v)
           for k, v in rec.row().items()}
    return json.dumps(row, sort_keys=True)


def record_from_json(line: str) -> BenchRecord:
    row = json.loads(line)
    kw = {k: (math.nan if v is None and k in _FLOAT_FIELDS else v) for k, v in row.items()}
    kw["cls"] = kw.pop("class")
    return BenchRecord(**kw)


# ----------------------------------------------------------------------------
# Summaries


def ipm_wins(ipm: BenchRecord, bp: BenchRecord | None) -> bool:
    """IPM wins when it converges strictly faster; ties are not wins."""
    if not ipm.converged:
        return False
    return bp is None or not bp.converged or ipm.wall_time_s < bp.wall_time_s


def _by_cell(records):
    cells: dict[tuple[str, int], dict[str, dict[int, BenchRecord]]] = {}
    for rec in records:
        cells.setdefault((rec.cls, rec.n), {}).setdefault(rec.solver, {})[rec.seed] = rec
    return cells


def timing_table(records: Sequence[BenchRecord]) -> list[dict]:
    """Mean and median wall time per (class, n, solver), with timeout counts."""
    rows = []
    for (cls, n), by_solver in sorted(_by_cell(records).items(),
                                      key=lambda kv: (CLASSES.index(kv[0][0]), kv[0][1])):
        for solver in SOLVERS:
            recs = list(by_solver.get(solver, {}).values())
            if not recs:
                continue
            times = [r.wall_time_s for r in recs]
            rows.append({
                "class": cls, "n": n, "solver": solver, "instances": len(recs),
                "mean_s": statistics.fmean(times), "median_s": statistics.median(times),
                "timeouts": sum(r.status == Status.TIMEOUT.value for r in recs),
                "failures": sum(not r.converged and r.status != Status.TIMEOUT.value
                                for r in recs),
            })
    return rows


def win_table(records: Sequence[BenchRecord]) -> dict[str, dict[int, float]]:
    """Percentage of instances per (class, n) where the IPM wins."""
    table: dict[str, dict[int, float]] = {}
    for (cls, n), by_solver in _by_cell(records).items():
        ipm = by_solver.get("ipm", {})
        bp = by_solver.get("breakpoint", {})
        if not ipm:
            continue
        wins = sum(ipm_wins(rec, bp.get(seed)) for seed, rec in ipm.items())
        table.setdefault(cls, {})[n] = 100.0 * wins / len(ipm)
    return {c: dict(sorted(table[c].items())) for c in CLASSES if c in table}


def format_timing(rows: Sequence[dict]) -> str:
    head = f"{'class':<18} {'n':>8} {'solver':<10} {'count':>5} {'mean s':>11} " \
           f"{'median s':>11} {'timeouts':>8} {'failed':>6}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['class']:<18} {r['n']:>8} {r['solver']:<10} {r['instances']:>5} "
                     f"{r['mean_s']:>11.5f} {r['median_s']:>11.5f} {r['timeouts']:>8} "
                     f"{r['failures']:>6}")
    return "\n".join(lines)


def format_wins(table: dict[str, dict[int, float]]) -> str:
    dims = sorted({n for row in table.values() for n in row})
    head = f"{'class':<18}" + "".join(f"{n:>10}" for n in dims)
    lines = [head, "-" * len(head)]
    for cls, row in table.items():
        lines.append(f"{cls:<18}" + "".join(
            f"{row[n]:>10.0f}" if n in row else f"{'':>10}" for n in dims))
    return "\n".join(lines)


def timing_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def wins_csv(table: dict[str, dict[int, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "n", "ipm_win_pct"])
    for cls, row in table.items():
        for n, pct in row.items():
            w.writerow([cls, n, repr(pct)])
    return buf.getvalue()


def write_outputs(outdir: Path, plan: BenchPlan, records: Sequence[BenchRecord]) -> dict:
    """Write records.csv, records.jsonl, timing/wins tables (text and CSV)
    and plan.json into ``outdir``; returns the paths written."""
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {name: outdir / name for name in (
        "records.csv", "records.jsonl", "timing.csv", "timing.txt",
        "wins.csv", "wins.txt", "plan.json")}
    with open(paths["records.csv"], "w", newline="") as fh:
        write_records_csv(records, fh)
    with open(paths["records.jsonl"], "w") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")
    rows = timing_table(records)
    wins = win_table(records)
    paths["timing.csv"].write_text(timing_csv(rows))
    paths["timing.txt"].write_text(format_timing(rows) + "\n")
    paths["wins.csv"].write_text(wins_csv(wins))
    paths["wins.txt"].write_text(format_wins(wins) + "\n")
    paths["plan.json"].write_text(json.dumps(plan.metadata(), indent=2) + "\n")
    return paths


# ----------------------------------------------------------------------------
# Linear system micro-benchmark


def random_interior_system(n: int, rng: np.random.Generator):
    """Data of a strictly interior Newton system: (h, xi, lam, s, mu, dg, r_d, r_l, r_u, r_g)."""
    h = rng.uniform(0.0, 10.0, n)
    xi, lam, s, mu = (rng.uniform(0.1, 10.0, n) for _ in range(4))
    dg = rng.uniform(0.1, 10.0, n)
    r_d, r_l, r_u = (rng.normal(size=n) for _ in range(3))
    return h, xi, lam, s, mu, dg, r_d, r_l, r_u, float(rng.normal())


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def linsys_bench(dims: Sequence[int], reps: int = 21, seed: int = 0,
                 dense_max: int = 1000) -> list[dict]:
    """Median time (ms) of the closed-form direction, and of the dense
    factorization where ``n <= dense_max``, per dimension."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in sorted(dims):
        args = random_interior_system(n, rng)
        closed_form_direction(*args)  # warm-up
        t_cf = _median_time(lambda: closed_form_direction(*args), reps)
        t_dense = math.nan
        if n <= dense_max:
            t_dense = _median_time(lambda: dense_direction(*args, refine=0),
                                   max(3, reps // 4))
        rows.append({"n": n, "closed_form_ms": 1e3 * t_cf, "dense_ms": 1e3 * t_dense})
    return rows


def scaling_ratio(rows: Sequence[dict], lo: int, hi: int) -> float:
    t = {r["n"]: r["closed_form_ms"] for r in rows}
    return t[hi] / t[lo]


def format_linsys(rows: Sequence[dict]) -> str:
    head = f"{'n':>9} {'closed-form ms':>15} {'dense LU ms':>12} {'speedup':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        dense = r["dense_ms"]
        sp = dense / r["closed_form_ms"] if not math.isnan(dense) else math.nan
        lines.append(f"{r['n']:>9} {r['closed_form_ms']:>15.4f} "
                     f"{'-' if math.isnan(dense) else f'{dense:.4f}':>12} "
                     f"{'-' if math.isnan(sp) else f'{sp:.1f}x':>9}")
    return "\n".join(lines)
