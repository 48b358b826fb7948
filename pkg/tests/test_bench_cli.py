import io
import json
import math

import numpy as np
import pytest

from resalloc import bench, cli
from resalloc.model import load_instance, validate_assumptions


@pytest.fixture
def small_plan():
    return bench.BenchPlan(classes=("quartic", "log-exponential"), dims=(200, 50),
                           instances=3, seed=4)


def test_plan_normalizes(small_plan):
    assert small_plan.dims == (50, 200)
    assert small_plan.classes == ("quartic-simplex", "log-exponential")
    assert small_plan.time_limit(100) == pytest.approx(1.0)
    assert small_plan.time_limit(10000) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        bench.BenchPlan(instances=0)
    with pytest.raises(ValueError):
        bench.BenchPlan(solvers=("simplex",))


def test_seed_env(monkeypatch):
    monkeypatch.setenv("RESALLOC_SEED", "77")
    assert bench.seed_base() == 77
    monkeypatch.delenv("RESALLOC_SEED")
    assert bench.seed_base(3) == 3


def test_pnorm_pairs_cycle():
    specs = [bench.instance_spec("weighted-p-norm", 10, s) for s in range(8)]
    pairs = [(s.p, s.r) for s in specs]
    assert len(set(pairs)) == 4 and pairs[:4] == pairs[4:]
    assert all(p != r for p, r in pairs)


def test_run_plan_and_tables(small_plan):
    recs = bench.run_plan(small_plan)
    assert len(recs) == 2 * 2 * 3 * 2
    # IPM runs first within each cell
    assert [r.solver for r in recs[:6]] == ["ipm"] * 3 + ["breakpoint"] * 3
    for r in recs:
        assert r.converged
        assert r.wall_time_s <= r.time_limit_s + 0.1
    cell_ipm = [r for r in recs[:3]]
    cap = bench.CAP_FACTOR * max(r.wall_time_s for r in cell_ipm)
    assert recs[3].time_limit_s == pytest.approx(min(cap, small_plan.time_limit(50)))
    wins = bench.win_table(recs)
    assert set(wins) == {"quartic-simplex", "log-exponential"}
    for row in wins.values():
        assert set(row) == {50, 200}
        assert all(0 <= v <= 100 for v in row.values())
    rows = bench.timing_table(recs)
    assert len(rows) == 8
    assert "median s" in bench.format_timing(rows)
    assert "log-exponential" in bench.format_wins(wins)


def test_records_reproducible(small_plan):
    a = bench.run_cell(small_plan, "quartic-simplex", 50)
    b = bench.run_cell(small_plan, "quartic-simplex", 50)
    for x, y in zip(a, b):
        assert (x.status, x.objective, x.iterations) == (y.status, y.objective, y.iterations)


def test_csv_and_jsonl_roundtrip(small_plan):
    recs = bench.run_cell(small_plan, "log-exponential", 50)
    recs.append(bench.BenchRecord("quartic-simplex", 10, 1, "breakpoint", "timeout",
                                  0.5, 0.4, message='partial, "quoted"'))
    buf = io.StringIO()
    bench.write_records_csv(recs, buf)
    back = bench.read_records_csv(io.StringIO(buf.getvalue()))
    assert len(back) == len(recs)
    for x, y in zip(recs, back):
        for k, v in x.row().items():
            w = y.row()[k]
            if isinstance(v, float) and math.isnan(v):
                assert math.isnan(w)
            else:
                assert v == w, k
    for x in recs:
        y = bench.record_from_json(bench.record_to_json(x))
        assert bench.record_to_json(y) == bench.record_to_json(x)


def test_win_rule():
    ipm = bench.BenchRecord("quartic-simplex", 10, 0, "ipm", "converged", 0.1, 1.0)
    fast = bench.BenchRecord("quartic-simplex", 10, 0, "breakpoint", "converged", 0.05, 1.0)
    tie = bench.BenchRecord("quartic-simplex", 10, 0, "breakpoint", "converged", 0.1, 1.0)
    out = bench.BenchRecord("quartic-simplex", 10, 0, "breakpoint", "timeout", 0.02, 1.0)
    assert not bench.ipm_wins(ipm, fast)
    assert not bench.ipm_wins(ipm, tie)
    assert bench.ipm_wins(ipm, out)
    failed = bench.BenchRecord("quartic-simplex", 10, 0, "ipm", "singular", 0.01, 1.0)
    assert not bench.ipm_wins(failed, out)


def test_write_outputs(tmp_path, small_plan):
    recs = bench.run_cell(small_plan, "quartic-simplex", 50)
    paths = bench.write_outputs(tmp_path, small_plan, recs)
    for path in paths.values():
        assert path.exists()
    meta = json.loads(paths["plan.json"].read_text())
    assert "per-cell" in meta["cap_rule"]
    assert paths["wins.csv"].read_text().splitlines()[0] == "class,n,ipm_win_pct"


def test_linsys_bench_rows():
    rows = bench.linsys_bench([10, 100], reps=3)
    assert [r["n"] for r in rows] == [10, 100]
    assert all(r["closed_form_ms"] > 0 and r["dense_ms"] > 0 for r in rows)
    assert "speedup" in bench.format_linsys(rows)


def test_cli_generate_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert cli.main(["generate", "--class", "quartic", "--n", "1000", "--seed", "7",
                         "-o", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    p = load_instance(a)
    assert p.n == 1000 and validate_assumptions(p).passed
    assert "n=1000" in capsys.readouterr().out


def test_cli_rejects_equal_exponents(tmp_path):
    code = cli.main(["generate", "--class", "weighted-p-norm", "--n", "5", "--p", "2",
                     "--r", "2", "-o", str(tmp_path / "w.json")])
    assert code == 1


def test_cli_bad_class():
    with pytest.raises(SystemExit) as ei:
        cli.main(["generate", "--class", "nope", "--n", "5", "-o", "x.json"])
    assert ei.value.code != 0


def test_cli_solve_both_solvers(tmp_path, capsys):
    inst = tmp_path / "i.json"
    cli.main(["generate", "--class", "sums-of-powers", "--n", "100", "--seed", "2",
              "-o", str(inst)])
    objs = {}
    for solver in ("ipm", "breakpoint"):
        out = tmp_path / f"{solver}.json"
        assert cli.main(["solve", str(inst), "--solver", solver, "-o", str(out)]) == 0
        doc = json.loads(out.read_text())
        objs[solver] = doc["objective"]
        if solver == "ipm":
            assert max(doc["residual_norms"].values()) <= 1e-10
    assert objs["ipm"] == pytest.approx(objs["breakpoint"], rel=1e-6)


def test_cli_solve_timeout(tmp_path):
    inst = tmp_path / "big.json"
    cli.main(["generate", "--class", "resource-renewal", "--n", "100000", "--seed", "1",
              "-o", str(inst)])
    out = tmp_path / "r.json"
    code = cli.main(["solve", str(inst), "--solver", "breakpoint", "--time-limit", "0.0001",
                     "-o", str(out)])
    assert code == 2
    assert json.loads(out.read_text())["status"] == "timeout"


def test_cli_solve_corrupt(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["solve", str(bad)]) == 1
    assert cli.main(["solve", str(tmp_path / "missing.json")]) == 1


def test_cli_numerical_failure_exit(tmp_path):
    inst = tmp_path / "q.json"
    cli.main(["generate", "--class", "quartic", "--n", "50", "-o", str(inst)])
    assert cli.main(["solve", str(inst), "--tol", "1e-30", "-o", str(tmp_path / "r.json")]) == 3


def test_cli_bench(tmp_path, capsys):
    code = cli.main(["bench", "--class", "quartic", "--dims", "30,60", "--instances", "2",
                     "--out", str(tmp_path / "out")])
    assert code == 0
    out = capsys.readouterr().out
    assert "IPM win percentage" in out
    recs = bench.read_records_csv(open(tmp_path / "out" / "records.csv"))
    assert len(recs) == 8


def test_cli_linsys(tmp_path, capsys):
    assert cli.main(["linsys-bench", "--dims", "10,100", "--reps", "3",
                     "--out", str(tmp_path / "t.csv")]) == 0
    assert (tmp_path / "t.csv").read_text().startswith("n,closed_form_ms,dense_ms")
