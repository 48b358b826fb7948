import json

import numpy as np
import pytest

from conftest import make, quad_pair, quad_problem
from resalloc.model import (
    CoordinateFunctionPair,
    DomainError,
    NotOrientableError,
    PairList,
    SeparableProblem,
    Solution,
    check_kkt,
    dumps_instance,
    evaluate,
    kkt_residuals,
    loads_instance,
    map_back,
    reorient,
    sample_grid,
    validate_assumptions,
)


def test_validate_passes_simple(tiny):
    rep = validate_assumptions(tiny)
    assert rep.passed, str(rep)


def test_validate_fails_when_b_exceeds_g_u():
    p = quad_problem([2.0], [0.0], [1.0], 2.0)
    rep = validate_assumptions(p)
    assert not rep.passed
    names = [c.name for c in rep.failures()]
    assert names == ["g(l) < b < g(u)"]


def test_validate_reports_witness_coordinate():
    # second coordinate has f increasing on [0, 1]
    p = quad_problem([2.0, -1.0], [0.0, 0.0], [1.0, 1.0], 1.0)
    rep = validate_assumptions(p)
    bad = {c.name: c.index for c in rep.failures()}
    assert bad["f decreasing"] == 1


def test_validate_reports_nan_instead_of_raising():
    pair = CoordinateFunctionPair(
        f=lambda x: np.log(x - 0.5), df=lambda x: 1 / (x - 0.5), d2f=lambda x: -1.0,
        g=lambda x: x, dg=lambda x: 1.0, d2g=lambda x: 0.0)
    p = SeparableProblem(PairList([quad_pair(2.0), pair]), [0, 0], [1, 1], 1.0)
    with np.errstate(all="ignore"):
        rep = validate_assumptions(p)
    assert not rep.passed
    assert rep.failures()[0].index == 1


def test_validate_does_not_mutate(tiny):
    before = dumps_like(tiny)
    validate_assumptions(tiny)
    assert dumps_like(tiny) == before


def dumps_like(p):
    return (p.l.tobytes(), p.u.tobytes(), p.b)


def test_sample_grid_includes_endpoints():
    g = sample_grid(np.array([0.0, -1.0]), np.array([1.0, 3.0]), 5)
    assert g.shape == (7, 2)
    assert np.array_equal(g[0], [0.0, -1.0])
    assert np.array_equal(g[-1], [1.0, 3.0])


def test_evaluate_example():
    p = quad_problem([2.0, 2.0], [0, 0], [1, 1], 1.0)
    ev = evaluate(p, np.array([0.0, 1.0]))
    assert ev.f == 5.0 and ev.g == 1.0
    assert np.array_equal(ev.df, [-4.0, -2.0])
    assert np.array_equal(ev.dg, [1.0, 1.0])


def test_evaluate_is_deterministic(class_spec):
    cls, pp, rr = class_spec
    p = make(cls, 50, 3, pp, rr)
    x = 0.3 * p.l + 0.7 * p.u
    a, b = evaluate(p, x), evaluate(p, x)
    assert a.f == b.f and a.g == b.g
    for u, v in zip(a[2:], b[2:]):
        assert np.array_equal(u, v)


def test_evaluate_domain_error_names_coordinate():
    pair = CoordinateFunctionPair(
        f=lambda x: np.sqrt(x), df=lambda x: 0.5 / np.sqrt(x), d2f=lambda x: 0.0,
        g=lambda x: x, dg=lambda x: 1.0, d2g=lambda x: 0.0)
    p = SeparableProblem(PairList([quad_pair(2.0), pair]), [0, 0], [1, 1], 1.0)
    with np.errstate(all="ignore"), pytest.raises(DomainError) as ei:
        evaluate(p, np.array([0.5, -1.0]))
    assert ei.value.index == 1


def test_evaluate_at_lower_bound_below_b():
    p = make("weighted-p-norm", 40, 9, 2.5, 4.0)
    assert evaluate(p, p.l).g < p.b


def test_problem_is_immutable(tiny):
    with pytest.raises(ValueError):
        tiny.l[0] = 3.0


def test_problem_shape_checks():
    with pytest.raises(ValueError):
        SeparableProblem(PairList([quad_pair(1.0)]), [0.0, 0.0], [1.0, 1.0], 0.5)
    with pytest.raises(ValueError):
        SeparableProblem(PairList([]), [], [], 0.0)


def mirrored_pair():
    """f = (x + 2)^2 increasing on [0, 1], g = -x decreasing."""
    return CoordinateFunctionPair(
        f=lambda x: (x + 2) ** 2, df=lambda x: 2 * (x + 2), d2f=lambda x: 2.0,
        g=lambda x: -x, dg=lambda x: -1.0, d2g=lambda x: 0.0)


def test_reorient_flips_mirrored_coordinate():
    p = SeparableProblem(PairList([mirrored_pair(), quad_pair(2.0)]), [0, 0], [1, 1], -0.5)
    q, mask = reorient(p)
    assert mask.tolist() == [True, False]
    assert q.l.tolist() == [-1.0, 0.0] and q.u.tolist() == [0.0, 1.0]
    xt = np.array([-0.25, 0.5])
    ev = evaluate(q, xt)
    # f~(t) = (2 - t)^2, so f~'(-0.25) = -2 * 2.25
    assert ev.df[0] == pytest.approx(-4.5)
    assert ev.dg[0] == 1.0
    assert validate_assumptions(q).passed


def test_reorient_identity_on_oriented(tiny):
    q, mask = reorient(tiny)
    assert q is tiny
    assert mask.tolist() == [False]


def test_reorient_twice_with_mask_is_identity():
    p = SeparableProblem(PairList([mirrored_pair(), quad_pair(2.0)]), [0, 0], [1, 1], -0.5)
    q, mask = reorient(p)
    r, _ = reorient(q, mask)
    assert np.array_equal(r.l, p.l) and np.array_equal(r.u, p.u)
    x = np.array([0.3, 0.7])
    assert evaluate(r, x).f == evaluate(p, x).f
    assert r.flip is None


def test_map_back_roundtrip(rng):
    mask = rng.random(20) < 0.5
    x = rng.normal(size=20)
    assert np.array_equal(map_back(map_back(x, mask), mask), x)


def test_not_orientable():
    pair = CoordinateFunctionPair(
        f=lambda x: (x - 0.5) ** 2, df=lambda x: 2 * (x - 0.5), d2f=lambda x: 2.0,
        g=lambda x: x, dg=lambda x: 1.0, d2g=lambda x: 0.0)
    p = SeparableProblem(PairList([pair]), [0.0], [1.0], 0.5)
    with pytest.raises(NotOrientableError):
        reorient(p)


def test_kkt_residuals_example(tiny):
    r = kkt_residuals(tiny, np.array([0.5]), np.array([1.0]), np.array([0.5]),
                      np.array([1.0]), 3.0)
    assert r.r_d.tolist() == [0.0]
    assert r.r_l.tolist() == [0.5] and r.r_u.tolist() == [0.5]
    assert r.r_g == 0.0


def test_check_kkt_exact_solution(tiny):
    sol = Solution(np.array([0.5]), 3.0, np.zeros(1), np.zeros(1), 2.25)
    assert check_kkt(tiny, sol)["passed"]
    wrong = Solution(np.array([0.5]), 2.0, np.zeros(1), np.zeros(1), 2.25)
    assert not check_kkt(tiny, wrong)["passed"]


def test_serialization_roundtrip(class_spec):
    cls, pp, rr = class_spec
    p = make(cls, 30, 5, pp, rr)
    text = dumps_instance(p)
    doc = json.loads(text)
    assert doc["format"] == "resalloc-instance/1"
    assert doc["class"] == cls and doc["n"] == 30 and doc["seed"] == 5
    q = loads_instance(text)
    assert dumps_instance(q) == text
    x = 0.5 * (p.l + p.u)
    assert evaluate(q, x).f == evaluate(p, x).f


def test_serialization_keeps_flip():
    p = make("quartic-simplex", 6, 1)
    q, mask = reorient(p, mask=np.array([1, 0, 1, 0, 0, 0], dtype=bool))
    r = loads_instance(dumps_instance(q))
    x = 0.5 * (q.l + q.u)
    assert np.array_equal(r.flip, mask)
    assert evaluate(r, x).f == evaluate(q, x).f


def test_pair_functions_cannot_serialize(tiny):
    with pytest.raises(TypeError):
        dumps_instance(tiny)


def test_bad_format_rejected():
    with pytest.raises(ValueError):
        loads_instance(json.dumps({"format": "other"}))
