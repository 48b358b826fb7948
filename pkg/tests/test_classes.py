import json
import math

import numpy as np
import pytest

from conftest import CLASS_SPECS, make, quad_pair
from resalloc.classes import (
    CLASSES,
    GenerationError,
    GeneratorSpec,
    LogExp,
    PowerPair,
    ResourceRenewal,
    canonical_class,
    generate,
    logexp_slopes,
    make_rng,
    quartic_coefficients,
    subgen_argmin_scalar,
    uniform_open,
)
from resalloc.model import CoordinateFunctionPair, dumps_instance, validate_assumptions


def bisect_root(fn, lo, hi, iters=200):
    """Plain bisection on a sign change; the independent oracle here."""
    flo = fn(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if fm == 0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fd_check(fn, dfn, x):
    h = 1e-6 * (1 + np.abs(x))
    fd = (fn(x + h) - fn(x - h)) / (2 * h)
    d = dfn(x)
    return np.abs(d - fd) <= 1e-5 * (1 + np.abs(d))


@pytest.mark.parametrize("cls,p,r", CLASS_SPECS)
def test_derivatives_match_finite_differences(cls, p, r):
    prob = make(cls, 100, 11, p, r)
    fam = prob.functions
    t = make_rng(99).uniform(0.02, 0.98, size=100)
    x = prob.l + t * (prob.u - prob.l)
    for fn, dfn in ((fam.f, fam.df), (fam.df, fam.d2f), (fam.g, fam.dg), (fam.dg, fam.d2g)):
        ok = fd_check(fn, dfn, x)
        assert ok.all(), np.flatnonzero(~ok)


def test_resource_renewal_derivative_formula():
    fam = ResourceRenewal(np.array([3.0]), np.array([1.0]))
    for x in (0.05, 0.3, 1.0, 7.0, 250.0):
        e = math.exp(-1 / x)
        expected = 3.0 * (e - 1) + (3.0 / x) * e
        assert fam.df(np.array([x]))[0] == pytest.approx(expected, rel=1e-12, abs=1e-15)


def test_resource_renewal_derivative_limit_at_zero():
    fam = ResourceRenewal(np.array([2.5]), np.array([1.0]))
    assert fam.df(np.array([1e-6]))[0] == pytest.approx(-2.5, rel=1e-12)


def test_resource_renewal_extension_is_smooth():
    # both branches agree with the line -a x (value, slope, curvature) at +-1e-6
    a = np.array([0.5, 7.0, 900.0])
    fam = ResourceRenewal(a, np.ones(3))
    tol = 1e-10 * (1 + a)
    for h in (-1e-6, 1e-6):
        x = np.full(3, h)
        assert np.all(np.abs(fam.f(x) + a * x) <= tol)
        assert np.all(np.abs(fam.df(x) + a) <= tol)
        assert np.all(np.abs(fam.d2f(x)) <= tol)


def test_resource_renewal_large_argument_stable():
    fam = ResourceRenewal(np.array([1.0]), np.array([1.0]))
    x = np.array([1e3, 1e6, 1e9])
    df = fam.df(x)
    # f'(x) ~ -1/(2x^2) for large x
    assert np.allclose(df, -0.5 / x**2, rtol=1e-2)
    assert np.all(fam.d2f(x) >= 0)


def test_resource_renewal_needs_two_coordinates():
    with pytest.raises(GenerationError):
        generate(GeneratorSpec("resource-renewal", 1, 0))


def test_weighted_pnorm_second_derivative():
    a, y = np.array([2.0]), np.array([4.0])
    fam = PowerPair(a, y, np.array([2.5]), np.array([3.0]))
    x = np.array([1.0])
    assert fam.d2f(x)[0] == pytest.approx(2.0 * 2.5 * 1.5 * 3.0**0.5)
    assert fam.df(x)[0] == pytest.approx(-2.0 * 2.5 * 3.0**1.5)


def test_weighted_pnorm_rejects_equal_exponents():
    with pytest.raises(ValueError):
        generate(GeneratorSpec("weighted-p-norm", 10, 0, 2.0, 2.0))
    with pytest.raises(ValueError):
        generate(GeneratorSpec("weighted-p-norm", 10, 0, 2.0, 5.0))


def test_power_bounds_ordering():
    p = make("sums-of-powers", 500, 4)
    y = p.functions.y
    assert np.all(p.l > 0) and np.all(p.l < p.u) and np.all(p.u < y)
    assert np.all(p.u < p.l + 5) and np.all(y < p.u + 5)
    e = p.functions.p
    assert np.all((e > 2) & (e < 4))


def test_generated_b_inside_range():
    for seed in range(100):
        p = make("weighted-p-norm", 20, seed)
        g = p.functions.g
        assert g(p.l).sum() < p.b < g(p.u).sum()


def test_quartic_positive_definite():
    a, b, c = quartic_coefficients(make_rng(3), 20000)
    assert np.all(a > 0) and np.all(c > 0)
    assert np.all(8 * a * c - 3 * b * b > 0)


def test_quartic_critical_point_above_u():
    p = make("quartic-simplex", 300, 8)
    fam = p.functions
    assert np.all(p.l < p.u)
    assert np.all(fam.df(p.u) < 0)
    assert np.all(fam.d2f(np.linspace(0, 10, 50)[:, None] * np.ones(300)) > 0)


def test_logexp_softmax_derivatives():
    A = np.array([[1.0, -2.0, 0.5]])
    D = np.array([[0.1, 0.3, -0.2]])
    fam = LogExp(A, D, np.array([1.0]))
    x = 0.7
    z = A[0] * x + D[0]
    w = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
    assert fam.df(np.array([x]))[0] == pytest.approx(w @ A[0], rel=1e-13)
    var = w @ A[0] ** 2 - (w @ A[0]) ** 2
    assert fam.d2f(np.array([x]))[0] == pytest.approx(var, rel=1e-12)
    assert fam.f(np.array([x]))[0] == pytest.approx(math.log(np.exp(z).sum()), rel=1e-14)


def test_logexp_no_overflow():
    fam = LogExp(np.array([[500.0, -3.0]]), np.zeros((1, 2)), np.ones(1))
    x = np.array([10.0])
    assert np.isfinite(fam.f(x)).all() and np.isfinite(fam.df(x)).all()


def test_logexp_slopes_rule():
    xi = np.array([[0.5, 1.2, 0.1], [0.5, -1.0, 2.0], [-0.3, -0.2, -1.0]])
    A = logexp_slopes(xi)
    assert np.all(A[0] < 0)
    assert np.array_equal(A[1:], xi[1:])


def test_logexp_argmin_matches_bisection():
    p = make("log-exponential", 60, 2)
    fam = p.functions
    mixed = np.flatnonzero((fam.A.min(axis=1) < 0) & (fam.A.max(axis=1) > 0))
    assert mixed.size > 0
    for i in mixed[:10]:
        sub = fam.subset(np.array([i]))
        df = lambda t: float(sub.df(np.array([t]))[0])  # noqa: E731
        root = bisect_root(df, -200.0, 200.0)
        assert subgen_argmin_scalar(sub, 0.0) == pytest.approx(root, abs=1e-9)


def test_subgen_argmin_linear_case():
    pair = CoordinateFunctionPair(
        f=lambda x: (x - 3) ** 2, df=lambda x: 2 * (x - 3), d2f=lambda x: 2.0,
        g=lambda x: x, dg=lambda x: 1.0, d2g=lambda x: 0.0)
    assert subgen_argmin_scalar(pair, 2.0) == pytest.approx(2.0, abs=1e-12)


def test_subgen_argmin_power_at_rho_zero():
    fam = PowerPair(np.array([1.0]), np.array([3.7]), np.array([2.0]), np.array([3.0]))
    assert subgen_argmin_scalar(fam, 0.0) == pytest.approx(3.7, abs=1e-10)


def test_subgen_argmin_renewal_vs_bisection():
    a, c, gamma = 40.0, 3.0, 2.5
    fam = ResourceRenewal(np.array([a]), np.array([c]))
    phi = lambda x: float(fam.df(np.array([x]))[0]) + gamma * c  # noqa: E731
    root = bisect_root(phi, 1e-3, 1e3)
    x = subgen_argmin_scalar(fam, gamma, x0=1.0)
    assert x == pytest.approx(root, rel=1e-12)
    assert abs(phi(x)) <= 1e-12 * (1 + abs(float(fam.df(np.array([x]))[0])))


def test_subgen_argmin_requires_minimizer():
    fam = ResourceRenewal(np.array([1.0]), np.array([1.0]))
    with pytest.raises(Exception):
        subgen_argmin_scalar(fam, 0.0)  # f decreasing with no minimizer


def test_uniform_open_strict(rng):
    g = make_rng(1)
    z = uniform_open(g, 0.0, 1e-300, 1000)
    assert np.all(z > 0) and np.all(z < 1e-300)
    lo = rng.uniform(-5, 5, 100)
    z = uniform_open(g, lo, lo + 1e-9)
    assert np.all((z > lo) & (z < lo + 1e-9))


def test_uniform_open_rejects_empty():
    with pytest.raises(GenerationError):
        uniform_open(make_rng(0), 1.0, 1.0, 3)


@pytest.mark.parametrize("cls", CLASSES)
def test_generation_is_deterministic(cls):
    a = dumps_instance(make(cls, 200, 17))
    b = dumps_instance(make(cls, 200, 17))
    assert a == b
    assert a != dumps_instance(make(cls, 200, 18))


@pytest.mark.parametrize("cls", CLASSES)
def test_generated_instances_validate(cls):
    for seed in range(10):
        rep = validate_assumptions(make(cls, 100, seed))
        assert rep.passed, f"seed {seed}\n{rep}"


def test_class_aliases():
    assert canonical_class("quartic") == "quartic-simplex"
    with pytest.raises(ValueError):
        canonical_class("nope")


def test_spec_validation():
    with pytest.raises(ValueError):
        GeneratorSpec("quartic", 0, 1)
    with pytest.raises(ValueError):
        make_rng(-1)


def test_instance_json_records_options():
    doc = json.loads(dumps_instance(make("weighted-p-norm", 5, 0, 2.5, 4.0)))
    assert doc["options"] == {"p": 2.5, "r": 4.0}
