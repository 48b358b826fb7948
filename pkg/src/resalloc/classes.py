"""The five benchmark problem classes and their seeded random generators.

All classes have analytic first and second derivatives. Random draws use a
PCG64 ``numpy.random.Generator``; normals come from numpy's ziggurat sampler.
Every generator returns an instance satisfying the breakpoint-search
assumptions (f_i decreasing, g_i increasing, g(l) < b < g(u)).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .model import SeparableFunctions, SeparableProblem, register_family
from .scalar import argmin_unbounded

CLASSES = (
    "resource-renewal",
    "weighted-p-norm",
    "sums-of-powers",
    "quartic-simplex",
    "log-exponential",
)
ALIASES = {
    "renewal": "resource-renewal",
    "pnorm": "weighted-p-norm",
    "p-norm": "weighted-p-norm",
    "powers": "sums-of-powers",
    "quartic": "quartic-simplex",
    "logexp": "log-exponential",
    "log-exp": "log-exponential",
}
PNORM_EXPONENTS = (2.0, 2.5, 3.0, 4.0)
# (p, r) pairs used when a sweep does not fix them; every exponent appears
# once as p and once as r
PNORM_PAIRS = ((2.0, 3.0), (2.5, 4.0), (3.0, 2.0), (4.0, 2.5))
LOGEXP_TERMS = 5


class GenerationError(RuntimeError):
    pass


def canonical_class(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in CLASSES:
        raise ValueError(f"unknown problem class {name!r}; choose from {', '.join(CLASSES)}")
    return name


# ----------------------------------------------------------------------------
# Function families


@register_family
class ResourceRenewal(SeparableFunctions):
    """f_i(x) = a_i x (exp(-1/x) - 1) for x > 0, extended by -a_i x for x <= 0;
    g_i(x) = c_i x.

    The extension matches value and all derivatives of the x > 0 branch at 0.
    """

    kind = "resource-renewal"

    def __init__(self, a, c):
        self.a = np.asarray(a, dtype=float)
        self.c = np.asarray(c, dtype=float)

    @property
    def n(self):
        return self.a.size

    def params(self):
        return {"a": self.a, "c": self.c}

    @classmethod
    def from_params(cls, params):
        return cls(params["a"], params["c"])

    def subset(self, idx):
        return ResourceRenewal(self.a[idx], self.c[idx])

    @staticmethod
    def _t(x):
        pos = x > 0
        return pos, 1.0 / np.where(pos, x, 1.0)

    def f(self, x):
        pos, t = self._t(x)
        return np.where(pos, self.a * x * np.expm1(-t), -self.a * x)

    def df(self, x):
        pos, t = self._t(x)
        # exp(-t)(1 + t) - 1, with a series where the direct form cancels
        with np.errstate(divide="ignore"):
            direct = np.exp(np.log1p(t) - t) - 1.0
        n = 10
        series = np.zeros_like(t)
        for k in range(n, 1, -1):
            series = t * series + (-1) ** k * (1 - k) / math.factorial(k)
        series *= t * t
        core = np.where(t < 0.1, series, direct)
        return np.where(pos, self.a * core, -self.a)

    def d2f(self, x):
        pos, t = self._t(x)
        with np.errstate(divide="ignore"):
            v = self.a * np.exp(3.0 * np.log(t) - t)
        return np.where(pos, v, 0.0)

    def g(self, x):
        return self.c * x

    def dg(self, x):
        return self.c.copy()

    def d2g(self, x):
        return np.zeros_like(self.c)


class PowerPair(SeparableFunctions):
    """f_i(x) = a_i |x - y_i|^p_i, g_i(x) = |x|^r_i."""

    def __init__(self, a, y, p, r):
        self.a = np.asarray(a, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.p = np.broadcast_to(np.asarray(p, dtype=float), self.a.shape).copy()
        self.r = np.broadcast_to(np.asarray(r, dtype=float), self.a.shape).copy()

    @property
    def n(self):
        return self.a.size

    def params(self):
        return {"a": self.a, "y": self.y, "p": self.p, "r": self.r}

    @classmethod
    def from_params(cls, params):
        return cls(params["a"], params["y"], params["p"], params["r"])

    def subset(self, idx):
        return type(self)(self.a[idx], self.y[idx], self.p[idx], self.r[idx])

    def f(self, x):
        return self.a * np.abs(x - self.y) ** self.p

    def df(self, x):
        d = x - self.y
        return self.a * self.p * np.abs(d) ** (self.p - 1) * np.sign(d)

    def d2f(self, x):
        return self.a * self.p * (self.p - 1) * np.abs(x - self.y) ** (self.p - 2)

    def g(self, x):
        return np.abs(x) ** self.r

    def dg(self, x):
        return self.r * np.abs(x) ** (self.r - 1) * np.sign(x)

    def d2g(self, x):
        return self.r * (self.r - 1) * np.abs(x) ** (self.r - 2)

    def derivatives(self, x):
        d = x - self.y
        ad = np.abs(d)
        pf = ad ** (self.p - 2)
        ax = np.abs(x)
        pg = ax ** (self.r - 2)
        ap = self.a * self.p
        return (
            ap * pf * d,
            ap * (self.p - 1) * pf,
            self.r * pg * x,
            self.r * (self.r - 1) * pg,
        )


@register_family
class WeightedPNorm(PowerPair):
    """Power pair with exponents p, r shared by all coordinates."""

    kind = "weighted-p-norm"


@register_family
class SumsOfPowers(PowerPair):
    kind = "sums-of-powers"


@register_family
class Quartic(SeparableFunctions):
    """f_i(x) = a_i x^4 + b_i x^3 + c_i x^2 + d_i x, g_i(x) = x."""

    kind = "quartic-simplex"

    def __init__(self, a, b, c, d):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.d = np.asarray(d, dtype=float)

    @property
    def n(self):
        return self.a.size

    def params(self):
        return {"a": self.a, "b": self.b, "c": self.c, "d": self.d}

    @classmethod
    def from_params(cls, params):
        return cls(params["a"], params["b"], params["c"], params["d"])

    def subset(self, idx):
        return Quartic(self.a[idx], self.b[idx], self.c[idx], self.d[idx])

    def f(self, x):
        return (((self.a * x + self.b) * x + self.c) * x + self.d) * x

    def df(self, x):
        return ((4 * self.a * x + 3 * self.b) * x + 2 * self.c) * x + self.d

    def d2f(self, x):
        return (12 * self.a * x + 6 * self.b) * x + 2 * self.c

    def g(self, x):
        return np.asarray(x, dtype=float).copy()

    def dg(self, x):
        return np.ones_like(self.a)

    def d2g(self, x):
        return np.zeros_like(self.a)


@register_family
class LogExp(SeparableFunctions):
    """f_i(x) = log sum_j exp(A_ij x + D_ij), g_i(x) = c_i x."""

    kind = "log-exponential"

    def __init__(self, A, D, c):
        self.A = np.asarray(A, dtype=float)
        self.D = np.asarray(D, dtype=float)
        self.c = np.asarray(c, dtype=float)

    @property
    def n(self):
        return self.c.size

    def params(self):
        return {"A": self.A, "D": self.D, "c": self.c}

    @classmethod
    def from_params(cls, params):
        return cls(params["A"], params["D"], params["c"])

    def subset(self, idx):
        return LogExp(self.A[idx], self.D[idx], self.c[idx])

    def _softmax(self, x):
        z = self.A * np.asarray(x, dtype=float)[:, None] + self.D
        m = z.max(axis=1)
        e = np.exp(z - m[:, None])
        s = e.sum(axis=1)
        return m, s, e / s[:, None]

    def f(self, x):
        m, s, _ = self._softmax(x)
        return m + np.log(s)

    def df(self, x):
        _, _, w = self._softmax(x)
        return (w * self.A).sum(axis=1)

    def d2f(self, x):
        return self.derivatives(x)[1]

    def g(self, x):
        return self.c * x

    def dg(self, x):
        return self.c.copy()

    def d2g(self, x):
        return np.zeros_like(self.c)

    def derivatives(self, x):
        _, _, w = self._softmax(x)
        df = (w * self.A).sum(axis=1)
        dev = self.A - df[:, None]
        d2f = (w * dev * dev).sum(axis=1)
        return df, d2f, self.c.copy(), np.zeros_like(self.c)


# ----------------------------------------------------------------------------
# Random generation


def make_rng(seed: int) -> np.random.Generator:
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.PCG64(int(seed)))


def uniform_open(rng: np.random.Generator, lo, hi, size=None) -> np.ndarray:
    """Continuous uniform on the open interval (lo, hi), elementwise."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    if size is not None:
        lo = np.broadcast_to(lo, size)
        hi = np.broadcast_to(hi, size)
    if np.any(~(lo < hi)):
        raise GenerationError("uniform draw on an empty interval")
    z = np.array(rng.uniform(lo, hi), dtype=float, ndmin=1)
    bad = ~((z > lo) & (z < hi))
    while bad.any():
        z[bad] = rng.uniform(lo[bad], hi[bad])
        bad = ~((z > lo) & (z < hi))
    return z


@dataclasses.dataclass(frozen=True)
class GeneratorSpec:
    cls: str
    n: int
    seed: int
    p: float | None = None
    r: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "cls", canonical_class(self.cls))
        if self.n < 1:
            raise ValueError("n must be positive")


def _resource_level(rng, fam, l, u) -> float:
    gl = math.fsum(fam.g(l))
    gu = math.fsum(fam.g(u))
    return float(uniform_open(rng, gl, gu)[0])


def gen_resource_renewal(n: int, seed: int) -> SeparableProblem:
    """Resource renewal instance.

    xi_i minimizes f_i + gamma g_i over x >= 0 with gamma = min_j a_j / c_j;
    this is 0 for the coordinate attaining the minimum and an interior point
    elsewhere. Then b = 1.1 sum_i c_i xi_i, l = 0 and u_i = b / c_i.
    """
    if n < 2:
        raise GenerationError("resource-renewal needs n >= 2 (b = 0 when n = 1)")
    rng = make_rng(seed)
    a = uniform_open(rng, 0.001, 1000.0, n)
    c = uniform_open(rng, 0.001, 1000.0, n)
    fam = ResourceRenewal(a, c)
    ratio = a / c
    gamma = float(ratio.min())
    xi = np.zeros(n)
    inner = ratio > gamma
    if inner.any():
        xi[inner] = argmin_unbounded(fam.subset(inner), gamma, x0=1.0)
    b = 1.1 * math.fsum(c * xi)
    if not b > 0:
        raise GenerationError("resource level is not positive")
    return SeparableProblem(fam, np.zeros(n), b / c, b, seed=seed)


def _check_pnorm(p, r):
    if p not in PNORM_EXPONENTS or r not in PNORM_EXPONENTS:
        raise ValueError(f"p and r must be in {PNORM_EXPONENTS}")
    if p == r:
        raise ValueError("p and r must differ")


def _power_bounds(rng, n):
    l = uniform_open(rng, 0.0, 5.0, n)
    u = uniform_open(rng, l, l + 5.0)
    y = uniform_open(rng, u, u + 5.0)
    return l, u, y


def gen_weighted_pnorm(n: int, seed: int, p: float, r: float) -> SeparableProblem:
    _check_pnorm(p, r)
    rng = make_rng(seed)
    a = uniform_open(rng, 1.0, 10.0, n)
    l, u, y = _power_bounds(rng, n)
    fam = WeightedPNorm(a, y, p, r)
    b = _resource_level(rng, fam, l, u)
    return SeparableProblem(fam, l, u, b, seed=seed, options={"p": p, "r": r})


def gen_sums_of_powers(n: int, seed: int) -> SeparableProblem:
    rng = make_rng(seed)
    a = uniform_open(rng, 1.0, 10.0, n)
    p = uniform_open(rng, 2.0, 4.0, n)
    r = uniform_open(rng, 2.0, 4.0, n)
    l, u, y = _power_bounds(rng, n)
    fam = SumsOfPowers(a, y, p, r)
    b = _resource_level(rng, fam, l, u)
    return SeparableProblem(fam, l, u, b, seed=seed)


def quartic_coefficients(rng, n):
    """Coefficients with 8 a c > 3 b^2 from rescaled entries of A^T A."""
    out = np.empty((3, n))
    todo = np.arange(n)
    while todo.size:
        xi, eta, zeta, chi = rng.standard_normal((4, todo.size))
        a = (xi**2 + eta**2) / math.sqrt(8)
        b = (xi * zeta + eta * chi) / math.sqrt(3)
        c = (zeta**2 + chi**2) / math.sqrt(8)
        out[:, todo] = a, b, c
        strict = (8 * a * c - 3 * b * b > 0) & (a > 0) & (c > 0)
        todo = todo[~strict]
    return out


def gen_quartic(n: int, seed: int) -> SeparableProblem:
    rng = make_rng(seed)
    a, b, c = quartic_coefficients(rng, n)
    tau = uniform_open(rng, 0.0, 10.0, n)
    d = -(((4 * a * tau + 3 * b) * tau + 2 * c) * tau)
    lam = uniform_open(rng, 0.0, tau)
    u = np.minimum(tau, lam)
    l = uniform_open(rng, 0.0, u)
    fam = Quartic(a, b, c, d)
    level = _resource_level(rng, fam, l, u)
    return SeparableProblem(fam, l, u, level, seed=seed)


def logexp_slopes(xi: np.ndarray) -> np.ndarray:
    """Slopes A_ij from standard normal draws.

    Rows drawn all positive are reflected to all negative so every f_i is
    either decreasing everywhere or has a finite minimizer.
    """
    allpos = np.all(xi > 0, axis=1)
    return np.where(allpos[:, None], -np.abs(xi), xi)


def gen_log_exponential(n: int, seed: int) -> SeparableProblem:
    """Log-exponential instance.

    Coordinates with mixed-sign slopes (the set I) get u_i = min(chi_i,
    1.2 zeta_i chi_i) with chi_i = argmin f_i and zeta_i ~ U(0, 1); the
    others get u_i = 5 zeta_i with zeta_i ~ N(0, 1).
    """
    rng = make_rng(seed)
    k = LOGEXP_TERMS
    D = rng.standard_normal((n, k))
    c = uniform_open(rng, 0.0, 10.0, n)
    A = logexp_slopes(rng.standard_normal((n, k)))
    zeta_u = uniform_open(rng, 0.0, 1.0, n)
    zeta_n = rng.standard_normal(n)
    eta = rng.standard_normal(n)
    fam = LogExp(A, D, c)

    mixed = (A.min(axis=1) < 0) & (A.max(axis=1) > 0)
    u = 5.0 * zeta_n
    if mixed.any():
        chi = argmin_unbounded(fam.subset(mixed), 0.0, x0=0.0)
        u[mixed] = np.minimum(chi, 1.2 * zeta_u[mixed] * chi)
    l = u - 0.05 * np.abs(u) - 5.0 * np.abs(eta)
    b = _resource_level(rng, fam, l, u)
    return SeparableProblem(fam, l, u, b, seed=seed)


def generate(spec: GeneratorSpec) -> SeparableProblem:
    """Dispatch on ``spec.cls``; identical specs give identical instances."""
    if spec.cls == "resource-renewal":
        return gen_resource_renewal(spec.n, spec.seed)
    if spec.cls == "weighted-p-norm":
        if spec.p is None or spec.r is None:
            raise ValueError("weighted-p-norm needs p and r")
        return gen_weighted_pnorm(spec.n, spec.seed, float(spec.p), float(spec.r))
    if spec.cls == "sums-of-powers":
        return gen_sums_of_powers(spec.n, spec.seed)
    if spec.cls == "quartic-simplex":
        return gen_quartic(spec.n, spec.seed)
    return gen_log_exponential(spec.n, spec.seed)


def subgen_argmin_scalar(pair, rho: float, x0: float = 0.0) -> float:
    """Minimizer of a single strictly convex f + rho g over the real line.

    ``pair`` is a one-coordinate :class:`SeparableFunctions` or a
    :class:`~resalloc.model.CoordinateFunctionPair`.
    """
    from .model import PairList, CoordinateFunctionPair

    fam = PairList([pair]) if isinstance(pair, CoordinateFunctionPair) else pair
    return float(argmin_unbounded(fam, rho, x0=x0)[0])
