"""Data model for singly-constrained separable resource allocation.

The problem is::

    minimize    f(x) = sum_i f_i(x_i)
    subject to  g(x) = sum_i g_i(x_i) = b
                l <= x <= u

with every f_i, g_i convex and twice differentiable near [l_i, u_i].
Coordinate functions are held by a :class:`SeparableFunctions` family that
evaluates all n coordinates at once on numpy arrays.
"""

from __future__ import annotations

import abc
import dataclasses
import json
import math
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

INSTANCE_FORMAT = "resalloc-instance/1"
DEFAULT_SAMPLES = 33
SIGN_TOL = 1e-12


class DomainError(ArithmeticError):
    """A coordinate function returned NaN or infinity."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class NotOrientableError(ValueError):
    """A coordinate is monotone in neither admissible pattern."""

    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


@dataclasses.dataclass(frozen=True)
class CoordinateFunctionPair:
    """Scalar evaluators for one coordinate pair (f_i, g_i)."""

    f: Callable[[float], float]
    df: Callable[[float], float]
    d2f: Callable[[float], float]
    g: Callable[[float], float]
    dg: Callable[[float], float]
    d2g: Callable[[float], float]


class SeparableFunctions(abc.ABC):
    """Vectorized evaluators for n coordinate pairs.

    Every evaluator takes an array ``x`` of length ``n`` and returns the
    coordinate-wise values. Subclasses hold per-coordinate parameter arrays
    and must be immutable.
    """

    #: Registry key used for serialization; ``None`` means not serializable.
    kind: str | None = None

    @property
    @abc.abstractmethod
    def n(self) -> int: ...

    @abc.abstractmethod
    def f(self, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def df(self, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def d2f(self, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def g(self, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def dg(self, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def d2g(self, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def subset(self, idx: np.ndarray) -> SeparableFunctions:
        """Return the family restricted to coordinates ``idx``."""

    def values(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.f(x), self.g(x)

    def derivatives(self, x: np.ndarray) -> tuple[np.ndarray, ...]:
        """Return ``(f', f'', g', g'')``; override to share work."""
        return self.df(x), self.d2f(x), self.dg(x), self.d2g(x)

    def params(self) -> dict[str, Any]:
        raise TypeError(f"{type(self).__name__} cannot be serialized")

    @classmethod
    def from_params(cls, params: dict[str, Any]) -> SeparableFunctions:
        raise TypeError(f"{cls.__name__} cannot be deserialized")

    def coordinate(self, i: int) -> CoordinateFunctionPair:
        """Scalar view of coordinate ``i``."""
        one = self.subset(np.array([i]))

        def wrap(fn):
            return lambda t: float(fn(np.array([t], dtype=float))[0])

        return CoordinateFunctionPair(
            wrap(one.f), wrap(one.df), wrap(one.d2f),
            wrap(one.g), wrap(one.dg), wrap(one.d2g),
        )


_FAMILIES: dict[str, type[SeparableFunctions]] = {}


def register_family(cls: type[SeparableFunctions]) -> type[SeparableFunctions]:
    """Class decorator making a family reconstructible from JSON."""
    _FAMILIES[cls.kind] = cls
    return cls


def _call(fn, t: float) -> float:
    # scalar math raises where numpy would return NaN; unify on NaN
    try:
        return float(fn(t))
    except (ArithmeticError, ValueError):
        return math.nan


class PairList(SeparableFunctions):
    """Family built from user-supplied scalar :class:`CoordinateFunctionPair`s.

    Evaluation loops in Python, so this is meant for small or hand-built
    problems.
    """

    def __init__(self, pairs: Sequence[CoordinateFunctionPair]):
        self.pairs = tuple(pairs)

    @property
    def n(self) -> int:
        return len(self.pairs)

    def _apply(self, name: str, x: np.ndarray) -> np.ndarray:
        return np.fromiter(
            (_call(getattr(p, name), float(t)) for p, t in zip(self.pairs, x)),
            dtype=float, count=len(self.pairs),
        )

    def f(self, x):
        return self._apply("f", x)

    def df(self, x):
        return self._apply("df", x)

    def d2f(self, x):
        return self._apply("d2f", x)

    def g(self, x):
        return self._apply("g", x)

    def dg(self, x):
        return self._apply("dg", x)

    def d2g(self, x):
        return self._apply("d2g", x)

    def subset(self, idx):
        return PairList([self.pairs[i] for i in np.arange(self.n)[idx]])

    def coordinate(self, i):
        return self.pairs[i]


class Flipped(SeparableFunctions):
    """Family evaluated at ``sign * x`` (``sign`` is +1 or -1 per coordinate)."""

    def __init__(self, base: SeparableFunctions, sign: np.ndarray):
        self.base = base
        self.sign = np.asarray(sign, dtype=float)

    @property
    def n(self) -> int:
        return self.base.n

    def f(self, x):
        return self.base.f(self.sign * x)

    def df(self, x):
        return self.sign * self.base.df(self.sign * x)

    def d2f(self, x):
        return self.base.d2f(self.sign * x)

    def g(self, x):
        return self.base.g(self.sign * x)

    def dg(self, x):
        return self.sign * self.base.dg(self.sign * x)

    def d2g(self, x):
        return self.base.d2g(self.sign * x)

    def derivatives(self, x):
        df, d2f, dg, d2g = self.base.derivatives(self.sign * x)
        return self.sign * df, d2f, self.sign * dg, d2g

    def values(self, x):
        return self.base.values(self.sign * x)

    def subset(self, idx):
        return Flipped(self.base.subset(idx), self.sign[idx])


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclasses.dataclass(frozen=True, eq=False)
class SeparableProblem:
    """Problem data: coordinate functions, bounds ``l``, ``u`` and resource ``b``.

    ``seed`` and ``options`` record how a generated instance was produced and
    are carried through serialization. ``flip`` is the reorientation mask if
    the instance was reoriented after generation.
    """

    functions: SeparableFunctions
    l: np.ndarray
    u: np.ndarray
    b: float
    seed: int | None = None
    options: dict[str, Any] = dataclasses.field(default_factory=dict)
    flip: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "l", _frozen(self.l))
        object.__setattr__(self, "u", _frozen(self.u))
        object.__setattr__(self, "b", float(self.b))
        if self.l.shape != self.u.shape or self.l.ndim != 1:
            raise ValueError("l and u must be 1-D arrays of equal length")
        if self.l.size < 1:
            raise ValueError("n must be at least 1")
        if self.functions.n != self.l.size:
            raise ValueError(
                f"functions have n={self.functions.n}, bounds have n={self.l.size}"
            )

    @property
    def n(self) -> int:
        return self.l.size


class Evaluation(NamedTuple):
    f: float
    g: float
    df: np.ndarray
    dg: np.ndarray
    d2f: np.ndarray
    d2g: np.ndarray


def _check_finite(name: str, v: np.ndarray) -> None:
    bad = ~np.isfinite(v)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"{name} is not finite at coordinate {i}", index=i)


def evaluate(p: SeparableProblem, x: np.ndarray) -> Evaluation:
    """Evaluate objective, constraint and all coordinate derivatives at ``x``.

    Raises:
        DomainError: if any evaluator returns NaN or infinity.
    """
    x = np.asarray(x, dtype=float)
    fv, gv = p.functions.values(x)
    df, d2f, dg, d2g = p.functions.derivatives(x)
    for name, v in (("f", fv), ("g", gv), ("f'", df), ("g'", dg),
                    ("f''", d2f), ("g''", d2g)):
        _check_finite(name, v)
    return Evaluation(float(math.fsum(fv)), float(math.fsum(gv)), df, dg, d2f, d2g)


# ----------------------------------------------------------------------------
# Assumption validation


@dataclasses.dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    index: int | None = None
    detail: str = ""


@dataclasses.dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def __str__(self) -> str:
        lines = []
        for c in self.checks:
            mark = "ok" if c.passed else "FAIL"
            extra = f" (coordinate {c.index}: {c.detail})" if not c.passed else ""
            lines.append(f"{mark:4s} {c.name}{extra}")
        return "\n".join(lines)


def sample_grid(l: np.ndarray, u: np.ndarray, samples: int) -> np.ndarray:
    """Return an ``(samples + 2, n)`` grid: both endpoints plus evenly spaced
    interior points of every interval."""
    t = np.linspace(0.0, 1.0, samples + 2)
    grid = l[None, :] + t[:, None] * (u - l)[None, :]
    grid[-1] = u
    return grid


def _first_bad(mask: np.ndarray) -> int | None:
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]) if cols.size else None


def validate_assumptions(
    p: SeparableProblem, samples: int = DEFAULT_SAMPLES
) -> ValidationReport:
    """Check monotonicity, convexity and resource bracketing on a sample grid.

    Checked at ``samples`` interior points of each interval plus both ends:
    ``f_i' <= tol``, ``g_i' >= -tol``, ``f_i'' >= -tol``, ``g_i'' >= -tol``
    with ``tol = 1e-12 * (1 + scale)`` per coordinate, and ``g(l) < b < g(u)``.
    The relaxed-inequality condition is checked through its sufficient
    condition ``f_i' < 0`` on ``[l_i, u_i)``. Failures are reported, never
    raised; the problem is not modified.
    """
    checks: list[Check] = []
    l, u = p.l, p.u
    if not (np.all(np.isfinite(l)) and np.all(np.isfinite(u))):
        i = int(np.flatnonzero(~(np.isfinite(l) & np.isfinite(u)))[0])
        return ValidationReport((Check("finite bounds", False, i, "non-finite bound"),))
    if np.any(l > u):
        i = int(np.flatnonzero(l > u)[0])
        return ValidationReport((Check("l <= u", False, i, f"l={l[i]} > u={u[i]}"),))

    grid = sample_grid(l, u, samples)
    fam = p.functions
    rows = [fam.derivatives(row) for row in grid]
    df = np.array([r[0] for r in rows])
    d2f = np.array([r[1] for r in rows])
    dg = np.array([r[2] for r in rows])
    d2g = np.array([r[3] for r in rows])

    nonfinite = ~(np.isfinite(df) & np.isfinite(d2f) & np.isfinite(dg) & np.isfinite(d2g))
    i = _first_bad(nonfinite)
    checks.append(Check("finite derivatives", i is None, i, "NaN or infinity"))
    if i is not None:
        return ValidationReport(tuple(checks))

    def tol(v):
        return SIGN_TOL * (1.0 + np.max(np.abs(v), axis=0))[None, :]

    def add(name, bad, arr, what):
        j = _first_bad(bad)
        detail = ""
        if j is not None:
            k = int(np.flatnonzero(bad[:, j])[0])
            detail = f"{what}={arr[k, j]:.6g} at x={grid[k, j]:.6g}"
        checks.append(Check(name, j is None, j, detail))

    add("f decreasing", df > tol(df), df, "f'")
    add("g increasing", dg < -tol(dg), dg, "g'")
    add("f convex", d2f < -tol(d2f), d2f, "f''")
    add("g convex", d2g < -tol(d2g), d2g, "g''")
    below_upper = grid < u[None, :]
    add("relaxed constraint binds (f' < 0 on [l, u))", (df >= 0) & below_upper, df, "f'")

    gl = math.fsum(fam.g(l))
    gu = math.fsum(fam.g(u))
    ok = bool(np.isfinite(gl) and np.isfinite(gu) and gl < p.b < gu)
    checks.append(Check("g(l) < b < g(u)", ok, None if ok else -1,
                        f"g(l)={gl:.6g}, b={p.b:.6g}, g(u)={gu:.6g}"))
    return ValidationReport(tuple(checks))


# ----------------------------------------------------------------------------
# Reorientation


def _orientation(p: SeparableProblem, samples: int) -> np.ndarray:
    """+1 for (f decreasing, g increasing), -1 for the mirrored pattern."""
    grid = sample_grid(p.l, p.u, samples)
    df = np.array([p.functions.df(row) for row in grid])
    dg = np.array([p.functions.dg(row) for row in grid])
    tf = SIGN_TOL * (1.0 + np.max(np.abs(df), axis=0))
    tg = SIGN_TOL * (1.0 + np.max(np.abs(dg), axis=0))
    keep = np.all(df <= tf, axis=0) & np.all(dg >= -tg, axis=0)
    flip = np.all(df >= -tf, axis=0) & np.all(dg <= tg, axis=0)
    bad = ~(keep | flip)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NotOrientableError(f"coordinate {i} is not orientable", i)
    return np.where(keep, 1.0, -1.0)


def reorient(
    p: SeparableProblem,
    mask: np.ndarray | None = None,
    samples: int = DEFAULT_SAMPLES,
) -> tuple[SeparableProblem, np.ndarray]:
    """Substitute ``x_i -> -x_i`` where needed so f_i decreases and g_i increases.

    If ``mask`` is given it is applied as-is instead of being detected.
    Returns the new problem and the boolean mask of flipped coordinates.

    Raises:
        NotOrientableError: a coordinate fits neither monotonicity pattern.
    """
    if mask is None:
        mask = _orientation(p, samples) < 0
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return p, mask
    sign = np.where(mask, -1.0, 1.0)
    fam = p.functions
    if isinstance(fam, Flipped):
        sign = sign * fam.sign
        fam = fam.base
    functions = Flipped(fam, sign) if np.any(sign < 0) else fam
    l = np.where(mask, -p.u, p.l)
    u = np.where(mask, -p.l, p.u)
    prev = p.flip if p.flip is not None else np.zeros(p.n, dtype=bool)
    total = prev ^ mask
    return (
        dataclasses.replace(p, functions=functions, l=l, u=u,
                            flip=total if total.any() else None),
        mask,
    )


def map_back(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Map a point of the reoriented problem back to original coordinates."""
    return np.where(mask, -np.asarray(x), x)


# ----------------------------------------------------------------------------
# Solutions and KKT residuals


@dataclasses.dataclass(frozen=True)
class Solution:
    x: np.ndarray
    rho: float
    lam: np.ndarray
    mu: np.ndarray
    objective: float


@dataclasses.dataclass(frozen=True)
class KktResiduals:
    """Residuals of the KKT system at ``(x, lambda, s, mu, rho)``."""

    r_d: np.ndarray
    r_l: np.ndarray
    r_u: np.ndarray
    r_g: float

    def norms(self) -> dict[str, float]:
        return {
            "rd": float(np.max(np.abs(self.r_d))),
            "rl": float(np.max(np.abs(self.r_l))),
            "ru": float(np.max(np.abs(self.r_u))),
            "rg": abs(float(self.r_g)),
        }


def kkt_residuals(
    p: SeparableProblem, x, lam, s, mu, rho: float, ev: Evaluation | None = None
) -> KktResiduals:
    if ev is None:
        ev = evaluate(p, x)
    return KktResiduals(
        r_d=ev.df + rho * ev.dg - lam + mu,
        r_l=(x - p.l) * lam,
        r_u=s * mu,
        r_g=ev.g - p.b,
    )


def relative_kkt_errors(
    p: SeparableProblem, x, lam, s, mu, rho: float, ev: Evaluation | None = None
) -> dict[str, float]:
    """Scaled residual norms shared by both solvers' stopping tests.

    ``rd`` is scaled by ``1 + |f'| + rho |g'| + |lambda| + |mu|`` (inf-norms),
    ``rl`` by ``1 + |x - l| |lambda|``, ``ru`` by ``1 + |s| |mu|`` and ``rg``
    by ``1 + |b|``.
    """
    if ev is None:
        ev = evaluate(p, x)
    r = kkt_residuals(p, x, lam, s, mu, rho, ev)
    inf = lambda v: float(np.max(np.abs(v)))  # noqa: E731
    scale_d = inf(ev.df) + abs(rho) * inf(ev.dg) + inf(lam) + inf(mu)
    scale_l = inf(x - p.l) * inf(lam)
    scale_u = inf(s) * inf(mu)
    nr = r.norms()
    return {
        "rd": float(nr["rd"] / (1.0 + scale_d)),
        "rl": float(nr["rl"] / (1.0 + scale_l)),
        "ru": float(nr["ru"] / (1.0 + scale_u)),
        "rg": float(nr["rg"] / (1.0 + abs(p.b))),
    }


def check_kkt(p: SeparableProblem, sol: Solution, tol: float = 1e-8) -> dict[str, Any]:
    """Verify a returned solution against the KKT system from scratch.

    Returns a dict with the scaled residual norms, sign/bound violations and
    an overall ``passed`` flag.
    """
    x = np.asarray(sol.x, dtype=float)
    s = p.u - x
    width = 1.0 + float(np.max(np.abs(p.u - p.l)))
    errs = relative_kkt_errors(p, x, sol.lam, s, sol.mu, sol.rho)
    bound_violation = float(max(np.max(p.l - x), np.max(x - p.u), 0.0)) / width
    sign_violation = float(max(-np.min(sol.lam), -np.min(sol.mu), 0.0))
    errs["bounds"] = bound_violation
    errs["signs"] = sign_violation / (1.0 + float(np.max(np.abs(sol.lam)))
                                      + float(np.max(np.abs(sol.mu))))
    errs["rho"] = max(-sol.rho, 0.0)
    errs["passed"] = all(v <= tol for k, v in errs.items() if k != "passed")
    return errs


# ----------------------------------------------------------------------------
# Serialization


def _floats(a) -> list[float]:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def problem_to_dict(p: SeparableProblem) -> dict[str, Any]:
    fam = p.functions
    if isinstance(fam, Flipped):
        fam = fam.base
    if fam.kind is None or fam.kind not in _FAMILIES:
        raise TypeError(f"{type(fam).__name__} is not a registered family")
    params = {}
    for k, v in fam.params().items():
        arr = np.asarray(v, dtype=float)
        params[k] = _floats(arr) if arr.ndim == 1 else [_floats(r) for r in arr]
    doc: dict[str, Any] = {
        "format": INSTANCE_FORMAT,
        "class": fam.kind,
        "seed": p.seed,
        "n": p.n,
        "options": dict(p.options),
        "params": params,
        "l": _floats(p.l),
        "u": _floats(p.u),
        "b": p.b,
    }
    if p.flip is not None:
        doc["flip"] = [bool(v) for v in p.flip]
    return doc


def problem_from_dict(doc: dict[str, Any]) -> SeparableProblem:
    if doc.get("format") != INSTANCE_FORMAT:
        raise ValueError(f"unsupported instance format {doc.get('format')!r}")
    kind = doc["class"]
    if kind not in _FAMILIES:
        raise ValueError(f"unknown problem class {kind!r}")
    fam = _FAMILIES[kind].from_params(
        {k: np.asarray(v, dtype=float) for k, v in doc["params"].items()}
    )
    n = int(doc["n"])
    if fam.n != n or len(doc["l"]) != n or len(doc["u"]) != n:
        raise ValueError("instance arrays do not match n")
    flip = doc.get("flip")
    if flip is not None:
        flip = np.asarray(flip, dtype=bool)
        # stored bounds are already reoriented; only the functions need wrapping
        fam = Flipped(fam, np.where(flip, -1.0, 1.0))
    return SeparableProblem(fam, doc["l"], doc["u"], doc["b"], seed=doc.get("seed"),
                            options=dict(doc.get("options", {})), flip=flip)


def dumps_instance(p: SeparableProblem) -> str:
    return json.dumps(problem_to_dict(p), separators=(",", ":"))


def loads_instance(text: str) -> SeparableProblem:
    return problem_from_dict(json.loads(text))


def save_instance(p: SeparableProblem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_instance(p))
        fh.write("\n")


def load_instance(path) -> SeparableProblem:
    with open(path, encoding="utf-8") as fh:
        return loads_instance(fh.read())
