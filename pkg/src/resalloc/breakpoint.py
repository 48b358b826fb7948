"""General breakpoint search on the Lagrangian dual.

For a multiplier rho the separable subproblem min f(x) + rho g(x) over the
box has coordinate minimizers x_i(rho), and the dual derivative
D(rho) = g(x(rho)) - b is nonincreasing. Coordinate i sits at u_i for
rho <= rho_minus_i = -f_i'(u_i)/g_i'(u_i) and at l_i for rho >= rho_plus_i =
-f_i'(l_i)/g_i'(l_i), so the root of D is located by a binary search over
these 2n breakpoints followed by a Newton solve between the last two.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from typing import NamedTuple

import numpy as np

from .model import SeparableFunctions, SeparableProblem, Solution, relative_kkt_errors
from .results import Deadline, SolveReport, Status, pairwise_sum
from .scalar import ARMIJO_SLOPE, BACKTRACK, stationary_points


_JOINT_BACKTRACKS = 30


class AssumptionViolation(ValueError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class SubproblemError(RuntimeError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class Kind(enum.Enum):
    LOWER = "lower"  # rho_plus: x_i = l_i for rho >= value
    UPPER = "upper"  # rho_minus: x_i = u_i for rho <= value


@dataclasses.dataclass(frozen=True, order=True)
class Breakpoint:
    value: float
    index: int
    kind: Kind = dataclasses.field(compare=False)


@dataclasses.dataclass(frozen=True)
class BreakpointOptions:
    tol: float = 1e-12
    root_tol: float = 1e-13
    max_interp_iter: int = 100
    time_limit: float | None = None
    seed: int = 0


def breakpoint_values(p: SeparableProblem) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(rho_plus, rho_minus)`` for every coordinate.

    rho_plus_i is +inf where g_i'(l_i) = 0.

    Raises:
        AssumptionViolation: if g_i'(u_i) <= 0, g_i'(l_i) < 0, or the ordering
            0 <= rho_minus_i <= rho_plus_i fails beyond rounding.
    """
    fam = p.functions
    dfl, dgl = fam.df(np.array(p.l)), fam.dg(np.array(p.l))
    dfu, dgu = fam.df(np.array(p.u)), fam.dg(np.array(p.u))
    if np.any(~(dgu > 0)):
        i = int(np.flatnonzero(~(dgu > 0))[0])
        raise AssumptionViolation(f"g' is not positive at u for coordinate {i}", i)
    if np.any(dgl < 0):
        i = int(np.flatnonzero(dgl < 0)[0])
        raise AssumptionViolation(f"g' is negative at l for coordinate {i}", i)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho_plus = np.where(dgl > 0, -dfl / np.where(dgl > 0, dgl, 1.0), np.inf)
    rho_minus = -dfu / dgu
    # f'(u) may be a rounding-level positive when u is a computed argmin
    slack = 1e-9 * ((1.0 + np.abs(dfu)) / dgu + np.abs(rho_minus))
    bad = (rho_minus < -slack) | (rho_minus > rho_plus + slack)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise AssumptionViolation(
            f"breakpoints out of order for coordinate {i}: "
            f"rho- = {rho_minus[i]:.6g}, rho+ = {rho_plus[i]:.6g}", i)
    rho_minus = np.clip(rho_minus, 0.0, None)
    rho_minus = np.minimum(rho_minus, rho_plus)
    return rho_plus, rho_minus


def compute_breakpoints(p: SeparableProblem) -> list[Breakpoint]:
    rho_plus, rho_minus = breakpoint_values(p)
    out = []
    for i in range(p.n):
        out.append(Breakpoint(float(rho_plus[i]), i, Kind.LOWER))
        out.append(Breakpoint(float(rho_minus[i]), i, Kind.UPPER))
    return out


def median_value(values: np.ndarray) -> float:
    """Lower median by introselect (``np.partition``); no full sort."""
    k = (values.size - 1) // 2
    return float(np.partition(values, k)[k])


@dataclasses.dataclass
class Bracket:
    """Search state: the bracket and the coordinates still undecided.

    ``x`` is full length; fixed coordinates hold their endpoint and active
    ones the last interior minimizer (warm start).
    """

    rho_minus: float
    rho_plus: float
    d_minus: float
    d_plus: float
    x: np.ndarray
    active: np.ndarray
    fixed_g: list[float]
    fam: SeparableFunctions
    rp: np.ndarray
    rm: np.ndarray
    l: np.ndarray
    u: np.ndarray

    @classmethod
    def initial(cls, p: SeparableProblem) -> Bracket:
        rho_plus, rho_minus = breakpoint_values(p)
        g_l = pairwise_sum(p.functions.g(np.array(p.l)))
        g_u = pairwise_sum(p.functions.g(np.array(p.u)))
        return cls(
            rho_minus=0.0, rho_plus=math.inf, d_minus=g_u - p.b, d_plus=g_l - p.b,
            x=0.5 * (p.l + p.u), active=np.arange(p.n), fixed_g=[],
            fam=p.functions, rp=rho_plus, rm=rho_minus,
            l=np.array(p.l), u=np.array(p.u),
        )

    @property
    def x_active(self) -> np.ndarray:
        return self.x[self.active]

    def inner_breakpoints(self) -> np.ndarray:
        lo, hi = self.rho_minus, self.rho_plus
        rm, rp = self.rm, self.rp
        return np.concatenate([rm[(rm > lo) & (rm < hi)], rp[(rp > lo) & (rp < hi)]])

    def fixed_sum(self) -> float:
        return math.fsum(self.fixed_g)

    def shrink(self, p: SeparableProblem) -> int:
        """Permanently fix coordinates decided by the current bracket."""
        at_l = self.rp <= self.rho_minus
        at_u = self.rm >= self.rho_plus
        fixed = at_l | at_u
        if not fixed.any():
            return 0
        idx = self.active
        xl = self.l[at_l]
        xu = self.u[at_u]
        self.x[idx[at_l]] = xl
        self.x[idx[at_u]] = xu
        if at_l.any():
            self.fixed_g.append(pairwise_sum(self.fam.subset(at_l).g(xl)))
        if at_u.any():
            self.fixed_g.append(pairwise_sum(self.fam.subset(at_u).g(xu)))
        keep = ~fixed
        self.active = idx[keep]
        self.fam = self.fam.subset(keep)
        self.rp, self.rm = self.rp[keep], self.rm[keep]
        self.l, self.u = self.l[keep], self.u[keep]
        return int(np.count_nonzero(fixed))


class DualValue(NamedTuple):
    value: float
    x: np.ndarray  # minimizers over the active coordinates
    newton_steps: int


def scalar_subproblem(
    pair, rho: float, lo: float, hi: float, x0: float | None = None, tol: float = 1e-12
) -> float:
    """Minimizer of f + rho g on (lo, hi) for a single coordinate.

    Requires f'(lo) + rho g'(lo) < 0 < f'(hi) + rho g'(hi).
    """
    from .model import CoordinateFunctionPair, PairList

    fam = PairList([pair]) if isinstance(pair, CoordinateFunctionPair) else pair
    a, b = np.array([lo], dtype=float), np.array([hi], dtype=float)
    d_lo = fam.df(a) + rho * fam.dg(a)
    d_hi = fam.df(b) + rho * fam.dg(b)
    if not (d_lo[0] < 0 < d_hi[0]):
        raise ValueError("no interior critical point: derivative does not change sign")
    res = stationary_points(fam, rho, a, b, None if x0 is None else np.array([x0]), tol=tol)
    if not res.converged[0]:
        raise SubproblemError("scalar subproblem did not converge", 0)
    return float(res.x[0])


def dual_derivative(
    p: SeparableProblem, rho: float, br: Bracket, tol: float = 1e-12
) -> DualValue:
    """D(rho) = -b + sum_i g_i(x_i(rho)), fixing x_i at l_i for rho >= rho_plus_i
    and at u_i for rho <= rho_minus_i and solving the rest as interior
    critical points warm-started from ``br.x``."""
    xa = br.x[br.active].copy()
    at_l = rho >= br.rp
    at_u = (rho <= br.rm) & ~at_l
    xa[at_l] = br.l[at_l]
    xa[at_u] = br.u[at_u]
    inner = ~(at_l | at_u)
    steps = 0
    if inner.any():
        res = stationary_points(br.fam.subset(inner), rho, br.l[inner], br.u[inner],
                                x0=xa[inner], tol=tol)
        if not res.converged.all():
            j = int(br.active[np.flatnonzero(inner)[np.flatnonzero(~res.converged)[0]]])
            raise SubproblemError(f"subproblem did not converge for coordinate {j}", j)
        xa[inner] = res.x
        steps = res.newton_steps
    value = br.fixed_sum() + pairwise_sum(br.fam.g(xa)) - p.b
    return DualValue(value, xa, steps)


class Interpolation(NamedTuple):
    rho: float
    x: np.ndarray
    iterations: int
    fallback: bool


def _arrow_solve(h, dg, F, F0):
    """Solve [diag(h) dg; dg^T 0] [dx; drho] = -[F; F0] in O(n)."""
    hinv_dg = dg / h
    denom = float(np.dot(dg, hinv_dg))
    drho = (F0 - float(np.dot(hinv_dg, F))) / denom
    dx = -(F + dg * drho) / h
    return dx, drho


def interpolate_final(
    p: SeparableProblem,
    br: Bracket,
    opts: BreakpointOptions | None = None,
    deadline: Deadline | None = None,
) -> Interpolation:
    """Solve f_i'(x_i) + rho g_i'(x_i) = 0 (i active) and
    sum_{i active} g_i(x_i) = b - sum_{fixed} g_i(x_i) for (x, rho) jointly.

    Newton's method on this arrow-shaped system, with Armijo backtracking
    on half the squared residual norm and iterates kept strictly inside the
    bounds and the bracket. Falls back to bisection on rho if Newton stalls.

    Raises:
        AssumptionViolation: if no coordinate is active but the fixed ones do
            not exhaust b.
    """
    opts = opts or BreakpointOptions()
    lo, hi = br.rho_minus, br.rho_plus
    b_hat = p.b - br.fixed_sum()
    scale_b = 1.0 + abs(p.b)
    if br.active.size == 0:
        if abs(b_hat) > 1e-9 * scale_b:
            raise AssumptionViolation(
                f"all coordinates fixed but residual resource {b_hat:.6g} remains")
        rho = 0.5 * (lo + hi) if math.isfinite(hi) else lo
        return Interpolation(rho, np.empty(0), 0, False)

    fam, l, u = br.fam, br.l, br.u
    x = br.x[br.active].copy()
    inside = (x > l) & (x < u)
    x[~inside] = 0.5 * (l + u)[~inside]
    if math.isfinite(hi):
        dm, dp = br.d_minus, br.d_plus
        rho = lo + dm * (hi - lo) / (dm - dp) if dm > dp else 0.5 * (lo + hi)
    else:
        rho = max(2.0 * lo, lo + 1.0)

    def residual(x, rho):
        df, d2f, dg, d2g = fam.derivatives(x)
        F = df + rho * dg
        F0 = pairwise_sum(fam.g(x)) - b_hat
        return F, F0, df, d2f, dg, d2g

    F, F0, df, d2f, dg, d2g = residual(x, rho)
    merit = 0.5 * (float(np.dot(F, F)) + F0 * F0)
    it = 0
    stalls = 0
    converged = False
    for it in range(1, opts.max_interp_iter + 1):
        small = np.abs(F) <= opts.tol * (1.0 + np.abs(df) + abs(rho) * np.abs(dg))
        if small.all() and abs(F0) <= opts.tol * scale_b:
            converged = True
            break
        if deadline is not None and deadline.expired():
            break
        h = np.maximum(d2f + rho * d2g, np.finfo(float).tiny)
        dx, drho = _arrow_solve(h, dg, F, F0)
        if not (math.isfinite(drho) and np.all(np.isfinite(dx))):
            break
        t_max = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            room = np.where(dx < 0, (x - l) / -dx, np.where(dx > 0, (u - x) / dx, np.inf))
        t_max = min(t_max, 0.995 * float(np.min(room)))
        t = t_max
        accepted = False
        for _ in range(_JOINT_BACKTRACKS):
            # x is damped along the step; rho is projected into the bracket
            xt, rt = x + t * dx, rho + t * drho
            if rt <= lo:
                rt = rho - 0.995 * (rho - lo)
            elif rt >= hi:
                rt = rho + 0.995 * (hi - rho)
            Ft, F0t, dft, d2ft, dgt, d2gt = residual(xt, rt)
            mt = 0.5 * (float(np.dot(Ft, Ft)) + F0t * F0t)
            if math.isfinite(mt) and mt <= (1.0 - 2.0 * ARMIJO_SLOPE * t) * merit:
                accepted = True
                break
            t *= BACKTRACK
        if not accepted:
            break
        # short steps mean the joint model is poor; hand over to the rho search
        stalls = stalls + 1 if t < 1e-2 else 0
        if stalls >= 3:
            break
        x, rho = xt, rt
        F, F0, df, d2f, dg, d2g = Ft, F0t, dft, d2ft, dgt, d2gt
        merit = mt

    if converged:
        return Interpolation(rho, x, it, False)
    rho, x, n_bis = _bisect_rho(br, b_hat, opts, deadline)
    return Interpolation(rho, x, it + n_bis, True)


def _bisect_rho(br: Bracket, b_hat: float, opts: BreakpointOptions, deadline):
    """Safeguarded Newton on rho over the active coordinates.

    Each step solves every active coordinate for its interior minimizer and
    uses D'(rho) = -sum g_i'^2 / (f_i'' + rho g_i''). A Newton point that
    leaves the bracket, or fails to halve |D|, is replaced by an
    Illinois-modified regula falsi point.
    """
    fam, l, u = br.fam, br.l, br.u
    lo, hi = br.rho_minus, br.rho_plus
    x = br.x[br.active].copy()
    tol_d = opts.tol * (1.0 + abs(b_hat))

    def excess(rho, x0):
        res = stationary_points(fam, rho, l, u, x0=x0, tol=opts.tol)
        _, d2f, dg, d2g = fam.derivatives(res.x)
        with np.errstate(divide="ignore", over="ignore"):
            slope = -float(np.sum(dg * dg / (d2f + rho * d2g)))
        return pairwise_sum(fam.g(res.x)) - b_hat, slope, res.x

    # cached end values are exact: fixed coordinates took the same values there
    d_lo, d_hi = br.d_minus, br.d_plus
    if not math.isfinite(hi):
        hi = max(2.0 * lo, lo + 1.0)
        d_hi, _, _ = excess(hi, x)
        while d_hi > 0:
            lo, d_lo = hi, d_hi
            hi *= 2.0
            d_hi, _, _ = excess(hi, x)
    rho = hi - d_hi * (hi - lo) / (d_hi - d_lo) if d_lo != d_hi else 0.5 * (lo + hi)
    side = 0
    prev = math.inf
    k = 0
    for k in range(1, 400):
        if not lo < rho < hi:
            rho = 0.5 * (lo + hi)
        d, slope, x = excess(rho, x)
        if abs(d) <= tol_d or hi - lo <= 4e-16 * max(abs(hi), 1.0):
            return rho, x, k
        if d > 0:
            lo, d_lo = rho, d
            if side == 1:
                d_hi *= 0.5
            side = 1
        else:
            hi, d_hi = rho, d
            if side == -1:
                d_lo *= 0.5
            side = -1
        if deadline is not None and deadline.expired():
            break
        cand = rho - d / slope if slope < 0 and math.isfinite(slope) else math.nan
        if abs(d) <= 0.5 * prev and lo < cand < hi:
            rho = cand
        else:
            rho = hi - d_hi * (hi - lo) / (d_hi - d_lo) if d_lo != d_hi else 0.5 * (lo + hi)
        prev = abs(d)
    return rho, x, k


def _finish(p, x, rho, status, it, deadline, counts, message=""):
    fam = p.functions
    phi = fam.df(x) + rho * fam.dg(x)
    # multipliers only for bounds that hold; interior rounding stays in r_d
    lam = np.where(x <= p.l, np.maximum(phi, 0.0), 0.0)
    mu = np.where(x >= p.u, np.maximum(-phi, 0.0), 0.0)
    sol = Solution(x=x, rho=float(rho), lam=lam, mu=mu, objective=math.fsum(fam.f(x)))
    res = relative_kkt_errors(p, x, lam, p.u - x, mu, rho)
    return SolveReport("breakpoint", status, sol, it, deadline.elapsed(), res, counts, message)


def breakpoint_solve(
    p: SeparableProblem,
    opts: BreakpointOptions | None = None,
    *,
    trace: list | None = None,
) -> SolveReport:
    """Solve ``p`` by median breakpoint search plus final interpolation.

    Each round evaluates D at the lower median of the breakpoints strictly
    inside the bracket, moves one bracket end to it, and fixes every
    coordinate whose value is then decided. If ``trace`` is a list, the
    tuple ``(rho_minus, rho_plus, d_minus, d_plus, n_fixed)`` is appended
    after every round.
    """
    opts = opts or BreakpointOptions()
    deadline = Deadline(opts.time_limit)
    br = Bracket.initial(p)
    counts = {"dual_evaluations": 0, "subproblem_newton_steps": 0,
              "coordinates_fixed_by_search": 0, "interpolation_iterations": 0}

    def partial(message):
        counts["active_coordinates"] = int(br.active.size)
        return SolveReport("breakpoint", Status.TIMEOUT, None, counts["dual_evaluations"],
                           deadline.elapsed(), {}, counts,
                           f"{message}; bracket [{br.rho_minus:.6g}, {br.rho_plus:.6g}]")

    while True:
        if deadline.expired():
            return partial("time limit reached during bracketing")
        cand = br.inner_breakpoints()
        if cand.size == 0:
            break
        rho = median_value(cand)
        dv = dual_derivative(p, rho, br, tol=opts.tol)
        counts["dual_evaluations"] += 1
        counts["subproblem_newton_steps"] += dv.newton_steps
        if abs(dv.value) <= opts.root_tol * (1.0 + abs(p.b)):
            x = br.x.copy()
            x[br.active] = dv.x
            return _finish(p, x, rho, Status.CONVERGED, counts["dual_evaluations"],
                           deadline, counts, "root at a breakpoint")
        interior = (rho > br.rm) & (rho < br.rp)
        br.x[br.active[interior]] = dv.x[interior]
        if dv.value > 0:
            br.rho_minus, br.d_minus = rho, dv.value
        else:
            br.rho_plus, br.d_plus = rho, dv.value
        counts["coordinates_fixed_by_search"] += br.shrink(p)
        if trace is not None:
            trace.append((br.rho_minus, br.rho_plus, br.d_minus, br.d_plus,
                          p.n - int(br.active.size)))

    if deadline.expired():
        return partial("time limit reached before interpolation")
    interp = interpolate_final(p, br, opts, deadline)
    counts["interpolation_iterations"] = interp.iterations
    x = br.x.copy()
    x[br.active] = interp.x
    status = Status.CONVERGED
    message = "bisection fallback" if interp.fallback else ""
    if deadline.expired() and interp.fallback:
        status = Status.TIMEOUT
    return _finish(p, x, interp.rho, status, counts["dual_evaluations"], deadline,
                   counts, message)
