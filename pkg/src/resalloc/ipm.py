"""Primal-dual interior point method with a closed-form Newton direction.

Newton's method is applied to the perturbed KKT system::

    f'(x) + rho g'(x) - lam + mu = 0
    x + s = u
    (x - l) * lam = tau,  s * mu = tau
    g(x) = b

whose Jacobian has the block structure::

    [ H    -I   0   I   g' ] [dx  ]   [r_d]
    [ Lam  Xi   0   0   0  ] [dlam]   [r_l]
    [ 0    0    M   S   0  ] [ds  ] = [r_u]
    [ I    0    I   0   0  ] [dmu ]   [ 0 ]
    [ g'^T 0    0   0   0  ] [drho]   [r_g]

with H = diag(f'' + rho g''), Xi = diag(x - l), Lam = diag(lam),
S = diag(s), M = diag(mu). Eliminating the diagonal blocks leaves a single
scalar equation for drho, so the direction costs O(n).
"""

from __future__ import annotations

import dataclasses
import math
from collections import Counter
from typing import NamedTuple

import numpy as np

from .model import (
    DomainError,
    KktResiduals,
    SeparableProblem,
    Solution,
    relative_kkt_errors,
)
from .results import Deadline, SolveReport, Status, pairwise_sum

_EPS = np.finfo(float).eps


class SingularSystemError(ArithmeticError):
    """g'^T W^-1 g' vanished relative to its operands."""


@dataclasses.dataclass(frozen=True)
class IpmOptions:
    tol: float = 1e-10
    barrier_factor: float = 0.25
    boundary_fraction: float = 0.8
    max_iter: int = 200
    step_cap: float = 1.0
    time_limit: float | None = None
    tau_floor: float = 1e-16

    def __post_init__(self):
        if not 0 < self.barrier_factor < 1 or not 0 < self.boundary_fraction < 1:
            raise ValueError("barrier_factor and boundary_fraction must lie in (0, 1)")
        if not self.tol > 0 or not self.step_cap > 0:
            raise ValueError("tol and step_cap must be positive")


@dataclasses.dataclass
class IpmState:
    x: np.ndarray
    lam: np.ndarray
    s: np.ndarray
    mu: np.ndarray
    rho: float
    tau: float = 0.0

    def duality_gap(self, l: np.ndarray) -> float:
        n = self.x.size
        return (float(np.dot(self.x - l, self.lam)) + float(np.dot(self.s, self.mu))) / (2 * n)


class Direction(NamedTuple):
    dx: np.ndarray
    dlam: np.ndarray
    ds: np.ndarray
    dmu: np.ndarray
    drho: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.dx, self.dlam, self.ds, self.dmu, [self.drho]])

    def scaled(self, alpha: float) -> Direction:
        return Direction(alpha * self.dx, alpha * self.dlam, alpha * self.ds,
                         alpha * self.dmu, alpha * self.drho)


class NewtonWorkspace(NamedTuple):
    w: np.ndarray
    y: np.ndarray
    z: np.ndarray
    eta: float
    gz: float


def initial_state(p: SeparableProblem) -> IpmState:
    """Interval midpoints with multipliers that zero the gradient residual.

    rho is the nonnegative least-squares fit of f' + rho g' = 0 at the
    midpoint; lam and mu split phi = f' + rho g' into its positive and
    negative parts, each shifted by ``0.1 max(|phi|, 1)`` to stay interior.
    """
    x = p.l + 0.5 * (p.u - p.l)
    df, dg = p.functions.df(x), p.functions.dg(x)
    gg = float(np.dot(dg, dg))
    rho = max(0.0, -float(np.dot(df, dg)) / gg) if gg > 0 else 0.0
    phi = df + rho * dg
    shift = 0.1 * np.maximum(np.abs(phi), 1.0)
    st = IpmState(x=x, lam=np.maximum(phi, 0.0) + shift, s=p.u - x,
                  mu=np.maximum(-phi, 0.0) + shift, rho=rho)
    st.tau = st.duality_gap(p.l)
    return st


def compute_residuals(p: SeparableProblem, st: IpmState) -> KktResiduals:
    """Residuals (r_d, r_l, r_u, r_g) of the unperturbed KKT system at ``st``."""
    fam = p.functions
    df, dg = fam.df(st.x), fam.dg(st.x)
    return KktResiduals(
        r_d=df + st.rho * dg - st.lam + st.mu,
        r_l=(st.x - p.l) * st.lam,
        r_u=st.s * st.mu,
        r_g=pairwise_sum(fam.g(st.x)) - p.b,
    )


def closed_form_direction(h, xi, lam, s, mu, dg, r_d, r_l, r_u, r_g):
    """Solve the block system for right-hand side (r_d, r_l, r_u, 0, r_g).

    Written with plain arithmetic operators only so that an operation
    counting wrapper can be passed through it. The quotients Xi^-1 lam,
    S^-1 mu, Xi^-1 r_l and S^-1 r_u are formed once and reused.

    Returns:
        ``(Direction, NewtonWorkspace)``.
    """
    lam_xi = lam / xi
    mu_s = mu / s
    rl_xi = r_l / xi
    ru_s = r_u / s
    w = h + lam_xi + mu_s
    y = r_d + rl_xi - ru_s
    z = dg / w
    zy = z @ y
    gz = dg @ z
    eta = -1.0 / gz
    drho = eta * (r_g - zy)
    dx = y / w - drho * z
    ds = -dx
    dlam = rl_xi - lam_xi * dx
    dmu = ru_s - mu_s * ds
    return Direction(dx, dlam, ds, dmu, drho), NewtonWorkspace(w, y, z, eta, gz)


def _check_singular(dg: np.ndarray, ws: NewtonWorkspace) -> None:
    bound = 1e3 * _EPS * float(np.linalg.norm(dg)) * float(np.linalg.norm(ws.z))
    if not np.isfinite(ws.gz) or abs(ws.gz) <= bound or ws.gz == 0:
        raise SingularSystemError("g'^T W^-1 g' is numerically zero")


def _hessian_diag(p: SeparableProblem, st: IpmState) -> tuple[np.ndarray, np.ndarray]:
    _, d2f, dg, d2g = p.functions.derivatives(st.x)
    return d2f + st.rho * d2g, dg


def solve_newton_system(
    p: SeparableProblem, st: IpmState, rhs: KktResiduals
) -> Direction:
    """Closed-form O(n) solution of the Newton system at ``st``.

    ``rhs`` supplies (r_d, r_l, r_u, r_g); the x + s = u block has zero
    right-hand side. The caller perturbs r_l and r_u by tau.

    Raises:
        SingularSystemError: when every relevant g_i' vanishes.
    """
    h, dg = _hessian_diag(p, st)
    with np.errstate(divide="ignore", invalid="ignore"):
        d, ws = closed_form_direction(h, st.x - p.l, st.lam, st.s, st.mu, dg,
                                      rhs.r_d, rhs.r_l, rhs.r_u, rhs.r_g)
    _check_singular(dg, ws)
    return d


def kkt_matrix(h, xi, lam, s, mu, dg) -> np.ndarray:
    """Dense (4n+1) x (4n+1) Newton matrix, variables ordered (x, lam, s, mu, rho)."""
    n = h.size
    m = 4 * n + 1
    K = np.zeros((m, m))
    ix, il, is_, im = (np.arange(n) + k * n for k in range(4))
    K[ix, ix] = h
    K[ix, il] = -1.0
    K[ix, im] = 1.0
    K[ix, m - 1] = dg
    K[il, ix] = lam
    K[il, il] = xi
    K[is_, is_] = mu
    K[is_, im] = s
    K[im, ix] = 1.0
    K[im, is_] = 1.0
    K[m - 1, ix] = dg
    return K


def dense_direction(h, xi, lam, s, mu, dg, r_d, r_l, r_u, r_g, refine: int = 1) -> Direction:
    """Dense LU solve of the Newton system with ``refine`` steps of iterative
    refinement (the bare factorization loses digits when cond(K) ~ 1e9)."""
    n = h.size
    if n > 2000:
        raise ValueError("dense oracle is limited to n <= 2000")
    K = kkt_matrix(h, xi, lam, s, mu, dg)
    rhs = np.concatenate([r_d, r_l, r_u, np.zeros(n), [r_g]])
    try:
        v = np.linalg.solve(K, rhs)
        for _ in range(refine):
            v = v + np.linalg.solve(K, rhs - K @ v)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    return Direction(v[:n], v[n:2 * n], v[2 * n:3 * n], v[3 * n:4 * n], float(v[-1]))


def dense_kkt_oracle(p: SeparableProblem, st: IpmState, rhs: KktResiduals) -> Direction:
    """Reference direction from an LU factorization (partial pivoting) of the
    explicitly assembled Newton matrix. For testing and timing only."""
    h, dg = _hessian_diag(p, st)
    return dense_direction(h, st.x - p.l, st.lam, st.s, st.mu, dg,
                           rhs.r_d, rhs.r_l, rhs.r_u, rhs.r_g)


def max_feasible_step(st: IpmState, d: Direction, l: np.ndarray) -> float:
    """Largest alpha keeping x + alpha dx >= l, lam + alpha dlam >= 0,
    s + alpha ds >= 0 and mu + alpha dmu >= 0; ``inf`` if nothing decreases.

    ``d`` is the direction as applied (state + alpha d). All four blocks
    are strictly positive, so the ratio test is ``1 / max(-dv / v)``.
    """
    worst = 0.0
    for v, dv in ((st.x - l, d.dx), (st.lam, d.dlam), (st.s, d.ds), (st.mu, d.dmu)):
        worst = max(worst, -float(np.min(dv / v)))
    return math.inf if worst <= 0.0 else 1.0 / worst


def step_length(alpha_max: float, opts: IpmOptions) -> float:
    return min(opts.step_cap, opts.boundary_fraction * alpha_max)


# ----------------------------------------------------------------------------
# Operation counting


class _Counted:
    """Array wrapper tallying elementwise +/-, * and / (negation is free)."""

    __array_ufunc__ = None

    def __init__(self, v, tally: Counter):
        self.v = np.asarray(v, dtype=float)
        self.tally = tally

    def _bin(self, other, fn, kind, reflected=False):
        ov = other.v if isinstance(other, _Counted) else np.asarray(other, dtype=float)
        out = fn(ov, self.v) if reflected else fn(self.v, ov)
        self.tally[kind] += np.size(out)
        return _Counted(out, self.tally)

    def __add__(self, o):
        return self._bin(o, np.add, "add")

    def __radd__(self, o):
        return self._bin(o, np.add, "add", True)

    def __sub__(self, o):
        return self._bin(o, np.subtract, "add")

    def __rsub__(self, o):
        return self._bin(o, np.subtract, "add", True)

    def __mul__(self, o):
        return self._bin(o, np.multiply, "mul")

    def __rmul__(self, o):
        return self._bin(o, np.multiply, "mul", True)

    def __truediv__(self, o):
        return self._bin(o, np.divide, "div")

    def __rtruediv__(self, o):
        return self._bin(o, np.divide, "div", True)

    def __neg__(self):
        return _Counted(-self.v, self.tally)

    def __matmul__(self, o):
        n = self.v.size
        self.tally["mul"] += n
        self.tally["add"] += n - 1
        return _Counted(float(self.v @ o.v), self.tally)


def flop_count_check(n: int, seed: int = 0) -> tuple[int, int, int]:
    """Count (additions/subtractions, multiplications, divisions) performed by
    one closed-form direction solve at dimension ``n``."""
    rng = np.random.default_rng(seed)
    tally: Counter = Counter()
    vecs = [_Counted(rng.uniform(0.5, 2.0, n), tally) for _ in range(9)]
    r_g = _Counted(rng.uniform(-1, 1), tally)
    closed_form_direction(*vecs, r_g)
    return tally["add"], tally["mul"], tally["div"]


# ----------------------------------------------------------------------------
# Solver


def _report(p, st, status, it, deadline, message="", counts=None) -> SolveReport:
    fam = p.functions
    sol = Solution(
        x=st.x.copy(), rho=float(st.rho), lam=st.lam.copy(), mu=st.mu.copy(),
        objective=math.fsum(fam.f(st.x)),
    )
    try:
        res = relative_kkt_errors(p, st.x, st.lam, st.s, st.mu, st.rho)
    except DomainError:
        res = {}
    return SolveReport("ipm", status, sol, it, deadline.elapsed(), res,
                       counts or {}, message)


def ipm_solve(
    p: SeparableProblem, opts: IpmOptions | None = None, *, trace: list | None = None
) -> SolveReport:
    """Solve ``p`` with the primal-dual interior point method.

    Each iteration sets tau to ``barrier_factor`` times the duality gap,
    computes the Newton direction of the tau-perturbed system in closed form
    and takes the step ``min(step_cap, boundary_fraction * alpha_max)``.
    Stops when all four scaled residual norms (see
    :func:`resalloc.model.relative_kkt_errors`) are at most ``opts.tol``.

    If ``trace`` is a list, a copy of every iterate is appended to it.
    """
    opts = opts or IpmOptions()
    deadline = Deadline(opts.time_limit)
    if not (np.all(np.isfinite(p.l)) and np.all(np.isfinite(p.u)) and np.all(p.l < p.u)):
        raise ValueError("interior point method needs finite bounds with l < u")
    fam = p.functions
    l, b, n2 = p.l, p.b, 2 * p.n
    st = initial_state(p)
    tau_min = opts.tau_floor * st.tau
    best_err, best = math.inf, st
    it = 0
    status = Status.ITERATION_LIMIT
    message = ""
    amax = np.max
    while True:
        x, lam, s, mu, rho = st.x, st.lam, st.s, st.mu, st.rho
        df, d2f, dg, d2g = fam.derivatives(x)
        r_g = pairwise_sum(fam.g(x)) - b
        xi = x - l
        r_d = df + rho * dg - lam + mu
        r_l = xi * lam
        r_u = s * mu
        lam_inf, mu_inf = amax(lam), amax(mu)
        worst = max(
            amax(np.abs(r_d)) / (1 + amax(np.abs(df)) + abs(rho) * amax(np.abs(dg))
                                 + lam_inf + mu_inf),
            amax(r_l) / (1 + amax(xi) * lam_inf),
            amax(r_u) / (1 + amax(s) * mu_inf),
            abs(r_g) / (1 + abs(b)),
        )
        if trace is not None:
            trace.append(dataclasses.replace(st, x=x.copy(), lam=lam.copy(),
                                             s=s.copy(), mu=mu.copy()))
        if not math.isfinite(worst):
            status, message = Status.DOMAIN_ERROR, "non-finite residual"
            break
        if worst < best_err:
            best_err, best = worst, st
        if worst <= opts.tol:
            status = Status.CONVERGED
            break
        if it >= opts.max_iter:
            break
        if deadline.expired():
            status = Status.TIMEOUT
            break

        gap = (float(np.sum(r_l)) + float(np.sum(r_u))) / n2
        tau = max(opts.barrier_factor * gap, tau_min)
        with np.errstate(divide="ignore", invalid="ignore"):
            d, ws = closed_form_direction(d2f + rho * d2g, xi, lam, s, mu, dg, r_d,
                                          r_l - tau, r_u - tau, r_g)
        try:
            _check_singular(dg, ws)
        except SingularSystemError as exc:
            status, message = Status.SINGULAR, str(exc)
            break
        if not math.isfinite(d.drho):
            status, message = Status.DOMAIN_ERROR, "non-finite search direction"
            break
        # the step applied is -d; ratio test on each positive block
        worst_ratio = max(amax(d.dx / xi), amax(d.dlam / lam), amax(d.ds / s),
                          amax(d.dmu / mu), 0.0)
        if not math.isfinite(worst_ratio):
            status, message = Status.DOMAIN_ERROR, "non-finite search direction"
            break
        alpha = step_length(math.inf if worst_ratio == 0.0 else 1.0 / worst_ratio, opts)
        st = IpmState(
            x=x - alpha * d.dx,
            lam=lam - alpha * d.dlam,
            s=s - alpha * d.ds,
            mu=mu - alpha * d.dmu,
            rho=rho - alpha * d.drho,
            tau=tau,
        )
        it += 1

    if status is not Status.CONVERGED:
        st = best
    return _report(p, st, status, it, deadline, message)
