"""Vectorized safeguarded Newton for the 1-D problems min f_i + rho g_i.

Each coordinate is solved independently but all coordinates advance in
lockstep, so one iteration costs a handful of array evaluations.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .model import SeparableFunctions

ARMIJO_SLOPE = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 60
_EPS = np.finfo(float).eps


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class StationaryResult(NamedTuple):
    x: np.ndarray
    iterations: int
    newton_steps: int
    converged: np.ndarray


def stationary_points(
    fam: SeparableFunctions,
    rho: float,
    lo: np.ndarray,
    hi: np.ndarray,
    x0: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> StationaryResult:
    """Find x_i in (lo_i, hi_i) with f_i'(x_i) + rho g_i'(x_i) = 0 for every i.

    Requires phi_i' = f_i' + rho g_i' to change sign on the interval, which
    is enough since phi_i is convex. Newton steps on phi_i are accepted with
    an Armijo sufficient-decrease test; a step leaving the current sign
    bracket is replaced by the bracket midpoint, which also serves as the
    bisection fallback when Armijo backtracking is exhausted.

    A coordinate stops when ``|phi'| <= tol * (1 + |f'| + rho |g'|)`` or its
    bracket has collapsed to a few ulps.
    """
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    k = a.size
    if x0 is None:
        x = 0.5 * (a + b)
    else:
        x = np.array(x0, dtype=float)
        outside = ~((x > a) & (x < b))
        x[outside] = 0.5 * (a[outside] + b[outside])

    converged = np.zeros(k, dtype=bool)
    live = np.arange(k)
    sub = fam
    phi = None
    newton_steps = 0
    it = 0
    for it in range(1, max_iter + 1):
        xs = x[live]
        df, d2f, dg, d2g = sub.derivatives(xs)
        d1 = df + rho * dg
        d2 = d2f + rho * d2g
        as_, bs = a[live], b[live]
        as_ = np.where(d1 < 0, xs, as_)
        bs = np.where(d1 > 0, xs, bs)
        a[live], b[live] = as_, bs
        done = np.abs(d1) <= tol * (1.0 + np.abs(df) + abs(rho) * np.abs(dg))
        done |= (bs - as_) <= 4 * _EPS * np.maximum(np.abs(as_), np.abs(bs))
        if done.any():
            converged[live[done]] = True
            keep = ~done
            live = live[keep]
            if live.size == 0:
                break
            sub = sub.subset(keep)
            if phi is not None:
                phi = phi[keep]
            xs, d1, d2, as_, bs = xs[keep], d1[keep], d2[keep], as_[keep], bs[keep]
        if phi is None:
            fv, gv = sub.values(xs)
            phi = fv + rho * gv

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            trial = xs - d1 / d2
        is_newton = np.isfinite(trial) & (trial > as_) & (trial < bs) & (d2 > 0)
        mid = 0.5 * (as_ + bs)
        trial = np.where(is_newton, trial, mid)
        step = trial - xs

        # Armijo backtracking, only over coordinates that still fail the test
        t = np.ones_like(step)
        new_phi = np.empty_like(phi)
        pending = np.arange(live.size)
        fam_p = sub
        slope = d1 * step
        for _ in range(MAX_BACKTRACKS):
            xt = xs[pending] + t[pending] * step[pending]
            fv, gv = fam_p.values(xt)
            pt = fv + rho * gv
            target = phi[pending] + ARMIJO_SLOPE * t[pending] * slope[pending]
            noise = 64 * _EPS * (1.0 + np.abs(phi[pending]))
            ok = (pt <= target) | (np.abs(slope[pending] * t[pending]) <= noise)
            ok &= np.isfinite(pt)
            new_phi[pending[ok]] = pt[ok]
            if ok.all():
                pending = pending[:0]
                break
            pending = pending[~ok]
            fam_p = fam_p.subset(~ok)
            t[pending] *= BACKTRACK
        if pending.size:
            # exhausted: fall back to bisection midpoint
            t[pending] = 1.0
            step[pending] = mid[pending] - xs[pending]
            fv, gv = sub.subset(pending).values(mid[pending])
            new_phi[pending] = fv + rho * gv
            is_newton[pending] = False
        newton_steps += int(np.count_nonzero(is_newton))
        x[live] = xs + t * step
        phi = new_phi
    return StationaryResult(x, it, newton_steps, converged)


def argmin_unbounded(
    fam: SeparableFunctions,
    rho: float,
    x0: np.ndarray | float = 0.0,
    width: float = 1.0,
    max_expand: int = 200,
    tol: float = 1e-12,
) -> np.ndarray:
    """Minimize f_i + rho g_i over the whole real line for every i.

    A sign bracket for phi_i' is found by doubling outward from ``x0``; the
    root is then located with :func:`stationary_points`.

    Raises:
        ConvergenceError: no sign change was found for some coordinate, or
            the Newton phase did not converge.
    """
    n = fam.n
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n,)).copy()
    w = np.full(n, float(width))
    lo = x0 - w
    hi = x0 + w
    for _ in range(max_expand):
        dlo = fam.df(lo) + rho * fam.dg(lo)
        dhi = fam.df(hi) + rho * fam.dg(hi)
        need_lo = ~(dlo < 0)
        need_hi = ~(dhi > 0)
        if not (need_lo.any() or need_hi.any()):
            break
        w *= 2.0
        lo = np.where(need_lo, x0 - w, lo)
        hi = np.where(need_hi, x0 + w, hi)
    else:
        bad = np.flatnonzero(need_lo | need_hi)
        raise ConvergenceError(
            f"no sign change of the derivative for coordinate {bad[0]}", int(bad[0])
        )
    res = stationary_points(fam, rho, lo, hi, tol=tol)
    if not res.converged.all():
        i = int(np.flatnonzero(~res.converged)[0])
        raise ConvergenceError(f"argmin did not converge for coordinate {i}", i)
    return res.x
