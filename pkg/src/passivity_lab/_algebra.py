"""Per-sample algebraic loop solvers shared by composite operators and loops."""

from __future__ import annotations

import numpy as np

# damped iteration hands over to Newton once the residual grows by this factor
DIVERGE = 1e3


def solve_fixed_point(g, w0, damping=0.5, tol=1e-10, max_iter=200, history=False):
    """Solve ``w = g(w)`` for a small vector ``w``.

    Damped fixed-point iteration first; if it has not met ``tol`` after
    ``max_iter`` steps, or its residual grows by ``DIVERGE``, restart with a finite-difference Newton iteration
    with step halving.  Returns ``(w, residual_norm, converged, trace)``
    where ``trace`` lists residual norms when ``history`` is true.
    """
    w = np.array(w0, dtype=float)
    trace = []

    def resid(v):
        return v - g(v)

    r = resid(w)
    rn = float(np.max(np.abs(r))) if r.size else 0.0
    r0 = rn
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            if history:
                trace.append(rn)
            if rn <= tol:
                return w, rn, True, trace
            w = (1.0 - damping) * w + damping * g(w)
            r = resid(w)
            rn = float(np.max(np.abs(r)))
            if not rn <= DIVERGE * r0 + tol:
                break
    if rn <= tol:
        if history:
            trace.append(rn)
        return w, rn, True, trace

    w = np.array(w0, dtype=float)
    r = resid(w)
    rn = float(np.max(np.abs(r)))
    n = w.size
    for _ in range(max_iter):
        if history:
            trace.append(rn)
        if rn <= tol:
            return w, rn, True, trace
        J = np.empty((n, n))
        for j in range(n):
            h = 1e-7 * max(1.0, abs(w[j]))
            wp = w.copy()
            wp[j] += h
            J[:, j] = (resid(wp) - r) / h
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return w, rn, False, trace
        t = 1.0
        while True:
            wt = w - t * step
            rt = resid(wt)
            rtn = float(np.max(np.abs(rt)))
            if rtn < rn or t < 1e-12:
                break
            t *= 0.5
        if rtn >= rn:
            return w, rn, False, trace
        w, r, rn = wt, rt, rtn
    return w, rn, rn <= tol, trace


def solve_fixed_point_columns(g, W0, damping=0.5, tol=1e-10, max_iter=200):
    """Elementwise scalar version of :func:`solve_fixed_point`.

    ``g(w, idx)`` evaluates the map for the elements ``idx`` of the problem.
    Each element is iterated only until it meets ``tol``, so its result does
    not depend on the other elements.  Returns ``(W, residuals, converged)``.
    """
    W0 = np.asarray(W0, dtype=float)
    w = W0.copy()
    every = np.arange(w.size)
    with np.errstate(over="ignore", invalid="ignore"):
        r = np.abs(w - g(w, every))
        limit = DIVERGE * r + tol
        active = np.flatnonzero(~(r <= tol))
        for _ in range(max_iter):
            active = active[r[active] <= limit[active]]
            if active.size == 0:
                break
            wa = (1.0 - damping) * w[active] + damping * g(w[active], active)
            w[active] = wa
            r[active] = np.abs(wa - g(wa, active))
            active = active[~(r[active] <= tol)]
    active = np.flatnonzero(~(r <= tol))
    if active.size == 0:
        return w, r, r <= tol

    # Newton restart for the stragglers, per element step halving
    live = active
    w[live] = W0[live]
    rs = w[live] - g(w[live], live)
    r[live] = np.abs(rs)
    signed = np.zeros_like(w)
    signed[live] = rs
    for _ in range(max_iter):
        live = live[~(r[live] <= tol)]
        if live.size == 0:
            break
        wl, rl = w[live], signed[live]
        h = 1e-7 * np.maximum(1.0, np.abs(wl))
        dr = ((wl + h) - g(wl + h, live) - rl) / h
        with np.errstate(divide="ignore", invalid="ignore"):
            step = rl / dr
        good = np.isfinite(step) & (dr != 0.0)
        t = np.ones_like(wl)
        done = ~good
        improved = np.zeros(wl.shape, dtype=bool)
        for _ in range(45):
            pending = np.flatnonzero(~done)
            if pending.size == 0:
                break
            trial = wl[pending] - t[pending] * step[pending]
            rt = trial - g(trial, live[pending])
            better = np.abs(rt) < np.abs(rl[pending])
            hit = pending[better]
            w[live[hit]] = trial[better]
            signed[live[hit]] = rt[better]
            r[live[hit]] = np.abs(rt[better])
            improved[hit] = True
            done[hit] = True
            t[pending[~better]] *= 0.5
            done[pending[~better]] = t[pending[~better]] < 1e-12
        # elements that cannot improve stop here
        live = live[improved]
    return w, r, r <= tol
