"""Pure-Python reference kernels.

Same algorithms and operation order as ``_ckernels.pyx``; used when the
compiled extension is unavailable or when explicitly selected.
"""

import math

import numpy as np

NAME = "python"

SATURATION, CUBIC, DEADZONE, RELU, NEGFB = 1, 2, 3, 4, 5

# NEGFB wraps a registered map phi in negative feedback through eps:
# y = phi(w - eps*y), params = [phi params (2), eps, phi code]
INNER_TOL = 1e-15
INNER_ITER = 60
DIVERGE = 1e3


def lti_march(Ad, Bd, Cd, Dd, x0, U, return_states=False):
    """March ``x+ = Ad x + Bd u``, ``y = Cd x + Dd u`` over the columns of ``U``."""
    Ad = np.ascontiguousarray(Ad, dtype=float)
    Bd = np.ascontiguousarray(Bd, dtype=float)
    Cd = np.ascontiguousarray(Cd, dtype=float)
    Dd = np.ascontiguousarray(Dd, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    m = Ad.shape[0]
    p = Cd.shape[0]
    n, N = U.shape
    Y = np.empty((p, N))
    X = np.empty((m, N + 1)) if return_states else None
    x = [float(v) for v in np.asarray(x0, dtype=float).reshape(m)]
    A = Ad.tolist()
    B = Bd.tolist()
    C = Cd.tolist()
    D = Dd.tolist()
    cols = U.T.tolist()
    for k in range(N):
        u = cols[k]
        if X is not None:
            X[:, k] = x
        for i in range(p):
            acc = 0.0
            Ci = C[i]
            for j in range(m):
                acc += Ci[j] * x[j]
            Di = D[i]
            for j in range(n):
                acc += Di[j] * u[j]
            Y[i, k] = acc
        xn = []
        for i in range(m):
            acc = 0.0
            Ai = A[i]
            for j in range(m):
                acc += Ai[j] * x[j]
            Bi = B[i]
            for j in range(n):
                acc += Bi[j] * u[j]
            xn.append(acc)
        x = xn
    if X is not None:
        X[:, N] = x
        return Y, X
    return Y


def static_eval(code, p, w):
    if code == SATURATION:
        lvl = p[0]
        return lvl if w > lvl else (-lvl if w < -lvl else w)
    if code == CUBIC:
        return p[0] * w + p[1] * w * w * w
    if code == DEADZONE:
        wd = p[0]
        return w - wd if w > wd else (w + wd if w < -wd else 0.0)
    if code == RELU:
        return w if w > 0.0 else 0.0
    if code == NEGFB:
        return static_eval(int(p[3]), p, _negfb_inner(p, w))
    raise ValueError(f"unknown static map code {code}")


def _negfb_inner(p, w):
    """``v`` with ``v = w - eps*phi(v)``, so that ``phi(v)`` is the wrapped output.

    Newton stopped on the step size (the residual slope is >= 1 for the
    monotone registered maps); the damped solver covers the rest.
    """
    code, eps = int(p[3]), p[2]
    v = w
    for _ in range(INNER_ITER):
        dr = 1.0 + eps * static_slope(code, p, v)
        if dr <= 0.0:
            break
        step = (v - w + eps * static_eval(code, p, v)) / dr
        v -= step
        if abs(step) <= INNER_TOL * max(1.0, abs(v)):
            return v
    v, _, _ = scalar_loop_solve(code, p, w, eps, 0.5, 1e-13 * max(1.0, abs(w)), 200)
    return v


def static_slope(code, p, w):
    if code == SATURATION:
        return 1.0 if -p[0] < w < p[0] else 0.0
    if code == CUBIC:
        return p[0] + 3.0 * p[1] * w * w
    if code == DEADZONE:
        return 1.0 if (w > p[0] or w < -p[0]) else 0.0
    if code == RELU:
        return 1.0 if w > 0.0 else 0.0
    if code == NEGFB:
        g = static_slope(int(p[3]), p, _negfb_inner(p, w))
        return g / (1.0 + p[2] * g)
    raise ValueError(f"unknown static map code {code}")


def scalar_loop_solve(code, p, b, d, damping, tol, max_iter):
    """Solve ``w = b - d*phi(w)``; returns ``(w, |residual|, converged)``.

    Damped fixed-point first, safeguarded Newton if that stalls or diverges.
    """
    if d == 0.0:
        return b, 0.0, True
    w = b
    r = w - b + d * static_eval(code, p, w)
    r0 = abs(r)
    for _ in range(max_iter):
        if abs(r) <= tol:
            return w, abs(r), True
        w = (1.0 - damping) * w + damping * (b - d * static_eval(code, p, w))
        r = w - b + d * static_eval(code, p, w)
        # diverging (or non-finite): hand over to Newton
        if not abs(r) <= DIVERGE * r0 + tol:
            break
    if abs(r) <= tol:
        return w, abs(r), True
    # Newton restart from b
    w = b
    r = w - b + d * static_eval(code, p, w)
    for _ in range(max_iter):
        if abs(r) <= tol:
            return w, abs(r), True
        dr = 1.0 + d * static_slope(code, p, w)
        if dr == 0.0:
            return w, abs(r), False
        step = r / dr
        t = 1.0
        while True:
            wn = w - t * step
            rn = wn - b + d * static_eval(code, p, wn)
            if abs(rn) < abs(r) or t < 1e-12:
                break
            t *= 0.5
        if abs(rn) >= abs(r):
            return w, abs(r), False
        w, r = wn, rn
    return w, abs(r), abs(r) <= tol


def lure_march(Ad, Bd, c, d, orient, code, params, e1, e2, x0, damping, tol, max_iter):
    """Per-sample loop of a SISO discrete linear block with a registered static map.

    ``orient == 0``: linear block is sigma1 (input u1), static map is sigma2.
    ``orient == 1``: static map is sigma1, linear block is sigma2 (input u2).

    Returns ``(u1, u2, y1, y2, resid, fail_index)``; ``fail_index`` is -1 on
    success, otherwise the first sample whose algebraic loop did not converge
    (later samples are left at zero).
    """
    Ad = np.asarray(Ad, dtype=float)
    m = Ad.shape[0]
    A = Ad.tolist()
    B = [float(v) for v in np.asarray(Bd, dtype=float).reshape(m)]
    cr = [float(v) for v in np.asarray(c, dtype=float).reshape(m)]
    p = [float(v) for v in params]
    d = float(d)
    e1 = np.asarray(e1, dtype=float).tolist()
    e2 = np.asarray(e2, dtype=float).tolist()
    N = len(e1)
    u1 = np.zeros(N)
    u2 = np.zeros(N)
    y1 = np.zeros(N)
    y2 = np.zeros(N)
    res = np.zeros(N)
    x = [float(v) for v in np.asarray(x0, dtype=float).reshape(m)]
    fail = -1
    for k in range(N):
        free = 0.0
        for j in range(m):
            free += cr[j] * x[j]
        if orient == 0:
            b = e2[k] + free + d * e1[k]
        else:
            b = e1[k] - free - d * e2[k]
        w, r, ok = scalar_loop_solve(code, p, b, d, damping, tol, max_iter)
        phi = static_eval(code, p, w)
        if orient == 0:
            a2, b2 = w, phi
            a1 = e1[k] - b2
            b1 = free + d * a1
            lin_in = a1
        else:
            a1, b1 = w, phi
            a2 = e2[k] + b1
            b2 = free + d * a2
            lin_in = a2
        res[k] = r
        if not ok:
            fail = k
            break
        u1[k], u2[k], y1[k], y2[k] = a1, a2, b1, b2
        xn = []
        for i in range(m):
            acc = 0.0
            Ai = A[i]
            for j in range(m):
                acc += Ai[j] * x[j]
            acc += B[i] * lin_in
            xn.append(acc)
        x = xn
    return u1, u2, y1, y2, res, fail
