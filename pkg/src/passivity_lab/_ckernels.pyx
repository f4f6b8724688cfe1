# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: LTI sample marching and SISO Lur'e loop marching.

Mirrors ``_pykernels`` operation for operation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

NAME = "cython"

cdef enum:
    SATURATION = 1
    CUBIC = 2
    DEADZONE = 3
    RELU = 4
    NEGFB = 5

cdef double INNER_TOL = 1e-15
cdef int INNER_ITER = 60
cdef double DIVERGE = 1e3

def lti_march(Ad, Bd, Cd, Dd, x0, U, bint return_states=False):
    cdef const double[:, ::1] A = np.ascontiguousarray(Ad, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(Bd, dtype=np.float64)
    cdef const double[:, ::1] C = np.ascontiguousarray(Cd, dtype=np.float64)
    cdef const double[:, ::1] D = np.ascontiguousarray(Dd, dtype=np.float64)
    cdef const double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t p = C.shape[0]
    cdef Py_ssize_t n = Uv.shape[0]
    cdef Py_ssize_t N = Uv.shape[1]
    Y_arr = np.empty((p, N), dtype=np.float64)
    cdef double[:, ::1] Y = Y_arr
    X_arr = np.empty((m, N + 1), dtype=np.float64) if return_states else np.empty((m, 1))
    cdef double[:, ::1] X = X_arr
    cdef double[::1] x = np.array(np.asarray(x0, dtype=np.float64).reshape(m), copy=True)
    cdef double[::1] xn = np.empty(m, dtype=np.float64)
    cdef Py_ssize_t k, i, j
    cdef double acc
    with nogil:
        for k in range(N):
            if return_states:
                for i in range(m):
                    X[i, k] = x[i]
            for i in range(p):
                acc = 0.0
                for j in range(m):
                    acc += C[i, j] * x[j]
                for j in range(n):
                    acc += D[i, j] * Uv[j, k]
                Y[i, k] = acc
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    acc += A[i, j] * x[j]
                for j in range(n):
                    acc += B[i, j] * Uv[j, k]
                xn[i] = acc
            for i in range(m):
                x[i] = xn[i]
        if return_states:
            for i in range(m):
                X[i, N] = x[i]
    if return_states:
        return Y_arr, X_arr
    return Y_arr


cdef double _negfb_inner(double* p, double w) noexcept nogil:
    # Newton stopped on the step size, damped solver as fallback
    cdef int code = <int>p[3]
    cdef double eps = p[2]
    cdef double v = w, dr, step, r
    cdef int it
    for it in range(INNER_ITER):
        dr = 1.0 + eps * _slope(code, p, v)
        if dr <= 0.0:
            break
        step = (v - w + eps * _eval(code, p, v)) / dr
        v -= step
        if fabs(step) <= INNER_TOL * (fabs(v) if fabs(v) > 1.0 else 1.0):
            return v
    _solve(code, p, w, eps, 0.5, 1e-13 * (fabs(w) if fabs(w) > 1.0 else 1.0), 200, &v, &r)
    return v


cdef double _eval(int code, double* p, double w) noexcept nogil:
    if code == NEGFB:
        return _eval(<int>p[3], p, _negfb_inner(p, w))
    if code == SATURATION:
        if w > p[0]:
            return p[0]
        if w < -p[0]:
            return -p[0]
        return w
    if code == CUBIC:
        return p[0] * w + p[1] * w * w * w
    if code == DEADZONE:
        if w > p[0]:
            return w - p[0]
        if w < -p[0]:
            return w + p[0]
        return 0.0
    if w > 0.0:
        return w
    return 0.0


cdef double _slope(int code, double* p, double w) noexcept nogil:
    cdef double g
    if code == NEGFB:
        g = _slope(<int>p[3], p, _negfb_inner(p, w))
        return g / (1.0 + p[2] * g)
    if code == SATURATION:
        return 1.0 if (-p[0] < w and w < p[0]) else 0.0
    if code == CUBIC:
        return p[0] + 3.0 * p[1] * w * w
    if code == DEADZONE:
        return 1.0 if (w > p[0] or w < -p[0]) else 0.0
    return 1.0 if w > 0.0 else 0.0


cdef int _solve(int code, double* p, double b, double d, double damping, double tol,
                int max_iter, double* w_out, double* r_out) noexcept nogil:
    cdef double w, r, r0, dr, step, t, wn, rn
    cdef int it
    if d == 0.0:
        w_out[0] = b
        r_out[0] = 0.0
        return 1
    w = b
    r = w - b + d * _eval(code, p, w)
    r0 = fabs(r)
    for it in range(max_iter):
        if fabs(r) <= tol:
            w_out[0] = w
            r_out[0] = fabs(r)
            return 1
        w = (1.0 - damping) * w + damping * (b - d * _eval(code, p, w))
        r = w - b + d * _eval(code, p, w)
        # diverging (or non-finite): hand over to Newton
        if not (fabs(r) <= DIVERGE * r0 + tol):
            break
    if fabs(r) <= tol:
        w_out[0] = w
        r_out[0] = fabs(r)
        return 1
    w = b
    r = w - b + d * _eval(code, p, w)
    for it in range(max_iter):
        if fabs(r) <= tol:
            w_out[0] = w
            r_out[0] = fabs(r)
            return 1
        dr = 1.0 + d * _slope(code, p, w)
        if dr == 0.0:
            w_out[0] = w
            r_out[0] = fabs(r)
            return 0
        step = r / dr
        t = 1.0
        while True:
            wn = w - t * step
            rn = wn - b + d * _eval(code, p, wn)
            if fabs(rn) < fabs(r) or t < 1e-12:
                break
            t *= 0.5
        if fabs(rn) >= fabs(r):
            w_out[0] = w
            r_out[0] = fabs(r)
            return 0
        w = wn
        r = rn
    w_out[0] = w
    r_out[0] = fabs(r)
    return 1 if fabs(r) <= tol else 0


def scalar_loop_solve(int code, params, double b, double d, double damping, double tol,
                      int max_iter):
    cdef double p[4]
    cdef double w, r
    cdef int i, ok
    for i in range(4):
        p[i] = params[i] if i < len(params) else 0.0
    ok = _solve(code, p, b, d, damping, tol, max_iter, &w, &r)
    return w, r, bool(ok)


def lure_march(Ad, Bd, c, double d, int orient, int code, params, e1, e2, x0,
               double damping, double tol, int max_iter):
    cdef const double[:, ::1] A = np.ascontiguousarray(Ad, dtype=np.float64)
    cdef Py_ssize_t m = A.shape[0]
    cdef const double[::1] B = np.ascontiguousarray(np.asarray(Bd, dtype=np.float64).reshape(m))
    cdef const double[::1] cr = np.ascontiguousarray(np.asarray(c, dtype=np.float64).reshape(m))
    cdef const double[::1] E1 = np.ascontiguousarray(e1, dtype=np.float64)
    cdef const double[::1] E2 = np.ascontiguousarray(e2, dtype=np.float64)
    cdef Py_ssize_t N = E1.shape[0]
    u1_a = np.zeros(N)
    u2_a = np.zeros(N)
    y1_a = np.zeros(N)
    y2_a = np.zeros(N)
    res_a = np.zeros(N)
    cdef double[::1] u1 = u1_a
    cdef double[::1] u2 = u2_a
    cdef double[::1] y1 = y1_a
    cdef double[::1] y2 = y2_a
    cdef double[::1] res = res_a
    cdef double[::1] x = np.array(np.asarray(x0, dtype=np.float64).reshape(m), copy=True)
    cdef double[::1] xn = np.empty(m, dtype=np.float64)
    cdef double p[4]
    cdef Py_ssize_t k, i, j
    cdef Py_ssize_t fail = -1
    cdef double free, b, w, r, phi, a1, a2, b1, b2, lin_in, acc
    cdef int ok
    for i in range(4):
        p[i] = params[i] if i < len(params) else 0.0
    with nogil:
        for k in range(N):
            free = 0.0
            for j in range(m):
                free += cr[j] * x[j]
            if orient == 0:
                b = E2[k] + free + d * E1[k]
            else:
                b = E1[k] - free - d * E2[k]
            ok = _solve(code, p, b, d, damping, tol, max_iter, &w, &r)
            phi = _eval(code, p, w)
            if orient == 0:
                a2 = w
                b2 = phi
                a1 = E1[k] - b2
                b1 = free + d * a1
                lin_in = a1
            else:
                a1 = w
                b1 = phi
                a2 = E2[k] + b1
                b2 = free + d * a2
                lin_in = a2
            res[k] = r
            if not ok:
                fail = k
                break
            u1[k] = a1
            u2[k] = a2
            y1[k] = b1
            y2[k] = b2
            for i in range(m):
                acc = 0.0
                for j in range(m):
                    acc += A[i, j] * x[j]
                acc += B[i] * lin_in
                xn[i] = acc
            for i in range(m):
                x[i] = xn[i]
    return u1_a, u2_a, y1_a, y2_a, res_a, int(fail)
