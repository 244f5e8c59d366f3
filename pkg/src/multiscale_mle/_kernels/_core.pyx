# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the scalar fast/slow family.

The family is

    dX = theta * (h(X) * Y**p) dt + sqrt(eps) * s dW
    dY = -(lam / delta) * Y dt + (a dW + b dB) / sqrt(delta)

with h one of {0, 1, sin, identity}.  Gaussian draws come from the numpy
bit generator of the caller's ``Generator`` in the order (dW_k, dB_k) per
step, which is the same order as ``rng.standard_normal((n, 2))``.
"""
import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_IsValid, PyCapsule_GetPointer
from libc.math cimport sin, sqrt, fabs, isfinite
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal

cnp.import_array()


cdef inline double _h(int kind, double x) noexcept nogil:
    if kind == 2:
        return sin(x)
    elif kind == 3:
        return x
    elif kind == 1:
        return 1.0
    return 0.0


cdef inline double _ypow(double y, int p) noexcept nogil:
    cdef double r
    cdef int i
    if p == 2:
        return y * y
    r = 1.0
    for i in range(p):
        r = r * y
    return r


cdef bitgen_t* _bitgen(object rng) except NULL:
    capsule = rng.bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("invalid bit generator capsule")
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


def simulate_family(tuple params, double theta, double x0, double y0,
                    double eps, double delta, double dt, Py_ssize_t n,
                    object rng, bint record_noise):
    """Euler-Maruyama path of the family. Returns (x, y, dw, db, k_fail).

    ``k_fail`` is -1 on success, otherwise the first step index whose
    state is non-finite (the path is truncated there).
    """
    cdef int kind = params[0]
    cdef int p = params[1]
    cdef double s = params[2], lam = params[3], a = params[4], b = params[5]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.empty(n + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.empty(n + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dwa = np.empty(n if record_noise else 0)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dba = np.empty(n if record_noise else 0)
    cdef double[::1] xv = xa, yv = ya, dwv = dwa, dbv = dba
    cdef double sqdt = sqrt(dt), sqeps = sqrt(eps), sqdelta = sqrt(delta)
    cdef double x = x0, y = y0, dw, db, c, f
    cdef Py_ssize_t k, k_fail = -1
    cdef bitgen_t* bg = _bitgen(rng)

    xv[0] = x
    yv[0] = y
    with rng.bit_generator.lock, nogil:
        for k in range(n):
            dw = sqdt * random_standard_normal(bg)
            db = sqdt * random_standard_normal(bg)
            if record_noise:
                dwv[k] = dw
                dbv[k] = db
            c = theta * (_h(kind, x) * _ypow(y, p))
            f = -lam * y
            x = x + c * dt + sqeps * (s * dw)
            y = y + f * dt / delta + (a * dw + b * db) / sqdelta
            xv[k + 1] = x
            yv[k + 1] = y
            if not (isfinite(x) and isfinite(y)):
                k_fail = k + 1
                break
    return xa, ya, dwa, dba, k_fail


cdef int _stats_one(int kind, int p, double s, double lam, double a, double b,
                    double theta, double x0, double y0, double eps,
                    double delta, double dt, Py_ssize_t n, bitgen_t* bg,
                    const double[::1] xbar, bint use_xbar,
                    double* out) noexcept nogil:
    cdef double sqdt = sqrt(dt), sqeps = sqrt(eps), sqdelta = sqrt(delta)
    cdef double r_eod = sqrt(eps / delta), r_ed = sqrt(eps * delta)
    cdef double x = x0, y = y0, x1, y1, dw, db, g, c, f
    cdef double sum_gg = 0.0, sum_gdx = 0.0, sum_corr = 0.0, sup = 0.0, e
    cdef Py_ssize_t k
    if use_xbar:
        sup = fabs(x - xbar[0])
    for k in range(n):
        dw = sqdt * random_standard_normal(bg)
        db = sqdt * random_standard_normal(bg)
        g = _h(kind, x) * _ypow(y, p)
        c = theta * g
        f = -lam * y
        x1 = x + c * dt + sqeps * (s * dw)
        y1 = y + f * dt / delta + (a * dw + b * db) / sqdelta
        sum_gg += g * g * dt
        sum_gdx += g * (x1 - x)
        sum_corr += g * (r_eod * f * dt - r_ed * (y1 - y))
        x = x1
        y = y1
        if use_xbar:
            e = fabs(x - xbar[k + 1])
            if e > sup:
                sup = e
        if not (isfinite(x) and isfinite(y)):
            out[0] = sum_gg
            out[1] = sum_gdx
            out[2] = sum_corr
            out[3] = sup
            out[4] = x
            return 1
    out[0] = sum_gg
    out[1] = sum_gdx
    out[2] = sum_corr
    out[3] = sup
    out[4] = x
    return 0


def family_stats(tuple params, double theta, double x0, double y0,
                 double eps, double delta, double dt, Py_ssize_t n,
                 list rngs, object xbar=None):
    """Simulate one path per generator and reduce it on the fly.

    Returns an array of shape (len(rngs), 6) with columns
    (sum g^2 dt, sum g dx, sum g (sqrt(eps/delta) f dt - sqrt(eps delta) dy),
    sup_k |x_k - xbar_k|, x_T, failed).
    """
    cdef int kind = params[0]
    cdef int p = params[1]
    cdef double s = params[2], lam = params[3], a = params[4], b = params[5]
    cdef Py_ssize_t r, nrep = len(rngs)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] res = np.zeros((nrep, 6))
    cdef double[:, ::1] rv = res
    cdef double out[5]
    cdef int failed
    cdef bint use_xbar = xbar is not None
    cdef const double[::1] xb
    cdef bitgen_t* bg
    if use_xbar:
        xb = np.ascontiguousarray(xbar, dtype=np.float64)
        if xb.shape[0] != n + 1:
            raise ValueError("xbar must have n + 1 points")
    else:
        xb = np.zeros(1)
    for r in range(nrep):
        rng = rngs[r]
        bg = _bitgen(rng)
        with rng.bit_generator.lock, nogil:
            failed = _stats_one(kind, p, s, lam, a, b, theta, x0, y0, eps,
                                delta, dt, n, bg, xb, use_xbar, out)
        rv[r, 0] = out[0]
        rv[r, 1] = out[1]
        rv[r, 2] = out[2]
        rv[r, 3] = out[3]
        rv[r, 4] = out[4]
        rv[r, 5] = failed
    return res


def family_limit_path(int kind, double theta_m, double x0, double dt, Py_ssize_t n):
    """Classical RK4 for x' = theta_m * h(x) on a uniform grid."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n + 1)
    cdef double[::1] ov = out
    cdef double x = x0, k1, k2, k3, k4
    cdef Py_ssize_t k
    ov[0] = x
    with nogil:
        for k in range(n):
            k1 = theta_m * _h(kind, x)
            k2 = theta_m * _h(kind, x + 0.5 * dt * k1)
            k3 = theta_m * _h(kind, x + 0.5 * dt * k2)
            k4 = theta_m * _h(kind, x + dt * k3)
            x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            ov[k + 1] = x
    return out
