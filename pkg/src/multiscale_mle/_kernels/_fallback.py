"""Pure numpy implementations of the compiled family kernels.

Same signatures and the same Gaussian draw order as ``_core``; results
agree with the compiled build to rounding.  ``family_stats`` vectorizes
over replicates and loops over time, so it is usable but roughly two
orders of magnitude slower per replicate.
"""
import math

import numpy as np

_BLOCK = 512


def _h_scalar(kind, x):
    if kind == 2:
        return math.sin(x)
    if kind == 3:
        return x
    if kind == 1:
        return 1.0
    return 0.0


def _h_array(kind, x):
    if kind == 2:
        return np.sin(x)
    if kind == 3:
        return x.copy()
    if kind == 1:
        return np.ones_like(x)
    return np.zeros_like(x)


def _ypow(y, p):
    if p == 2:
        return y * y
    r = 1.0 if np.ndim(y) == 0 else np.ones_like(y)
    for _ in range(p):
        r = r * y
    return r


def family_loop(params, theta, x0, y0, eps, delta, dt, dws, dbs):
    """Euler recursion of the family driven by given increments (lists of floats)."""
    kind, p, s, lam, a, b = params
    n = len(dws)
    sqeps = math.sqrt(eps)
    sqdelta = math.sqrt(delta)
    xs = [0.0] * (n + 1)
    ys = [0.0] * (n + 1)
    x, y = float(x0), float(y0)
    xs[0], ys[0] = x, y
    k_fail = -1
    for k in range(n):
        dw = dws[k]
        db = dbs[k]
        c = theta * (_h_scalar(kind, x) * _ypow(y, p))
        f = -lam * y
        x = x + c * dt + sqeps * (s * dw)
        y = y + f * dt / delta + (a * dw + b * db) / sqdelta
        xs[k + 1] = x
        ys[k + 1] = y
        if not (math.isfinite(x) and math.isfinite(y)):
            k_fail = k + 1
            break
    return np.array(xs), np.array(ys), k_fail


def simulate_family(params, theta, x0, y0, eps, delta, dt, n, rng, record_noise):
    z = rng.standard_normal((n, 2))
    z *= math.sqrt(dt)
    xs, ys, k_fail = family_loop(params, theta, x0, y0, eps, delta, dt,
                                 z[:, 0].tolist(), z[:, 1].tolist())
    dwa = z[:, 0].copy() if record_noise else np.empty(0)
    dba = z[:, 1].copy() if record_noise else np.empty(0)
    return xs, ys, dwa, dba, k_fail


def family_stats(params, theta, x0, y0, eps, delta, dt, n, rngs, xbar=None):
    kind, p, s, lam, a, b = params
    nrep = len(rngs)
    sqdt = math.sqrt(dt)
    sqeps = math.sqrt(eps)
    sqdelta = math.sqrt(delta)
    r_eod = math.sqrt(eps / delta)
    r_ed = math.sqrt(eps * delta)
    if xbar is not None:
        xbar = np.ascontiguousarray(xbar, dtype=float)
        if xbar.shape[0] != n + 1:
            raise ValueError("xbar must have n + 1 points")

    x = np.full(nrep, float(x0))
    y = np.full(nrep, float(y0))
    sum_gg = np.zeros(nrep)
    sum_gdx = np.zeros(nrep)
    sum_corr = np.zeros(nrep)
    sup = np.abs(x - xbar[0]) if xbar is not None else np.zeros(nrep)
    failed = np.zeros(nrep, dtype=bool)
    x_fail = np.zeros(nrep)

    k = 0
    while k < n:
        m = min(_BLOCK, n - k)
        z = np.stack([g.standard_normal((m, 2)) for g in rngs], axis=1)
        z *= sqdt
        for j in range(m):
            dw = z[j, :, 0]
            db = z[j, :, 1]
            g = _h_array(kind, x) * _ypow(y, p)
            f = -lam * y
            x1 = x + (theta * g) * dt + sqeps * (s * dw)
            y1 = y + f * dt / delta + (a * dw + b * db) / sqdelta
            live = ~failed
            sum_gg += np.where(live, g * g * dt, 0.0)
            sum_gdx += np.where(live, g * (x1 - x), 0.0)
            sum_corr += np.where(live, g * (r_eod * f * dt - r_ed * (y1 - y)), 0.0)
            x, y = x1, y1
            if xbar is not None:
                np.maximum(sup, np.where(live, np.abs(x - xbar[k + j + 1]), 0.0), out=sup)
            bad = live & ~(np.isfinite(x) & np.isfinite(y))
            if bad.any():
                failed |= bad
                x_fail[bad] = x[bad]
                # keep the batch finite; failed lanes are masked from here on
                x = np.where(failed, 0.0, x)
                y = np.where(failed, 0.0, y)
        k += m

    x_T = np.where(failed, x_fail, x)
    return np.column_stack([sum_gg, sum_gdx, sum_corr, sup, x_T, failed.astype(float)])


def family_limit_path(kind, theta_m, x0, dt, n):
    out = [0.0] * (n + 1)
    x = float(x0)
    out[0] = x
    for k in range(n):
        k1 = theta_m * _h_scalar(kind, x)
        k2 = theta_m * _h_scalar(kind, x + 0.5 * dt * k1)
        k3 = theta_m * _h_scalar(kind, x + 0.5 * dt * k2)
        k4 = theta_m * _h_scalar(kind, x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return np.array(out)
