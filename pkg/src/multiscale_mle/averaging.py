"""Averages against the fast invariant law and the averaged (limit) slow path."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import NonFiniteState, StderrTooLarge
from .model import MultiscaleModel
from .simulate import TimeGrid, iter_frozen_chains


@dataclass(frozen=True)
class InvariantAvgOptions:
    """How to integrate against mu_x.

    ``method="ergodic"`` time-averages ``n_chains`` frozen-x chains over
    [burn_in, horizon]; ``"quadrature"`` uses the model's
    ``fast_invariant_law`` rule; ``"auto"`` prefers quadrature when the
    model has one.
    """

    burn_in: float = 10.0
    horizon: float = 210.0
    n_steps: int = 200_000
    n_chains: int = 8
    seed: int = 0
    method: str = "auto"

    def __post_init__(self):
        if not self.burn_in < self.horizon:
            raise ValueError("burn_in must be smaller than horizon")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.method not in ("auto", "ergodic", "quadrature"):
            raise ValueError(f"unknown method {self.method!r}")


def _as_2d(v, n):
    v = np.asarray(v, dtype=float)
    return v.reshape(n, -1)


def invariant_average(model: MultiscaleModel, x, phi, opts: InvariantAvgOptions = InvariantAvgOptions()):
    """Integral of ``phi(x, y)`` against the fast invariant law at frozen ``x``.

    Returns ``(mean, stderr)`` as 1-d arrays; ``stderr`` is the across-chain
    standard error (zero for quadrature).
    """
    x = np.asarray(x, dtype=float).reshape(model.dim_slow)
    method = opts.method
    if method == "auto":
        method = "quadrature" if model.fast_invariant_law is not None else "ergodic"

    if method == "quadrature":
        if model.fast_invariant_law is None:
            raise ValueError("model has no fast_invariant_law for quadrature")
        nodes, weights = model.fast_invariant_law(x)
        xs = np.broadcast_to(x, (len(weights), model.dim_slow))
        vals = _as_2d(phi(xs, nodes), len(weights))
        mean = weights @ vals
        return mean, np.zeros_like(mean)

    dt = opts.horizon / opts.n_steps
    k0 = int(math.ceil(opts.burn_in / dt - 1e-9))
    xs = np.broadcast_to(x, (opts.n_chains, model.dim_slow))
    acc = None
    count = 0
    for k, y in iter_frozen_chains(model, x, opts.horizon, opts.n_steps, opts.seed, opts.n_chains):
        if k < k0 or k == opts.n_steps:
            continue
        v = _as_2d(phi(xs, y), opts.n_chains)
        acc = v.copy() if acc is None else acc + v
        count += 1
    chain_means = acc / count
    mean = chain_means.mean(axis=0)
    if opts.n_chains > 1:
        stderr = chain_means.std(axis=0, ddof=1) / math.sqrt(opts.n_chains)
    else:
        stderr = np.zeros_like(mean)
    if np.any(stderr > 0.05 * np.abs(mean)):
        warnings.warn(
            f"invariant average stderr {stderr} exceeds 5% of |mean| {np.abs(mean)}",
            StderrTooLarge,
            stacklevel=2,
        )
    return mean, stderr


def averaged_drift(model: MultiscaleModel, theta, x, opts: InvariantAvgOptions = InvariantAvgOptions()):
    """Averaged slow drift at ``x``: the analytic override when present."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x = np.asarray(x, dtype=float)
    if model.averaged_drift_override is not None:
        return np.asarray(model.averaged_drift_override(theta, x), dtype=float)
    mean, _ = invariant_average(model, x, lambda xx, yy: model.drift_slow(theta, xx, yy), opts)
    return mean


@dataclass
class LimitPath:
    grid: TimeGrid
    x_bar: np.ndarray
    theta: np.ndarray

    def to_csv(self, path) -> Path:
        path = Path(path)
        cols = ["t"] + [f"xbar_{i}" for i in range(self.x_bar.shape[1])]
        data = np.column_stack([self.grid.times, self.x_bar])
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
        return path


def solve_limit_ode(model: MultiscaleModel, theta, grid: TimeGrid,
                    opts: InvariantAvgOptions = InvariantAvgOptions()) -> LimitPath:
    """Classical RK4 for x' = cbar_theta(x), x(0) = x0, on ``grid``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    n, dt = grid.n_steps, grid.dt
    fam = model.family
    if fam is not None and model.averaged_drift_override is not None:
        theta_m = float(theta[0]) * fam.moment(fam.y_power)
        xb = _kernels.family_limit_path(fam.kind, theta_m, model.x0[0], dt, n)[:, None]
    else:
        def rhs(x):
            return averaged_drift(model, theta, x, opts)

        xb = np.empty((n + 1, model.dim_slow))
        x = np.array(model.x0, dtype=float)
        xb[0] = x
        for k in range(n):
            k1 = rhs(x)
            k2 = rhs(x + 0.5 * dt * k1)
            k3 = rhs(x + 0.5 * dt * k2)
            k4 = rhs(x + dt * k3)
            x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            xb[k + 1] = x
    if not np.all(np.isfinite(xb)):
        bad = int(np.argmax(~np.all(np.isfinite(xb), axis=1)))
        raise NonFiniteState(f"limit path non-finite at step {bad}", step=bad)
    return LimitPath(grid, xb, theta)


def trapezoid(values, dt):
    """Trapezoid rule on a uniform grid along axis 0."""
    values = np.asarray(values, dtype=float)
    return dt * (values.sum(axis=0) - 0.5 * (values[0] + values[-1]))
