"""Discretized log-likelihood, quasi-likelihood and their averaged limit.

Stochastic integrals are left-endpoint (Ito) sums on the observation grid:

    main_stoch = sum_k <kappa c, kappa dx_k>
    main_quad  = 1/2 sum_k |kappa c|^2 dt
    corr_dt    = sqrt(eps/delta) sum_k <M c, f> dt
    corr_dy    = sqrt(eps delta) sum_k <M c, dy_k>

with M = (tau2 tau2^T)^{-1} tau1 sigma^T (sigma sigma^T)^{-1}, all evaluated
at (x_k, y_k).  The likelihood is main_stoch - main_quad + corr_dt - corr_dy
and the quasi-likelihood keeps only the first two terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .averaging import InvariantAvgOptions, LimitPath, invariant_average, trapezoid
from .errors import GridMismatch
from .model import MultiscaleModel, kappa_blocks
from .simulate import Trajectory


@dataclass(frozen=True)
class LikelihoodValue:
    main_stoch: float
    main_quad: float
    corr_dt: float = 0.0
    corr_dy: float = 0.0

    @property
    def value(self) -> float:
        return self.main_stoch - self.main_quad + self.corr_dt - self.corr_dy

    @property
    def terms(self) -> dict:
        return {"main_stoch": self.main_stoch, "main_quad": self.main_quad,
                "corr_dt": self.corr_dt, "corr_dy": self.corr_dy}

    def __float__(self):
        return self.value


@dataclass
class PathTerms:
    """Theta-independent pieces of the likelihood sums for one trajectory."""

    x: np.ndarray        # (n, dim_slow) left endpoints
    y: np.ndarray        # (n, dim_fast)
    dt: float
    metric: np.ndarray   # kappa^T kappa, (n, dim_slow, dim_slow)
    metric_dx: np.ndarray  # kappa^T kappa dx_k, (n, dim_slow)
    corr_f: np.ndarray   # M^T f, (n, dim_slow)
    corr_dy: np.ndarray  # M^T dy_k, (n, dim_slow)
    r_eod: float         # sqrt(eps/delta)
    r_ed: float          # sqrt(eps delta)
    has_corr: bool

    @classmethod
    def build(cls, model: MultiscaleModel, traj: Trajectory) -> "PathTerms":
        if traj.x_path.shape[1] != model.dim_slow or traj.y_path.shape[1] != model.dim_fast:
            raise GridMismatch(
                f"trajectory dims ({traj.x_path.shape[1]}, {traj.y_path.shape[1]}) do not match "
                f"model ({model.dim_slow}, {model.dim_fast})"
            )
        if traj.x_path.shape[0] != traj.y_path.shape[0]:
            raise GridMismatch("slow and fast paths have different lengths")
        x = traj.x_path[:-1]
        y = traj.y_path[:-1]
        dx = np.diff(traj.x_path, axis=0)
        dy = np.diff(traj.y_path, axis=0)
        sig = model.diffusion_slow(x, y)
        t1 = model.diffusion_fast_w(x, y)
        t2 = model.diffusion_fast_b(x, y)
        kap, corr = kappa_blocks(sig, t1, t2)
        metric = np.swapaxes(kap, -1, -2) @ kap
        metric_dx = np.einsum("nij,nj->ni", metric, dx)
        has_corr = bool(np.any(corr != 0))
        if has_corr:
            f = model.drift_fast(x, y)
            corr_f = np.einsum("nji,nj->ni", corr, f)
            corr_dy = np.einsum("nji,nj->ni", corr, dy)
        else:
            corr_f = corr_dy = np.zeros_like(dx)
        eps, delta = traj.eps_pair.eps, traj.eps_pair.delta
        return cls(x, y, traj.grid.dt, metric, metric_dx, corr_f, corr_dy,
                   math.sqrt(eps / delta), math.sqrt(eps * delta), has_corr)

    def evaluate(self, c, corrected=True) -> LikelihoodValue:
        """Likelihood terms for drift values ``c`` of shape (n, dim_slow)."""
        main_stoch = float(np.sum(c * self.metric_dx))
        main_quad = 0.5 * float(np.einsum("ni,nij,nj->", c, self.metric, c)) * self.dt
        if not corrected:
            return LikelihoodValue(main_stoch, main_quad)
        if self.has_corr:
            corr_dt = self.r_eod * float(np.sum(c * self.corr_f)) * self.dt
            corr_dy = self.r_ed * float(np.sum(c * self.corr_dy))
        else:
            corr_dt = corr_dy = 0.0
        return LikelihoodValue(main_stoch, main_quad, corr_dt, corr_dy)

    def gradient(self, c, grad_c, corrected=True) -> np.ndarray:
        """d/dtheta of the likelihood given c and its theta-gradient (n, ds, p)."""
        resid = self.metric_dx - np.einsum("nij,nj->ni", self.metric, c) * self.dt
        if corrected and self.has_corr:
            resid = resid + self.r_eod * self.corr_f * self.dt - self.r_ed * self.corr_dy
        return np.einsum("nip,ni->p", grad_c, resid)


def log_likelihood(model: MultiscaleModel, theta, traj: Trajectory, terms: PathTerms = None) -> LikelihoodValue:
    """Discretized log-likelihood with its four-term breakdown."""
    terms = terms or PathTerms.build(model, traj)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return terms.evaluate(model.drift_slow(theta, terms.x, terms.y), corrected=True)


def quasi_log_likelihood(model: MultiscaleModel, theta, traj: Trajectory, terms: PathTerms = None) -> LikelihoodValue:
    """Likelihood without the two correlated-noise correction terms."""
    terms = terms or PathTerms.build(model, traj)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return terms.evaluate(model.drift_slow(theta, terms.x, terms.y), corrected=False)


def metric_at(model: MultiscaleModel, x, y) -> np.ndarray:
    """kappa^T kappa for a batch of points."""
    kap, _ = kappa_blocks(model.diffusion_slow(x, y), model.diffusion_fast_w(x, y),
                          model.diffusion_fast_b(x, y))
    return np.swapaxes(kap, -1, -2) @ kap


def limit_likelihood(model: MultiscaleModel, theta, theta0, lim: LimitPath,
                     opts: InvariantAvgOptions = InvariantAvgOptions()) -> float:
    """Averaged limit of the likelihood along ``lim`` (solved under theta0).

    Integrates <kappa c_theta, kappa c_theta0> - |kappa c_theta|^2 / 2 against
    mu_x at every grid point, then in time by the trapezoid rule.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))

    def phi(x, y):
        g = metric_at(model, x, y)
        c = model.drift_slow(theta, x, y)
        c0 = model.drift_slow(theta0, x, y)
        return (np.einsum("...i,...ij,...j->...", c, g, c0)
                - 0.5 * np.einsum("...i,...ij,...j->...", c, g, c))

    vals = np.array([invariant_average(model, xt, phi, opts)[0][0] for xt in lim.x_bar])
    return float(trapezoid(vals, lim.grid.dt))
