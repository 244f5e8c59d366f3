"""Maximum likelihood and quasi-likelihood estimation, Fisher information, CIs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, stats
from scipy.stats import qmc

from .averaging import InvariantAvgOptions, LimitPath, invariant_average, trapezoid
from .errors import DegenerateNormalEquations, NonPositiveDefinite
from .likelihood import PathTerms, metric_at
from .model import MultiscaleModel
from .simulate import Trajectory

PD_THRESHOLD = 1e-10
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class OptimizerOptions:
    method: str = "auto"  # auto | closed_form | newton | golden_section
    n_starts: int = 8
    grad_tol: float = 1e-8
    max_iter: int = 100
    cond_max: float = 1e10
    golden_tol: float = 1e-10


@dataclass
class FisherInfo:
    matrix: np.ndarray
    q_path: np.ndarray
    theta: np.ndarray
    times: np.ndarray

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def theoretical_sd(self, eps: float) -> np.ndarray:
        """sqrt(eps * diag(I^{-1})): asymptotic SD of each MLE coordinate."""
        _require_pd(self.matrix)
        return np.sqrt(eps * np.diag(np.linalg.inv(self.matrix)))

    def normalizing_matrix(self, eps: float) -> np.ndarray:
        """sqrt(eps) I^{-1/2}."""
        _require_pd(self.matrix)
        w, v = np.linalg.eigh(self.matrix)
        return math.sqrt(eps) * (v / np.sqrt(w)) @ v.T


@dataclass
class EstimatorResult:
    theta_hat: np.ndarray
    objective: float
    method: str
    iterations: int
    on_boundary: bool
    estimator: str = "mle"
    converged: bool = True
    fisher: Optional[FisherInfo] = None
    ci: Optional[list] = None  # [(level, [(lo, hi), ...]), ...]
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "estimator": self.estimator,
            "theta_hat": [float(v) for v in self.theta_hat],
            "objective": float(self.objective),
            "method": self.method,
            "iterations": int(self.iterations),
            "on_boundary": bool(self.on_boundary),
            "converged": bool(self.converged),
        }
        if self.fisher is not None:
            out["fisher"] = {
                "matrix": np.asarray(self.fisher.matrix).tolist(),
                "min_eigenvalue": self.fisher.min_eigenvalue,
                "theta": [float(v) for v in self.fisher.theta],
            }
        if self.ci is not None:
            out["ci"] = [
                {"level": level, "intervals": [[float(lo), float(hi)] for lo, hi in bounds]}
                for level, bounds in self.ci
            ]
        out.update(self.extra)
        return out


def _require_pd(mat):
    ev = np.linalg.eigvalsh(np.asarray(mat, dtype=float))
    if ev[0] < PD_THRESHOLD:
        raise NonPositiveDefinite(f"Fisher information min eigenvalue {ev[0]:.3g} < {PD_THRESHOLD:g}")


def _on_boundary(model, theta) -> bool:
    return bool(np.any(theta <= model.lower) or np.any(theta >= model.upper))


def normal_equations(model: MultiscaleModel, terms: PathTerms, corrected: bool = True):
    """A and b with Z(theta) = b.theta - theta.A.theta / 2 for linear-in-theta drifts."""
    g = model.linear_in_theta(terms.x, terms.y)
    a_mat = np.einsum("nip,nij,njq->pq", g, terms.metric, g) * terms.dt
    resid = terms.metric_dx
    if corrected and terms.has_corr:
        resid = resid + terms.r_eod * terms.corr_f * terms.dt - terms.r_ed * terms.corr_dy
    b_vec = np.einsum("nip,ni->p", g, resid)
    return 0.5 * (a_mat + a_mat.T), b_vec


def _closed_form(model, terms, corrected, opts):
    a_mat, b_vec = normal_equations(model, terms, corrected)
    ev = np.linalg.eigvalsh(a_mat)
    cond = ev[-1] / ev[0] if ev[0] > 0 else np.inf
    if not cond <= opts.cond_max:
        raise DegenerateNormalEquations(f"normal equations condition number {cond:.3g} > {opts.cond_max:g}")
    theta = np.linalg.solve(a_mat, b_vec)
    if not model.contains(theta):
        if theta.size == 1:
            theta = model.project(theta)
        else:
            # argmax of the concave quadratic over the box
            chol = np.linalg.cholesky(a_mat)
            rhs = np.linalg.solve(chol, b_vec)
            res = optimize.lsq_linear(chol.T, rhs, bounds=(model.lower, model.upper), tol=1e-14)
            theta = model.project(res.x)
    return theta


def _objective(model, terms, corrected):
    def value(theta):
        return terms.evaluate(model.drift_slow(theta, terms.x, terms.y), corrected).value

    def grad(theta):
        c = model.drift_slow(theta, terms.x, terms.y)
        return terms.gradient(c, model.drift_grad(theta, terms.x, terms.y), corrected)

    return value, grad


def _fd_hessian(grad, theta):
    p = theta.size
    hess = np.empty((p, p))
    for i in range(p):
        h = 1e-5 * (1.0 + abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        hess[:, i] = (grad(tp) - grad(tm)) / (2 * h)
    return 0.5 * (hess + hess.T)


def _projected_newton(model, value, grad, start, opts):
    """Maximize ``value`` over the parameter box from ``start``.

    Returns (theta, value, iterations, converged).
    """
    lo, hi = model.lower, model.upper
    theta = model.project(start)
    f = value(theta)
    for it in range(1, opts.max_iter + 1):
        g = grad(theta)
        # coordinates pinned at a bound with the gradient pushing outward
        pinned = ((theta <= lo) & (g < 0)) | ((theta >= hi) & (g > 0))
        free = ~pinned
        if np.linalg.norm(g[free]) <= opts.grad_tol:
            return theta, f, it, True
        step = np.zeros_like(theta)
        hess = _fd_hessian(grad, theta)[np.ix_(free, free)]
        try:
            newton = np.linalg.solve(-hess, g[free])
            ascent = float(newton @ g[free]) > 0
        except np.linalg.LinAlgError:
            ascent = False
        step[free] = newton if ascent else g[free]
        t = 1.0
        improved = False
        for _ in range(60):
            cand = model.project(theta + t * step)
            fc = value(cand)
            if fc >= f + 1e-4 * float(g @ (cand - theta)) and fc >= f:
                improved = True
                break
            t *= 0.5
        if not improved:
            return theta, f, it, np.linalg.norm(g[free]) <= max(opts.grad_tol, 1e-6 * (1 + abs(f)))
        moved = float(np.max(np.abs(cand - theta)))
        theta, f = cand, fc
        if moved <= 1e-15 * (1 + float(np.max(np.abs(theta)))):
            return theta, f, it, True
    return theta, f, opts.max_iter, False


def _golden(value, lo, hi, tol):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = value(c), value(d)
    it = 0
    while b - a > tol * (1 + abs(a) + abs(b)) and it < 500:
        it += 1
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = value(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = value(d)
    best = [(value(a), a), (fc, c), (fd, d), (value(b), b)]
    f, x = max(best)
    return x, f, it


def start_points(model: MultiscaleModel, n: int) -> np.ndarray:
    """Low-discrepancy (Halton) start points inside the parameter box."""
    sampler = qmc.Halton(d=model.dim_param, scramble=False)
    sampler.fast_forward(1)
    u = sampler.random(n)
    return model.lower + (model.upper - model.lower) * u


def _maximize(model, traj, opts, corrected, terms=None):
    opts = opts or OptimizerOptions()
    terms = terms or PathTerms.build(model, traj)
    value, grad = _objective(model, terms, corrected)
    method = opts.method
    if method == "auto":
        method = "closed_form" if model.linear_in_theta is not None else "newton"

    if method == "closed_form":
        if model.linear_in_theta is None:
            raise ValueError("closed_form needs a linear_in_theta model")
        theta = _closed_form(model, terms, corrected, opts)
        return theta, value(theta), "closed_form", 1, True

    if method == "golden_section":
        if model.dim_param != 1:
            raise ValueError("golden_section needs a scalar parameter")
        edges = np.linspace(model.lower[0], model.upper[0], opts.n_starts + 1)
        best = None
        total = 0
        for a, b in zip(edges[:-1], edges[1:]):
            x, f, it = _golden(lambda t: value(np.array([t])), a, b, opts.golden_tol)
            total += it
            if best is None or f > best[1]:
                best = (x, f)
        return np.array([best[0]]), best[1], "golden_section", total, True

    best = None
    total = 0
    any_conv = False
    for s in start_points(model, opts.n_starts):
        theta, f, it, conv = _projected_newton(model, value, grad, s, opts)
        total += it
        any_conv |= conv
        if best is None or f > best[1]:
            best = (theta, f)
    if not any_conv and model.dim_param == 1 and opts.method == "auto":
        return _maximize(model, traj, OptimizerOptions(**{**opts.__dict__, "method": "golden_section"}),
                         corrected, terms)
    return best[0], best[1], "projected_newton", total, any_conv


def _result(model, theta, objective, method, iterations, converged, estimator):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return EstimatorResult(theta, float(objective), method, int(iterations),
                           _on_boundary(model, theta), estimator, bool(converged))


def mle(model: MultiscaleModel, traj: Trajectory, opts: OptimizerOptions = None,
        terms: PathTerms = None) -> EstimatorResult:
    """Argmax of the discretized likelihood over the closed parameter box.

    Linear-in-theta models are solved from the normal equations; others by
    multi-start projected Newton (golden section for a scalar parameter if
    Newton does not converge).
    """
    return _result(model, *_maximize(model, traj, opts, True, terms), "mle")


def quasi_mle(model: MultiscaleModel, traj: Trajectory, opts: OptimizerOptions = None,
              terms: PathTerms = None) -> EstimatorResult:
    """Argmax of the quasi-likelihood (no correlated-noise corrections)."""
    return _result(model, *_maximize(model, traj, opts, False, terms), "quasi_mle")


def fisher_information(model: MultiscaleModel, theta, lim: LimitPath,
                       opts: InvariantAvgOptions = InvariantAvgOptions()) -> FisherInfo:
    """I(theta) = integral over the limit path of Q(xbar_t, theta).

    Q(x, theta) averages (grad c)^T kappa^T kappa (grad c) against mu_x.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    p = theta.size

    def phi(x, y):
        gc = model.drift_grad(theta, x, y)
        met = metric_at(model, x, y)
        q = np.swapaxes(gc, -1, -2) @ met @ gc
        return q.reshape(q.shape[:-2] + (p * p,))

    q_path = np.array([invariant_average(model, xt, phi, opts)[0].reshape(p, p) for xt in lim.x_bar])
    mat = trapezoid(q_path, lim.grid.dt)
    mat = 0.5 * (mat + mat.T)
    _require_pd(mat)
    return FisherInfo(mat, q_path, theta, lim.grid.times)


def normal_quantile(level: float) -> float:
    """Two-sided standard normal quantile z_{(1+level)/2}."""
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    return float(stats.norm.ppf(0.5 * (1.0 + level)))


def confidence_interval(result: EstimatorResult, fisher: FisherInfo, eps: float, level: float) -> list:
    """Per-coordinate theta_hat_i +/- z * sqrt(eps * (I^{-1})_ii)."""
    z = normal_quantile(level)
    half = z * fisher.theoretical_sd(eps)
    return [(float(t - h), float(t + h)) for t, h in zip(result.theta_hat, half)]
