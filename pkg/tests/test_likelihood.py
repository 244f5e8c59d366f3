import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiscale_mle import (EpsilonPair, GridMismatch, MultiscaleModel, PathTerms, TimeGrid, Trajectory,
                            euler_maruyama, get_model, log_likelihood, quasi_log_likelihood)


def _const(mat):
    mat = np.asarray(mat, dtype=float)
    return lambda x, y: np.broadcast_to(mat, np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1]) + mat.shape)


def two_dim_model(sig, t1, t2):
    return MultiscaleModel(
        dim_slow=2, dim_fast=2, dim_w=2, dim_b=2,
        drift_slow=lambda th, x, y: np.stack(
            [th[0] * np.sin(x[..., 1]) * y[..., 0], th[1] * y[..., 1] ** 2 - th[0] * x[..., 0]], axis=-1),
        diffusion_slow=_const(sig),
        drift_fast=lambda x, y: -y + 0.3 * np.tanh(x),
        diffusion_fast_w=_const(t1),
        diffusion_fast_b=_const(t2),
        param_lower=(-5, -5), param_upper=(5, 5), x0=(0.2, -0.1), y0=(0.5, 0.0),
    )


def euler_log_density_ratio(model, th_a, th_b, traj):
    """log p_a - log p_b of the Euler transition densities of (x, y)."""
    eps, delta = traj.eps_pair.eps, traj.eps_pair.delta
    dt = traj.grid.dt
    x, y = traj.x_path[:-1], traj.y_path[:-1]
    inc = np.concatenate([np.diff(traj.x_path, axis=0), np.diff(traj.y_path, axis=0)], axis=1)
    sig = model.diffusion_slow(x[0], y[0])
    t1 = model.diffusion_fast_w(x[0], y[0])
    t2 = model.diffusion_fast_b(x[0], y[0])
    cov = dt * np.block([[eps * sig @ sig.T, math.sqrt(eps / delta) * sig @ t1.T],
                         [math.sqrt(eps / delta) * t1 @ sig.T, (t1 @ t1.T + t2 @ t2.T) / delta]])
    prec = np.linalg.inv(cov)
    f = model.drift_fast(x, y) * dt / delta
    out = 0.0
    for th, sign in ((th_a, 1.0), (th_b, -1.0)):
        r = inc - np.concatenate([model.drift_slow(np.asarray(th), x, y) * dt, f], axis=1)
        out += sign * -0.5 * np.einsum("ni,ij,nj->", r, prec, r)
    return out


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), corr=st.floats(0.0, 1.0))
def test_likelihood_is_euler_girsanov_ratio(seed, corr):
    rng = np.random.default_rng(seed)
    sig = rng.standard_normal((2, 2)) * 0.3 + np.eye(2)
    t1 = corr * rng.standard_normal((2, 2))
    t2 = rng.standard_normal((2, 2)) * 0.3 + np.eye(2)
    model = two_dim_model(sig, t1, t2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = euler_maruyama(model, [0.8, -0.5], EpsilonPair(0.05, 0.02), TimeGrid(1.0, 400), seed)
    th_a, th_b = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
    want = euler_log_density_ratio(model, th_a, th_b, traj)
    got = (log_likelihood(model, th_a, traj).value - log_likelihood(model, th_b, traj).value) / 0.05
    assert got == pytest.approx(want, rel=1e-7, abs=1e-7)


def test_scalar_family_girsanov_ratio():
    model = get_model("sin-ou-corr")
    traj = euler_maruyama(model, [1.0], EpsilonPair(0.1, 1e-2), TimeGrid(1.0, 1000), 8)
    want = euler_log_density_ratio(model, [1.7], [0.2], traj)
    got = (log_likelihood(model, [1.7], traj).value - log_likelihood(model, [0.2], traj).value) / 0.1
    assert got == pytest.approx(want, rel=1e-8)


def test_quasi_drops_correction_terms():
    model = get_model("sin-ou-corr")
    traj = euler_maruyama(model, [1.0], EpsilonPair(0.1, 1e-3), TimeGrid(1.0, 20_000), 1)
    full = log_likelihood(model, [0.9], traj)
    quasi = quasi_log_likelihood(model, [0.9], traj)
    assert quasi.main_stoch == full.main_stoch and quasi.main_quad == full.main_quad
    assert quasi.corr_dt == quasi.corr_dy == 0.0
    assert full.corr_dt != 0.0 and full.corr_dy != 0.0
    assert set(full.terms) == {"main_stoch", "main_quad", "corr_dt", "corr_dy"}
    assert float(full) == full.value


def test_gradient_matches_finite_difference():
    model = two_dim_model(np.eye(2), 0.4 * np.eye(2), np.eye(2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = euler_maruyama(model, [0.8, -0.5], EpsilonPair(0.1, 0.05), TimeGrid(1.0, 500), 2)
    terms = PathTerms.build(model, traj)
    th = np.array([0.3, 0.7])
    for corrected in (True, False):
        g = terms.gradient(model.drift_slow(th, terms.x, terms.y), model.drift_grad(th, terms.x, terms.y), corrected)
        fd = np.empty(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = 1e-5
            up = terms.evaluate(model.drift_slow(th + e, terms.x, terms.y), corrected).value
            dn = terms.evaluate(model.drift_slow(th - e, terms.x, terms.y), corrected).value
            fd[i] = (up - dn) / 2e-5
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_grid_mismatch():
    model = get_model("sin-ou-indep")
    bad = Trajectory(TimeGrid(1.0, 10), np.zeros((11, 2)), np.zeros((11, 1)), EpsilonPair(0.1, 1e-3))
    with pytest.raises(GridMismatch):
        log_likelihood(model, [1.0], bad)
