import dataclasses
import math
import warnings

import numpy as np
import pytest

from conftest import make_generic
from multiscale_mle import (DegenerateNormalEquations, EpsilonPair, FamilySpec, NonPositiveDefinite,
                            OptimizerOptions, TimeGrid, confidence_interval, euler_maruyama, family_model,
                            fisher_information, get_model, mle, normal_quantile, quasi_mle,
                            solve_limit_ode)
from multiscale_mle.estimate import start_points


def _traj(name_or_model, theta=1.0, eps=0.1, delta=1e-3, n=100_000, seed=0, t_end=1.0):
    model = get_model(name_or_model) if isinstance(name_or_model, str) else name_or_model
    return model, euler_maruyama(model, np.atleast_1d(theta), EpsilonPair(eps, delta), TimeGrid(t_end, n), seed)


def test_normal_quantile():
    assert normal_quantile(0.95) == pytest.approx(1.959963984540054, rel=1e-12)
    assert normal_quantile(0.68) == pytest.approx(0.9944578832097535, rel=1e-12)
    with pytest.raises(ValueError):
        normal_quantile(1.0)


@pytest.mark.parametrize("name", ["sin-ou-indep", "sin-ou-corr", "linear-ou-corr"])
def test_closed_form_golden_newton_agree(name):
    model, traj = _traj(name, theta=1.5, seed=4)
    cf = mle(model, traj).theta_hat[0]
    gs = mle(model, traj, OptimizerOptions(method="golden_section")).theta_hat[0]
    nt = mle(model, traj, OptimizerOptions(method="newton")).theta_hat[0]
    assert abs(cf - gs) < 1e-6 and abs(cf - nt) < 1e-6


def test_boundary_clipping():
    model = family_model(FamilySpec("sin", 2, 1.0, 1.0, 0.0, 1.0), param_domain=(-0.5, 0.5))
    _, traj = _traj(model, theta=2.0, eps=0.01, seed=1)
    res = mle(model, traj)
    assert res.theta_hat[0] == 0.5 and res.on_boundary
    assert mle(model, traj, OptimizerOptions(method="newton")).theta_hat[0] == pytest.approx(0.5, abs=1e-12)


def test_degenerate_normal_equations():
    zero = family_model(FamilySpec("zero", 0, 1.0, 1.0, 0.0, 1.0))
    _, traj = _traj(zero, n=10_000)
    with pytest.raises(DegenerateNormalEquations):
        mle(zero, traj)
    lim = solve_limit_ode(zero, [1.0], TimeGrid(1.0, 50))
    with pytest.raises(NonPositiveDefinite):
        fisher_information(zero, [1.0], lim)


def test_nonlinear_scalar_newton_vs_golden():
    base = get_model("sin-ou-indep")
    model = dataclasses.replace(
        base, family=None, linear_in_theta=None, drift_slow_grad=None, averaged_drift_override=None,
        drift_slow=lambda th, x, y: np.sin(th[0] * x) * y ** 2, param_lower=(0.0,), param_upper=(3.0,))
    _, traj = _traj(model, theta=1.2, eps=0.01, delta=1e-2, n=5000, seed=3)
    nt = mle(model, traj)
    gs = mle(model, traj, OptimizerOptions(method="golden_section", n_starts=16))
    assert nt.method == "projected_newton" and nt.converged
    assert nt.theta_hat[0] == pytest.approx(gs.theta_hat[0], abs=1e-6)


def test_two_parameter_generic_recovers_truth():
    model = make_generic()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = euler_maruyama(model, [0.7, -0.4], EpsilonPair(0.001, 1e-3), TimeGrid(5.0, 50_000), 12)
    res = mle(model, traj)
    assert res.converged
    np.testing.assert_allclose(res.theta_hat, [0.7, -0.4], atol=0.25)


def test_start_points_inside_box():
    pts = start_points(make_generic(), 8)
    assert pts.shape == (8, 2)
    assert np.all(pts > -5) and np.all(pts < 5)
    assert len({tuple(p) for p in pts}) == 8


def test_fisher_closed_form():
    # Q = kappa^T kappa E[y^{2p}] h(xbar)^2 with xbar = x0 exp(theta E[y^p] t)
    model = get_model("linear-ou-corr")
    fam = model.family
    theta = 1.0
    rate = theta * fam.moment(2)
    want = fam.kappa_sq * fam.moment(4) * (math.exp(2 * rate) - 1) / (2 * rate)
    info = fisher_information(model, [theta], solve_limit_ode(model, [theta], TimeGrid(1.0, 1000)))
    assert info.matrix[0, 0] == pytest.approx(want, rel=1e-5)
    assert want == pytest.approx(3 * (math.e - 1), rel=1e-12)
    assert info.theoretical_sd(0.01)[0] == pytest.approx(math.sqrt(0.01 / want), rel=1e-5)


def test_confidence_interval():
    model, traj = _traj("sin-ou-indep", theta=2.0, seed=2)
    res = mle(model, traj)
    info = fisher_information(model, res.theta_hat, solve_limit_ode(model, res.theta_hat, TimeGrid(1.0, 500)))
    lo, hi = confidence_interval(res, info, 0.1, 0.95)[0]
    half = 1.959963984540054 * math.sqrt(0.1 / info.matrix[0, 0])
    assert lo == pytest.approx(res.theta_hat[0] - half) and hi == pytest.approx(res.theta_hat[0] + half)
    d = res.to_dict()
    assert d["theta_hat"] == [res.theta_hat[0]] and d["method"] == "closed_form"


def test_uncorrelated_mle_equals_quasi():
    model, traj = _traj("sin-ou-indep", seed=6)
    assert mle(model, traj).theta_hat[0] == quasi_mle(model, traj).theta_hat[0]


def test_consistency_ladder():
    # delta = eps^{3/2}; RMSE over 12 paths shrinks as eps decreases
    model = get_model("sin-ou-corr")
    rmse = []
    for eps in (1e-1, 1e-2, 1e-3):
        delta = eps ** 1.5
        n = int(math.ceil(10 / delta))
        errs = [mle(*_traj(model, 1.0, eps, delta, n, seed=100 + i)).theta_hat[0] - 1.0 for i in range(12)]
        rmse.append(math.sqrt(np.mean(np.square(errs))))
    assert rmse[0] > rmse[1] > rmse[2]
    assert rmse[2] < 0.1
