import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiscale_mle import (EpsilonPair, FamilySpec, MultiscaleModel, RegimeWarning, SingularDiffusion,
                            available_models, family_model, get_model, kappa, register_model,
                            validate_model)
from multiscale_mle.model import fd_drift_grad, kappa_blocks


def test_epsilon_pair_validation():
    with pytest.raises(ValueError):
        EpsilonPair(0.0, 1e-3)
    with pytest.raises(ValueError):
        EpsilonPair(0.1, -1.0)
    with pytest.warns(RegimeWarning):
        EpsilonPair(0.01, 0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        EpsilonPair(0.1, 1e-3)


def test_registry_contents():
    assert {"sin-ou-indep", "sin-ou-corr", "linear-ou-corr"} <= set(available_models())
    with pytest.raises(KeyError):
        get_model("no-such-model")
    m = get_model("sin-ou-corr")
    assert m.dim_param == 1 and m.param_lower == (-10.0,) and m.param_upper == (10.0,)
    assert m.x0 == (1.0,) and m.y0 == (1.0,)


def test_register_custom_model():
    spec = FamilySpec("const", 1, sigma=2.0, rate=3.0, tau1=0.0, tau2=1.0)
    register_model("const-test", lambda: family_model(spec, name="const-test"))
    assert get_model("const-test").name == "const-test"


@pytest.mark.parametrize("name,k2,m", [
    ("sin-ou-indep", 1.0, 0.0),
    ("sin-ou-corr", 2.0, math.sqrt(2)),
    ("linear-ou-corr", 4.0, math.sqrt(3) / 2 / 0.25),
])
def test_scalar_kappa(name, k2, m):
    model = get_model(name)
    fam = model.family
    assert fam.kappa_sq == pytest.approx(k2, rel=1e-14)
    assert fam.corr_coef == pytest.approx(m, rel=1e-14)
    kap = kappa(model, np.array([0.3]), np.array([-0.7]))
    assert kap.shape == (2, 1)
    assert float(kap[:, 0] @ kap[:, 0]) == pytest.approx(k2, rel=1e-14)


def test_ou_moments():
    fam = get_model("sin-ou-corr").family
    # dy = -y dt + (a dW + b dB), a^2 + b^2 = 1
    assert fam.stationary_variance == pytest.approx(0.5)
    assert fam.moment(1) == 0.0
    assert fam.moment(2) == pytest.approx(0.5)
    assert fam.moment(4) == pytest.approx(0.75)


def _joint_precision_block(sig, t1, t2):
    """Top-left block of the inverse joint covariance of (sigma dW, tau1 dW + tau2 dB)."""
    ds = sig.shape[0]
    top = np.hstack([sig @ sig.T, sig @ t1.T])
    bot = np.hstack([t1 @ sig.T, t1 @ t1.T + t2 @ t2.T])
    return np.linalg.inv(np.vstack([top, bot]))[:ds, :ds]


mats = st.integers(min_value=0, max_value=2**31 - 1)


@settings(max_examples=60, deadline=None)
@given(seed=mats, ds=st.integers(1, 3), df=st.integers(1, 3))
def test_kappa_metric_is_conditional_precision(seed, ds, df):
    rng = np.random.default_rng(seed)
    sig = rng.standard_normal((ds, ds)) + 2 * np.eye(ds)
    t1 = rng.standard_normal((df, ds))
    t2 = rng.standard_normal((df, df)) + 2 * np.eye(df)
    kap, _ = kappa_blocks(sig, t1, t2)
    want = _joint_precision_block(sig, t1, t2)
    np.testing.assert_allclose(kap.T @ kap, want, rtol=1e-8, atol=1e-10)


def test_kappa_uncorrelated_is_slow_precision():
    sig = np.array([[2.0, 0.5], [0.0, 1.0]])
    kap, corr = kappa_blocks(sig, np.zeros((1, 2)), np.array([[1.5]]))
    np.testing.assert_allclose(kap.T @ kap, np.linalg.inv(sig @ sig.T), rtol=1e-12)
    assert np.all(corr == 0)


def test_singular_diffusion():
    with pytest.raises(SingularDiffusion):
        kappa_blocks(np.zeros((1, 1)), np.zeros((1, 1)), np.ones((1, 1)))
    with pytest.raises(SingularDiffusion):
        kappa_blocks(np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))


def test_parameter_box():
    m = get_model("sin-ou-indep")
    assert m.contains([3.0]) and not m.contains([11.0])
    assert m.project([-12.0])[0] == -10.0
    with pytest.raises(ValueError):
        family_model(FamilySpec("sin", 2, 1.0, 1.0, 0.0, 1.0), param_domain=(1.0, 1.0))


def test_drift_grad_matches_finite_difference():
    m = get_model("linear-ou-corr")
    x = np.linspace(-1, 1, 7)[:, None]
    y = np.linspace(-2, 2, 7)[:, None]
    an = m.drift_grad(np.array([0.4]), x, y)
    fd = fd_drift_grad(m.drift_slow, np.array([0.4]), x, y)
    np.testing.assert_allclose(an, fd, atol=1e-7)


@pytest.mark.parametrize("name", ["sin-ou-indep", "sin-ou-corr", "linear-ou-corr"])
def test_registry_models_validate(name):
    rep = validate_model(get_model(name))
    assert rep.passed, rep.to_dict()
    assert set(rep.checks) >= {"nondegeneracy", "recurrence", "finite", "linearity", "gradient"}


def test_validation_flags_bad_model():
    def one(v):
        return lambda x, y: np.full(np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1]) + (1, 1), v)

    bad = MultiscaleModel(
        dim_slow=1, dim_fast=1, dim_w=1, dim_b=1,
        drift_slow=lambda th, x, y: th[0] * x * y,
        diffusion_slow=one(0.0),
        drift_fast=lambda x, y: +y,          # repelling
        diffusion_fast_w=one(0.0),
        diffusion_fast_b=one(1.0),
        param_lower=(-1.0,), param_upper=(1.0,), x0=(0.0,), y0=(0.0,),
        linear_in_theta=lambda x, y: (x * y)[..., None] + 1.0,  # wrong on purpose
        drift_slow_grad=lambda th, x, y: (2 * x * y)[..., None],  # wrong on purpose
    )
    rep = validate_model(bad)
    assert not rep.passed
    for key in ("nondegeneracy", "recurrence", "linearity", "gradient"):
        assert rep.checks[key].status == "warn", key
    assert rep.checks["finite"].status == "pass"
