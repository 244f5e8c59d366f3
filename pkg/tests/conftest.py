import os
from pathlib import Path

import numpy as np
import pytest

from multiscale_mle import (EpsilonPair, FamilySpec, MultiscaleModel, TimeGrid, euler_maruyama,
                            family_model)

CRITERIA_LINES = []

MC_CACHE = Path(os.environ.get("MULTISCALE_MLE_MC_CACHE", Path(__file__).parent / ".mc_cache"))


def record_criterion(name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    CRITERIA_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)


def make_generic(a=0.3, b=0.8, s=1.2, lam=1.5):
    """Scalar model without a family spec, so the generic code paths run."""

    def one(v):
        def fn(x, y):
            shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
            return np.full(shape + (1, 1), v)
        return fn

    return MultiscaleModel(
        dim_slow=1, dim_fast=1, dim_w=1, dim_b=1,
        drift_slow=lambda th, x, y: th[0] * np.cos(x) * y + th[1] * x,
        diffusion_slow=one(s),
        drift_fast=lambda x, y: -lam * y,
        diffusion_fast_w=one(a),
        diffusion_fast_b=one(b),
        param_lower=(-5.0, -5.0), param_upper=(5.0, 5.0),
        x0=(0.5,), y0=(0.0,),
        name="generic-test",
    )


@pytest.fixture
def generic_model():
    return make_generic()


@pytest.fixture(scope="session")
def corr_family():
    return family_model(FamilySpec("sin", 2, sigma=1.3, rate=2.0, tau1=0.6, tau2=0.9), name="corr-test")


@pytest.fixture
def short_path():
    def make(model, theta=(1.0,), eps=0.1, delta=1e-2, n=2000, seed=3):
        return euler_maruyama(model, theta, EpsilonPair(eps, delta), TimeGrid(1.0, n), seed)
    return make
