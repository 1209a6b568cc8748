import numpy as np
import pytest

from espmcmc import get_model, simulate
from espmcmc.rng import make_generator


@pytest.fixture
def lgssm_problem():
    model = get_model("lgssm")
    theta = model.default_theta()
    x, y = simulate(model, theta, 12, make_generator(11))
    return model, theta, x, y


@pytest.fixture
def nonlinear_problem():
    model = get_model("nonlinear")
    theta = model.default_theta()
    x, y = simulate(model, theta, 15, make_generator(12))
    return model, theta, x, y


@pytest.fixture
def hmm_problem():
    model = get_model("hmm2")
    theta = model.default_theta()
    x, y = simulate(model, theta, 6, make_generator(13))
    return model, theta, x, y


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))
