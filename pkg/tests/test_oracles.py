import itertools
import math

import numpy as np
import pytest
from scipy import stats

from espmcmc import get_model, simulate
from espmcmc.errors import ConfigurationError, SingularInnovationError
from espmcmc.oracles import (
    conditional_smoothing_moments,
    hmm_exact_smoothing,
    hmm_forward_backward,
    kalman_filter,
    kalman_loglik,
    kalman_loglik_and_smoother,
)
from espmcmc.rng import make_generator


def _dense_joint(model, theta, T):
    """Joint Gaussian of (x_{0:T-1}, y_{0:T-1}) for the scalar AR(1) model."""
    a, q, r = theta["a"], theta["q"], theta["r"]
    Px = np.empty((T, T))
    var = np.empty(T)
    var[0] = model.p0
    for t in range(1, T):
        var[t] = a * a * var[t - 1] + q
    for s in range(T):
        for t in range(T):
            lo, hi = min(s, t), max(s, t)
            Px[s, t] = a ** (hi - lo) * var[lo]
    Py = Px + r * np.eye(T)
    return Px, Py


def test_kalman_matches_dense_gaussian():
    model = get_model("lgssm")
    theta = {"a": 0.6, "q": 0.8, "r": 0.5}
    _, y = simulate(model, theta, 5, make_generator(61))
    Px, Py = _dense_joint(model, theta, 5)
    ll = stats.multivariate_normal(np.zeros(5), Py).logpdf(y[:, 0])
    kr = kalman_loglik_and_smoother(model, theta, y)
    assert kr.loglik == pytest.approx(ll, abs=1e-8)
    G = Px @ np.linalg.inv(Py)
    assert np.allclose(kr.smooth_means[:, 0], G @ y[:, 0], atol=1e-8)
    assert np.allclose(kr.smooth_covs[:, 0, 0], np.diag(Px - G @ Px), atol=1e-8)


def test_single_step_loglik():
    model = get_model("lgssm")
    theta = model.default_theta()
    y = np.array([[0.7]])
    expected = stats.norm(0, math.sqrt(model.p0 + theta["r"])).logpdf(0.7)
    assert kalman_loglik(model, theta, y) == pytest.approx(expected)


def test_zero_noise_limit_recovers_signal():
    model = get_model("lgssm")
    theta = {"a": 0.9, "q": 1.0, "r": 1e-12}
    _, y = simulate(model, theta, 6, make_generator(62))
    kr = kalman_loglik_and_smoother(model, theta, y)
    assert np.allclose(kr.smooth_means[:, 0], y[:, 0], atol=1e-5)


def test_singular_innovation_raises():
    one = np.eye(1)
    with pytest.raises(SingularInnovationError):
        kalman_filter(one, one, 0 * one, 0 * one, np.zeros(1), one, np.zeros((3, 1)))


def test_non_linear_model_rejected():
    with pytest.raises(ConfigurationError):
        kalman_loglik(get_model("nonlinear"), {"sigma2": 1.0, "tau2": 1.0}, np.zeros((3, 1)))


def test_conditional_moments_against_dense_conditioning():
    A, Q = np.array([[0.8]]), np.array([[0.5]])
    m, P = np.array([0.3]), np.array([[1.2]])
    x_next = np.array([1.1])
    # joint of (x_t, x_{t+1}) and Gaussian conditioning
    cov_xx = P[0, 0]
    cov_xn = P[0, 0] * A[0, 0]
    var_n = A[0, 0] ** 2 * P[0, 0] + Q[0, 0]
    mean = m[0] + cov_xn / var_n * (x_next[0] - A[0, 0] * m[0])
    var = cov_xx - cov_xn**2 / var_n
    om, oc = conditional_smoothing_moments(m, P, A, Q, x_next)
    assert om[0] == pytest.approx(mean, abs=1e-12)
    assert oc[0, 0] == pytest.approx(var, abs=1e-12)


def test_hmm_forward_backward_matches_enumeration():
    model = get_model("hmm2")
    theta = model.default_theta()
    _, y = simulate(model, theta, 8, make_generator(63))
    ex = hmm_exact_smoothing(model, theta, y)
    _, gamma, ll = hmm_forward_backward(model, theta, y)
    assert np.allclose(gamma, ex.marginals, atol=1e-12)
    # likelihood by brute force
    pi, P, E = model.initial_probs(theta), model.transition_matrix(theta), model.emission_matrix(theta)
    obs = y[:, 0].astype(int)
    total = 0.0
    for path in itertools.product((0, 1), repeat=8):
        p = pi[path[0]] * E[path[0], obs[0]]
        for t in range(1, 8):
            p *= P[path[t - 1], path[t]] * E[path[t], obs[t]]
        total += p
    assert ll == pytest.approx(math.log(total), abs=1e-12)


def test_hmm_marginals_normalised_and_uninformative_data():
    model = get_model("hmm2")
    theta = {**model.default_theta(), "e0": 0.4, "e1": 0.4}
    y = np.array([[0.0], [1.0], [1.0], [0.0]])
    ex = hmm_exact_smoothing(model, theta, y)
    assert np.allclose(ex.marginals.sum(axis=1), 1.0)
    # prior chain law
    pi, P = model.initial_probs(theta), model.transition_matrix(theta)
    p = pi.copy()
    for t in range(4):
        if t > 0:
            p = p @ P
        assert np.allclose(ex.marginals[t], p)


def test_hmm_enumeration_limit():
    model = get_model("hmm2")
    with pytest.raises(MemoryError):
        hmm_exact_smoothing(model, model.default_theta(), np.zeros((13, 1)))
