import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from espmcmc import run_smc
from espmcmc.errors import DegenerateWeightsError, InputError
from espmcmc.smc import (
    RetainedPath,
    categorical_sample,
    effective_sample_size,
    normalize_step,
    sample_from_log_weights,
)


def test_shapes_and_weight_sums(lgssm_problem, rng):
    model, theta, _, y = lgssm_problem
    ps = run_smc(model, theta, y, 7, rng)
    assert ps.T == y.shape[0]
    assert ps.sizes == (7,) * y.shape[0]
    assert all(x.shape == (7, 1) for x in ps.x)
    assert len(ps.ancestors) == y.shape[0] - 1
    for lw, W, L in zip(ps.logw, ps.W, ps.log_weight_sums):
        assert W.sum() == pytest.approx(1.0)
        assert L == pytest.approx(logsumexp(lw))


def test_log_likelihood_is_sum_of_log_mean_weights(lgssm_problem, rng):
    model, theta, _, y = lgssm_problem
    ps = run_smc(model, theta, y, [5] * 6 + [9] * 6, rng)
    expected = sum(logsumexp(lw) - math.log(len(lw)) for lw in ps.logw)
    assert ps.log_likelihood == pytest.approx(expected, rel=1e-12)


def test_retained_path_occupies_its_slots(lgssm_problem, rng):
    model, theta, x, y = lgssm_problem
    T = y.shape[0]
    slots = rng.integers(6, size=T)
    ps = run_smc(model, theta, y, 6, rng, retained=RetainedPath(x, slots))
    for t in range(T):
        assert np.array_equal(ps.x[t][slots[t]], x[t])
        if t > 0:
            assert ps.ancestors[t - 1][slots[t]] == slots[t - 1]


def test_same_seed_same_output(lgssm_problem):
    model, theta, _, y = lgssm_problem
    a = run_smc(model, theta, y, 5, np.random.Generator(np.random.Philox(3)))
    b = run_smc(model, theta, y, 5, np.random.Generator(np.random.Philox(3)))
    assert np.array_equal(np.stack(a.x), np.stack(b.x))


def test_bad_observations_rejected(lgssm_problem, rng):
    model, theta, _, _ = lgssm_problem
    with pytest.raises(InputError):
        run_smc(model, theta, np.zeros((4, 1, 1)), 5, rng)


def test_degenerate_weights_raise():
    lw = np.array([-np.inf, np.nan, -np.inf])
    with pytest.raises(DegenerateWeightsError):
        normalize_step(lw, 3)
    with pytest.raises(DegenerateWeightsError):
        sample_from_log_weights(np.array([-np.inf, -np.inf]), np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=8).filter(lambda w: sum(w) > 0.1))
def test_categorical_sample_frequencies(w):
    W = np.array(w) / np.sum(w)
    idx = categorical_sample(W, np.random.default_rng(0), size=20000)
    freq = np.bincount(idx, minlength=len(W)) / idx.size
    assert np.max(np.abs(freq - W)) < 0.03
    assert np.all(freq[W == 0] == 0)


def test_sample_from_log_weights_ignores_nan():
    rng = np.random.default_rng(1)
    draws = {sample_from_log_weights(np.array([np.nan, 0.0, -np.inf]), rng) for _ in range(50)}
    assert draws == {1}


def test_effective_sample_size_bounds():
    assert effective_sample_size(np.full(4, 0.25)) == pytest.approx(4.0)
    assert effective_sample_size(np.array([1.0, 0.0, 0.0])) == pytest.approx(1.0)
