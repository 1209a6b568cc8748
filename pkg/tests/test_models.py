import math

import numpy as np
import pytest
from scipy import stats

from espmcmc import get_model, run_smc, simulate
from espmcmc.errors import ConfigurationError, InputError, UnsupportedOperationError
from espmcmc.models import inverse_gamma_posterior, load_returns
from espmcmc.models.common import conjugate_variance_update
from espmcmc.models.sv import _MuTau, _Phi, find_mode
from espmcmc.rng import make_generator
from espmcmc.smc import effective_sample_size

GRID = np.linspace(-60, 60, 120_001)[:, None]
DX = GRID[1, 0] - GRID[0, 0]

CONTINUOUS = [
    ("nonlinear", {"sigma2": 1.0, "tau2": 10.0}),
    ("lgssm", {"a": 0.8, "q": 0.7, "r": 0.4}),
    ("sv", {"mu": -0.5, "tau": 0.6, "phi": 0.9}),
]


@pytest.mark.parametrize("name,theta", CONTINUOUS)
def test_transition_density_matches_sampler(name, theta):
    model = get_model(name)
    rng = make_generator(81)
    x_prev = np.array([[1.3]])
    dens = np.exp(model.log_ft(4, GRID, x_prev, theta))
    assert dens.sum() * DX == pytest.approx(1.0, abs=1e-6)
    grid_mean = float((GRID[:, 0] * dens).sum() * DX)
    draws = model.sample_ft(4, np.repeat(x_prev, 20_000, axis=0), theta, rng)[:, 0]
    assert draws.mean() == pytest.approx(grid_mean, abs=5 * draws.std() / math.sqrt(draws.size))
    init = np.exp(model.log_f1(GRID, theta))
    assert init.sum() * DX == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("name,theta", CONTINUOUS)
def test_observation_density_matches_sampler(name, theta):
    model = get_model(name)
    x = np.array([[0.9]])
    ys = np.stack([model.sample_gt(2, x, theta, make_generator(82, i)).ravel() for i in range(4000)])[:, 0]
    grid = GRID[:, 0]
    dens = np.exp(np.array([model.log_gt(2, np.array([v]), x, theta)[0] for v in grid[::20]]))
    mass = dens.sum() * DX * 20
    assert mass == pytest.approx(1.0, abs=1e-3)
    mean = (grid[::20] * dens).sum() * DX * 20
    assert ys.mean() == pytest.approx(mean, abs=5 * ys.std() / math.sqrt(ys.size))


def test_inverse_gamma_update_examples():
    assert inverse_gamma_posterior(1.0, 0.1, 2.0, 4) == (3.0, 1.1)
    assert inverse_gamma_posterior(1.0, 0.1, 0.0, 0) == (1.0, 0.1)
    with pytest.raises(ConfigurationError):
        inverse_gamma_posterior(0.0, 0.1, 1.0, 1)
    rng = make_generator(83)
    resid = np.array([1.0, -1.0, 0.0, 0.0])  # SSR 2, n 4 -> IG(3, 1.1), mean 0.55
    draws = np.array([conjugate_variance_update(resid, (1.0, 0.1), rng) for _ in range(100_000)])
    assert draws.mean() == pytest.approx(0.55, rel=0.01)


def test_sv_importance_density_normalised():
    model = get_model("sv")
    theta = model.default_theta()
    for yv in (0.01, 0.5, 3.0):
        for xp in (-2.0, 0.0, 1.5):
            lp = model.log_mt(3, np.array([yv]), GRID, np.array([[xp]]), theta)
            assert np.exp(lp).sum() * DX == pytest.approx(1.0, abs=1e-3)
        lp1 = model.log_m1(np.array([yv]), GRID, theta)
        assert np.exp(lp1).sum() * DX == pytest.approx(1.0, abs=1e-3)


def test_sv_importance_zero_return_limit():
    """With y = 0 the expansion has no curvature: variance equals the prior, mean shifts by -tau var."""
    model = get_model("sv")
    theta = {"mu": -0.5, "tau": 0.4, "phi": 0.9}
    mean, var = model.optimal_importance_moments(0.0, np.array([0.7]), 1.0, theta)
    assert var == pytest.approx(1.0)
    assert mean[0] == pytest.approx(0.7 - 0.4)


def test_sv_adapted_importance_beats_bootstrap():
    theta = {"mu": -0.5, "tau": 1.0, "phi": 0.9}
    adapted, boot = get_model("sv"), get_model("sv", adapted=False)
    _, y = simulate(adapted, theta, 40, make_generator(84))

    def median_ess(model, seed):
        vals = []
        for k in range(50):
            ps = run_smc(model, theta, y, 100, make_generator(seed, k))
            vals.append(np.mean([effective_sample_size(np.exp(lw - lw.max()) / np.exp(lw - lw.max()).sum())
                                 for lw in ps.logw]))
        return np.median(vals)

    assert median_ess(adapted, 85) > median_ess(boot, 86)


def test_sv_laplace_modes_are_stationary():
    model = get_model("sv")
    theta = model.default_theta()
    x, y = simulate(model, theta, 200, make_generator(87))
    mode, g = find_mode(_MuTau(model, x, y), np.array([0.0, 0.5]))
    assert np.max(np.abs(g)) < 1e-6
    mode, g = find_mode(_Phi(model, x), np.array([0.5]))
    assert np.max(np.abs(g)) < 1e-6
    assert -1 < mode[0] < 1


def test_sv_gibbs_blocks_move_parameters():
    model = get_model("sv")
    theta = model.default_theta()
    x, y = simulate(model, theta, 200, make_generator(88))
    rng = make_generator(89)
    moves = 0
    for block in model.gibbs_blocks():
        for _ in range(20):
            vals, acc = block.update(theta, x, y, rng)
            moves += acc
            assert set(vals) <= set(block.keys)
    assert moves > 0


def test_load_returns(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("0.1\n\n-0.2\n0.3\n")
    assert load_returns(p).shape == (3, 1)
    with pytest.raises(InputError):
        load_returns(tmp_path / "missing.txt")
    p.write_text("0.1\nabc\n")
    with pytest.raises(InputError, match=":2:"):
        load_returns(p)
    p.write_text("0.1\n")
    with pytest.raises(InputError):
        load_returns(p)


def test_binreg_design_and_density():
    model = get_model("binreg", m=2)
    theta = model.default_theta()
    x, y = simulate(model, theta, 30, make_generator(90))
    assert x.shape == (30, 2) and y.shape == (30, 4)
    assert np.all(y[:, 0] <= y[:, 1]) and np.all(np.abs(y[:, 2:]) <= 1)
    # log g is the binomial log pmf
    eta = theta["beta0"] + x[3] @ y[3, 2:]
    expected = stats.binom(int(y[3, 1]), 1 / (1 + math.exp(-eta))).logpmf(int(y[3, 0]))
    assert model.log_gt(3, y[3], x[3:4], theta)[0] == pytest.approx(expected, abs=1e-10)
    with pytest.raises(UnsupportedOperationError):
        model.sample_gt(0, x[:1], theta, make_generator(0))
    assert [b.name for b in model.gibbs_blocks()] == ["beta0", "tau2_1", "tau2_2"]


def test_hmm2_matrices_are_stochastic():
    model = get_model("hmm2")
    theta = model.default_theta()
    for M in (model.transition_matrix(theta), model.emission_matrix(theta)):
        assert np.allclose(M.sum(axis=1), 1.0)
    x = np.array([[0.0], [1.0]])
    for prev in (0.0, 1.0):
        assert np.exp(model.log_ft(1, x, np.array([[prev]]), theta)).sum() == pytest.approx(1.0)
    assert np.exp(model.log_f1(x, theta)).sum() == pytest.approx(1.0)


def test_unknown_model_and_options():
    with pytest.raises(ConfigurationError):
        get_model("nope")
    with pytest.raises(ConfigurationError):
        get_model("sv", bogus=1)
