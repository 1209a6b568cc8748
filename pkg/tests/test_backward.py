import math

import numpy as np
import pytest

from espmcmc import ProposalSpec, extract_trajectory, run_backward_pass, run_smc
from espmcmc.backward import backward_target_logpdf, context_at, run_kernel_chain
from espmcmc.errors import ConfigurationError
from espmcmc.oracles import kalman_loglik_and_smoother
from espmcmc.proposals import make_proposal
from espmcmc.rng import make_generator


def test_shapes_and_selected_path(lgssm_problem, rng):
    model, theta, _, y = lgssm_problem
    T = y.shape[0]
    ps = run_smc(model, theta, y, 8, rng)
    ext = run_backward_pass(model, theta, y, ps, 3, ProposalSpec("rw-backward"), rng)
    assert ext.C == (3,) * (T - 1)
    assert all(a.shape == (3, 1) for a in ext.xtilde)
    assert ext.B.shape == (T,) and ext.B.min() >= 0 and ext.B.max() < 8
    path = extract_trajectory(ext)
    assert path.shape == (T, 1)
    assert np.array_equal(path[-1], ps.x[-1][ext.B[-1]])
    for t in range(T - 1):
        assert np.array_equal(path[t], ext.xtilde[t][-1])
    assert ext.n_proposed == 3 * (T - 1)
    assert 0 <= ext.acceptance_rate <= 1


def test_reject_kernel_keeps_the_selected_particles(lgssm_problem, rng):
    model, theta, _, y = lgssm_problem
    ps = run_smc(model, theta, y, 8, rng)
    ext = run_backward_pass(model, theta, y, ps, 4, ProposalSpec("reject"), rng)
    for t, it in enumerate(ext.xtilde):
        assert np.all(it == ps.x[t][ext.B[t]])
    assert ext.n_accepted == 0


def test_mcmc_lengths_validated(lgssm_problem, rng):
    model, theta, _, y = lgssm_problem
    ps = run_smc(model, theta, y, 4, rng)
    with pytest.raises(ConfigurationError):
        run_backward_pass(model, theta, y, ps, [2] * 3, ProposalSpec(), rng)
    with pytest.raises(ConfigurationError):
        run_backward_pass(model, theta, y, ps, 0, ProposalSpec(), rng)


def test_target_at_first_time_uses_initial_density(lgssm_problem, rng):
    model, theta, _, y = lgssm_problem
    ps = run_smc(model, theta, y, 5, rng)
    x_next = ps.x[1][0]
    ctx = context_at(model, theta, y, ps, 0, x_next, 2)
    x = np.array([[0.3]])
    expected = (
        model.log_gt(0, y[0], x, theta)[0]
        + model.log_ft(1, x_next, x, theta)[0]
        + model.log_f1(x, theta)[0]
    )
    assert backward_target_logpdf(ctx, x[0]) == pytest.approx(expected, rel=1e-12)


def test_target_later_times_sum_over_previous_particles(lgssm_problem, rng):
    model, theta, _, y = lgssm_problem
    ps = run_smc(model, theta, y, 5, rng)
    t = 3
    ctx = context_at(model, theta, y, ps, t, ps.x[t + 1][1], 0)
    x = np.array([[-0.4]])
    prior = math.log(sum(
        math.exp(lw - ps.logw[t - 1].max()) * math.exp(model.log_ft(t, x, xp[None, :], theta)[0])
        for lw, xp in zip(ps.logw[t - 1], ps.x[t - 1])
    ))
    expected = model.log_gt(t, y[t], x, theta)[0] + model.log_ft(t + 1, ps.x[t + 1][1], x, theta)[0] + prior
    assert backward_target_logpdf(ctx, x[0]) == pytest.approx(expected, rel=1e-10)


def test_kernel_chain_targets_the_backward_density(lgssm_problem):
    """Long chains at one time index reproduce the target's mean and variance (quadrature reference)."""
    model, theta, _, y = lgssm_problem
    ps = run_smc(model, theta, y, 10, make_generator(21))
    t = 4
    ctx = context_at(model, theta, y, ps, t, ps.x[t + 1][0], 3)
    grid = np.linspace(-12, 12, 4001)[:, None]
    lt = ctx.log_target(grid)
    p = np.exp(lt - lt.max())
    p /= p.sum()
    mean = float(p @ grid[:, 0])
    var = float(p @ (grid[:, 0] - mean) ** 2)
    for family in ("rw-backward", "ind-gauss-linearized", "ind-student-t", "bootstrap"):
        prop = make_proposal(ProposalSpec(family), ctx)
        draws, _ = run_kernel_chain(ctx, ps.x[t][3], 40_000, prop, make_generator(22))
        d = draws[2000:, 0]
        assert abs(d.mean() - mean) < 0.05 * math.sqrt(var) * 3, family
        assert d.var() == pytest.approx(var, rel=0.08), family


def test_backward_pass_targets_smoothing_marginals():
    """With many particles the selected path is (nearly) a draw from the smoothing distribution."""
    from espmcmc import get_model, simulate

    model = get_model("lgssm")
    theta = model.default_theta()
    _, y = simulate(model, theta, 6, make_generator(31))
    kr = kalman_loglik_and_smoother(model, theta, y)
    rng = make_generator(32)
    paths = []
    for _ in range(600):
        ps = run_smc(model, theta, y, 100, rng)
        ext = run_backward_pass(model, theta, y, ps, 3, ProposalSpec("ind-gauss-linearized"), rng)
        paths.append(extract_trajectory(ext)[:, 0])
    paths = np.array(paths)
    sd = np.sqrt(kr.smooth_covs[:, 0, 0])
    z = (paths.mean(axis=0) - kr.smooth_means[:, 0]) / (sd / math.sqrt(len(paths)))
    assert np.all(np.abs(z) < 4)
    assert np.allclose(paths.std(axis=0), sd, rtol=0.15)
