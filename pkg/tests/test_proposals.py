import math

import numpy as np
import pytest
from scipy import stats

from espmcmc import ProposalSpec, get_model, run_smc
from espmcmc.backward import context_at
from espmcmc.errors import ConfigurationError, DegenerateWeightsError, SingularInnovationError
from espmcmc.model import Linearization
from espmcmc.proposals import (
    CONTINUOUS_FAMILIES,
    IndependentStudentT,
    backward_weight_moments,
    filtered_moments,
    jitter,
    linearization_moments,
    log_acceptance,
    make_proposal,
    propose,
)
from espmcmc.rng import make_generator


def _ctx(problem, t=3, n=20, exclude=4, seed=51):
    model, theta, _, y = problem
    ps = run_smc(model, theta, y, n, make_generator(seed))
    return context_at(model, theta, y, ps, t, ps.x[t + 1][0], exclude), ps


def test_proposal_spec_validation():
    with pytest.raises(ConfigurationError):
        ProposalSpec("nope")
    with pytest.raises(ConfigurationError):
        ProposalSpec("rw-backward", scale=0.0)
    with pytest.raises(ConfigurationError):
        ProposalSpec("ind-student-t", dof=2.0)
    with pytest.raises(ConfigurationError):
        ProposalSpec("ind-student-t", moments="other")
    assert ProposalSpec("rw-backward").scale_for(1) == pytest.approx(2.38)
    assert ProposalSpec("rw-backward").scale_for(4) == pytest.approx(2.38**4 / 4)
    assert ProposalSpec("ind-gauss-backward").scale_for(3) == 1.0
    assert ProposalSpec("ind-student-t", moments="linearized").needs_linearization


def test_jitter_rule():
    cov = np.diag([2.0, 4.0])
    assert np.allclose(jitter(cov) - cov, 1e-9 * 3.0 * np.eye(2))
    assert np.allclose(jitter(np.zeros((2, 2))), 1e-12 * np.eye(2))


def test_backward_moments_exclude_the_selected_slot(lgssm_problem):
    model, theta, _, y = lgssm_problem
    ctx, ps = _ctx(lgssm_problem)
    t, b = ctx.t, ctx.exclude
    keep = np.arange(len(ps.logw[t])) != b
    lbw = ps.logw[t][keep] + model.log_ft(t + 1, ctx.x_next, ps.x[t][keep], theta)
    W = np.exp(lbw - lbw.max())
    W /= W.sum()
    mean = W @ ps.x[t][keep, 0]
    var = W @ (ps.x[t][keep, 0] - mean) ** 2
    mo = backward_weight_moments(ps.x[t], ps.logw[t], ctx.x_next, model, theta, t, b)
    assert mo.mean[0] == pytest.approx(mean, rel=1e-12)
    assert mo.cov[0, 0] == pytest.approx(var * (1 + 1e-9), rel=1e-12)
    # moving the excluded particle changes nothing
    x2 = ps.x[t].copy()
    x2[b] = 1e6
    mo2 = backward_weight_moments(x2, ps.logw[t], ctx.x_next, model, theta, t, b)
    assert np.array_equal(mo.mean, mo2.mean)


def test_moment_degeneracy_raises():
    x = np.zeros((1, 1))
    with pytest.raises(DegenerateWeightsError):
        filtered_moments(x, np.zeros(1), exclude=0)
    with pytest.raises(DegenerateWeightsError):
        filtered_moments(np.zeros((3, 1)), np.full(3, -np.inf))


def test_linearization_singular_innovation():
    lin = Linearization(h=np.zeros(1), H=np.zeros((1, 1)), Sigma=np.zeros((1, 1)))
    with pytest.raises(SingularInnovationError):
        linearization_moments(np.zeros(1), np.eye(1), lin, np.zeros(1))


def test_linearization_with_particle_moments_approaches_exact_conditional():
    """Filtered moments from many particles, conditioned on x_next, match the Kalman-based oracle."""
    from espmcmc.oracles import conditional_smoothing_moments, kalman_loglik_and_smoother
    from espmcmc import simulate

    model = get_model("lgssm")
    theta = model.default_theta()
    _, y = simulate(model, theta, 5, make_generator(52))
    kr = kalman_loglik_and_smoother(model, theta, y)
    ps = run_smc(model, theta, y, 200_000, make_generator(53))
    A, Q = model.matrices(theta)[:2]
    t, x_next = 2, np.array([0.7])
    ctx = context_at(model, theta, y, ps, t, x_next, 0)
    om, oc = conditional_smoothing_moments(kr.filt_means[t], kr.filt_covs[t], A, Q, x_next)
    assert ctx.linearized_moments.mean[0] == pytest.approx(om[0], abs=0.02)
    assert ctx.linearized_moments.cov[0, 0] == pytest.approx(oc[0, 0], rel=0.02)


def test_discrete_model_rejects_continuous_families(hmm_problem):
    ctx, _ = _ctx(hmm_problem, t=2, n=3, exclude=0)
    for fam in ("rw-backward", "ind-gauss-backward", "ind-student-t"):
        with pytest.raises(ConfigurationError):
            make_proposal(ProposalSpec(fam), ctx)
    make_proposal(ProposalSpec("flip"), ctx)


def test_linearized_family_needs_linearization(nonlinear_problem):
    ctx, _ = _ctx(nonlinear_problem)
    with pytest.raises(ConfigurationError):
        make_proposal(ProposalSpec("rw-linearized"), ctx)


@pytest.mark.parametrize("family", CONTINUOUS_FAMILIES)
def test_detailed_balance_identity(lgssm_problem, family):
    ctx, ps = _ctx(lgssm_problem)
    prop = make_proposal(ProposalSpec(family), ctx)
    rng = make_generator(54)
    for _ in range(100):
        x = ps.x[ctx.t][int(rng.integers(len(ps.x[ctx.t])))] + rng.normal(0, 1, 1)
        xn, lq_f, lq_r = propose(ProposalSpec(family), ctx, x, rng)
        lhs = ctx.log_target(x)[0] + lq_f + log_acceptance(ctx, prop, x, xn)
        rhs = ctx.log_target(xn)[0] + lq_r + log_acceptance(ctx, prop, xn, x)
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_independent_proposals_importance_weights(lgssm_problem):
    ctx, _ = _ctx(lgssm_problem)
    xs = np.linspace(-3, 3, 7)[:, None]
    for fam in ("ind-gauss-backward", "ind-student-t"):
        prop = make_proposal(ProposalSpec(fam), ctx)
        assert np.allclose(prop.log_importance(xs), ctx.log_target(xs) - prop.log_density(xs))
    boot = make_proposal(ProposalSpec("bootstrap"), ctx)
    assert np.allclose(boot.log_importance(xs), ctx.log_local(xs))


def test_student_t_sampler_matches_its_density(lgssm_problem):
    ctx, _ = _ctx(lgssm_problem)
    prop = IndependentStudentT(ctx, np.array([0.5]), np.array([[2.0]]), 1.0, 5.0)
    draws = prop.sample_many(make_generator(55), 20_000)[:, 0]
    scale = math.sqrt(2.0 * (1 + 1e-9))
    assert stats.kstest(draws, stats.t(df=5.0, loc=0.5, scale=scale).cdf).pvalue > 0.001
    grid = np.linspace(-60, 60, 200_001)[:, None]
    mass = np.exp(prop.log_density(grid)).sum() * (grid[1, 0] - grid[0, 0])
    assert mass == pytest.approx(1.0, abs=2e-3)


def test_flip_and_reject(hmm_problem):
    ctx, _ = _ctx(hmm_problem, t=2, n=3, exclude=0)
    flip = make_proposal(ProposalSpec("flip"), ctx)
    assert flip.sample(np.array([1.0]), None)[0] == 0.0
    rej = make_proposal(ProposalSpec("reject"), ctx)
    assert rej.never_moves
