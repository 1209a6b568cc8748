import numpy as np
import pytest

from espmcmc import ProposalSpec, RetainedTrajectory, extract_trajectory, run_backward_pass, run_csmc
from espmcmc.errors import ConfigurationError, InputError
from espmcmc.oracles import hmm_exact_smoothing
from espmcmc.rng import make_generator


@pytest.mark.parametrize("family", ["bootstrap", "rw-backward", "ind-gauss-linearized", "reject"])
def test_retained_trajectory_is_preserved(lgssm_problem, rng, family):
    model, theta, x, y = lgssm_problem
    T = y.shape[0]
    ext = run_csmc(RetainedTrajectory(x, 2), model, theta, y, 5, 3, ProposalSpec(family), rng)
    for t in range(T - 1):
        assert np.array_equal(ext.xtilde[t][-1], x[t])
        assert ext.xtilde[t].shape == (3, 1)
    assert ext.B[-1] == 2
    assert np.array_equal(ext.ps.x[-1][2], x[-1])
    assert ext.ps.ancestors[-1][2] >= 0
    for lw, W in zip(ext.ps.logw, ext.ps.W):
        assert W.sum() == pytest.approx(1.0)


def test_reject_kernel_places_the_path_in_the_selected_slots(lgssm_problem, rng):
    model, theta, x, y = lgssm_problem
    ext = run_csmc(RetainedTrajectory(x, 0), model, theta, y, 4, 2, ProposalSpec("reject"), rng)
    for t in range(y.shape[0] - 1):
        assert np.array_equal(ext.ps.x[t][ext.B[t]], x[t])


def test_input_validation(lgssm_problem, rng):
    model, theta, x, y = lgssm_problem
    spec = ProposalSpec()
    with pytest.raises(InputError):
        run_csmc(RetainedTrajectory(x[:-1], 0), model, theta, y, 4, 2, spec, rng)
    with pytest.raises(ConfigurationError):
        run_csmc(RetainedTrajectory(x, 0), model, theta, y, 1, 2, spec, rng)
    with pytest.raises(InputError):
        run_csmc(RetainedTrajectory(x, 7), model, theta, y, 4, 2, spec, rng)


def test_csmc_then_backward_pass_leaves_the_smoothing_law_invariant(hmm_problem):
    """Short-run version of the invariance check on the two-state chain."""
    model, theta, _, y = hmm_problem
    exact = hmm_exact_smoothing(model, theta, y).marginals[:, 1]
    rng = make_generator(41)
    path = np.zeros((y.shape[0], 1))
    retained = RetainedTrajectory(path, 0)
    acc = np.zeros(y.shape[0])
    n = 8000
    for i in range(n + 500):
        ext = run_csmc(retained, model, theta, y, 3, 2, ProposalSpec("flip"), rng)
        ext = run_backward_pass(model, theta, y, ext.ps, 2, ProposalSpec("flip"), rng)
        retained = RetainedTrajectory.from_extended(ext)
        if i >= 500:
            acc += retained.path[:, 0]
    assert np.max(np.abs(acc / n - exact)) < 0.04


def test_from_extended_round_trip(lgssm_problem, rng):
    model, theta, x, y = lgssm_problem
    ext = run_csmc(RetainedTrajectory(x, 1), model, theta, y, 4, 2, ProposalSpec(), rng)
    rt = RetainedTrajectory.from_extended(ext)
    assert np.array_equal(rt.path, extract_trajectory(ext))
    assert rt.b_last == 1
