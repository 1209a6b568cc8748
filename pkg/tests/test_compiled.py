"""The compiled engine consumes the same random stream as the reference path and returns the same output."""

import numpy as np
import pytest

from espmcmc import _compiled as C
from espmcmc import get_model, run_backward_pass, run_csmc, run_smc, simulate
from espmcmc.backward import extract_trajectory
from espmcmc.csmc import RetainedTrajectory
from espmcmc.proposals import ProposalSpec
from espmcmc.rng import make_generator
from espmcmc.samplers import backward_simulation
from espmcmc.smc import RetainedPath

pytestmark = pytest.mark.skipif(not C.HAVE_NUMBA, reason="numba not installed")

CASES = [
    ("nonlinear", {}, None),
    ("lgssm", {}, None),
    ("sv", {}, {"mu": -0.3, "tau": 0.9, "phi": 0.95}),
    ("sv", {"adapted": False}, {"mu": -0.3, "tau": 0.9, "phi": 0.95}),
]
SPECS = [ProposalSpec(f) for f in C.FAMILY_CODES] + [ProposalSpec("ind-student-t", moments="linearized")]


def _close(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b) / (1 + np.abs(b))) < 1e-9


@pytest.mark.parametrize("name,options,theta", CASES)
def test_engines_agree(name, options, theta):
    model = get_model(name, **options)
    theta = theta or model.default_theta()
    _, y = simulate(model, theta, 20, make_generator(111))
    for spec in SPECS:
        if not C.supports(model, spec.family, spec.moments):
            continue
        r1, r2 = make_generator(112), make_generator(112)
        ps1, ps2 = run_smc(model, theta, y, 7, r1), C.run_smc(model, theta, y, 7, r2)
        assert _close(np.stack(ps1.x), np.stack(ps2.x))
        assert _close(ps1.log_weight_sums, ps2.log_weight_sums)

        e1 = run_backward_pass(model, theta, y, ps1, 4, spec, r1)
        e2 = C.run_backward_pass(model, theta, y, ps2, 4, spec, r2)
        assert _close(np.stack(e1.xtilde), np.stack(e2.xtilde)), spec
        assert np.array_equal(e1.B, e2.B)

        rt = RetainedTrajectory.from_extended(e1)
        c1 = run_csmc(rt, model, theta, y, 7, 4, spec, r1)
        c2 = C.run_csmc(rt, model, theta, y, 7, 4, spec, r2)
        assert _close(np.stack(c1.xtilde), np.stack(c2.xtilde)), spec
        assert _close(np.stack(c1.ps.x), np.stack(c2.ps.x))
        assert np.array_equal(c1.B, c2.B) and c1.n_accepted == c2.n_accepted

        b1, b2 = backward_simulation(model, theta, c1.ps, r1), C.backward_simulation(model, theta, c2.ps, r2)
        assert np.array_equal(b1.B, b2.B)
        slots = r1.integers(7, size=20)
        assert np.array_equal(slots, r2.integers(7, size=20))
        p1 = run_smc(model, theta, y, 7, r1, retained=RetainedPath(extract_trajectory(b1), slots))
        p2 = C.run_smc(model, theta, y, 7, r2, retained=RetainedPath(extract_trajectory(b2), slots))
        assert _close(np.stack(p1.x), np.stack(p2.x))
        assert r1.random() == r2.random(), "random streams out of step"


def test_supports():
    assert C.supports(get_model("lgssm"), "rw-linearized")
    assert not C.supports(get_model("nonlinear"), "rw-linearized")
    assert not C.supports(get_model("hmm2"), "bootstrap")
    assert not C.supports(get_model("binreg"), "bootstrap")
