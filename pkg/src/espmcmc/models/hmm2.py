"""Two-state hidden Markov chain with binary emissions.

States and observations take values in {0, 1} (stored as floats). The
"densities" are probability masses, so every algorithm runs unchanged; the
MCMC moves use the state-flip proposal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import StateSpaceModel


def _log(p):
    with np.errstate(divide="ignore"):
        return np.log(p)


@dataclass(frozen=True)
class DiscreteHMM2(StateSpaceModel):
    name = "hmm2"
    state_dim = 1
    discrete = True
    param_names = ("pi1", "p01", "p10", "e0", "e1")

    @staticmethod
    def transition_matrix(theta) -> np.ndarray:
        return np.array([[1 - theta["p01"], theta["p01"]], [theta["p10"], 1 - theta["p10"]]])

    @staticmethod
    def emission_matrix(theta) -> np.ndarray:
        """Row x gives P(y = 0 | x), P(y = 1 | x)."""
        return np.array([[1 - theta["e0"], theta["e0"]], [1 - theta["e1"], theta["e1"]]])

    @staticmethod
    def initial_probs(theta) -> np.ndarray:
        return np.array([1 - theta["pi1"], theta["pi1"]])

    def log_f1(self, x, theta):
        p1 = theta["pi1"]
        return _log(np.where(x[..., 0] > 0.5, p1, 1 - p1))

    def log_ft(self, t, x, x_prev, theta):
        prev1 = x_prev[..., 0] > 0.5
        p_one = np.where(prev1, 1 - theta["p10"], theta["p01"])
        return _log(np.where(x[..., 0] > 0.5, p_one, 1 - p_one))

    def log_gt(self, t, y_t, x, theta):
        p_one = np.where(x[..., 0] > 0.5, theta["e1"], theta["e0"])
        return _log(p_one if y_t[0] > 0.5 else 1 - p_one)

    def sample_f1(self, theta, n, rng):
        return (rng.random((n, 1)) < theta["pi1"]).astype(float)

    def sample_ft(self, t, x_prev, theta, rng):
        p_one = np.where(x_prev > 0.5, 1 - theta["p10"], theta["p01"])
        return (rng.random(x_prev.shape) < p_one).astype(float)

    def sample_gt(self, t, x, theta, rng):
        p_one = np.where(x[..., :1] > 0.5, theta["e1"], theta["e0"])
        return (rng.random(p_one.shape) < p_one).astype(float)

    def default_theta(self):
        return {"pi1": 0.5, "p01": 0.2, "p10": 0.3, "e0": 0.2, "e1": 0.7}
