"""The classic univariate nonlinear growth benchmark.

    y_t = x_t^2 / 20 + sigma * eps_t
    x_t = x_{t-1}/2 + 25 x_{t-1} / (1 + x_{t-1}^2) + 8 cos(1.2 t) + tau * eta_t

with ``x_0 ~ N(0, 5)``. The cosine uses the 0-based index of the *new*
state, which reproduces the usual 1-based recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._util import invgamma_logpdf, norm_logpdf
from ..model import GibbsBlock, StateSpaceModel, Theta
from .common import conjugate_variance_update


def transition_mean(t: int, x_prev: np.ndarray) -> np.ndarray:
    return x_prev * (0.5 + 25.0 / (1.0 + x_prev * x_prev)) + 8.0 * math.cos(1.2 * t)


@dataclass(frozen=True)
class NonlinearBenchmark(StateSpaceModel):
    prior_shape: float = 1.0
    prior_scale: float = 0.1
    init_var: float = 5.0

    name = "nonlinear"
    state_dim = 1
    param_names = ("sigma2", "tau2")

    def log_f1(self, x, theta):
        return norm_logpdf(x[..., 0], 0.0, self.init_var)

    def log_ft(self, t, x, x_prev, theta):
        return norm_logpdf(x[..., 0], transition_mean(t, x_prev[..., 0]), theta["tau2"])

    def log_gt(self, t, y_t, x, theta):
        x0 = x[..., 0]
        return norm_logpdf(y_t[0], 0.05 * (x0 * x0), theta["sigma2"])

    def sample_f1(self, theta, n, rng):
        return math.sqrt(self.init_var) * rng.standard_normal((n, 1))

    def sample_ft(self, t, x_prev, theta, rng):
        return transition_mean(t, x_prev) + math.sqrt(theta["tau2"]) * rng.standard_normal(x_prev.shape)

    def sample_gt(self, t, x, theta, rng):
        return x[..., :1] ** 2 / 20.0 + math.sqrt(theta["sigma2"]) * rng.standard_normal(x[..., :1].shape)

    def log_prior(self, theta: Theta) -> float:
        a, b = self.prior_shape, self.prior_scale
        return invgamma_logpdf(theta["sigma2"], a, b) + invgamma_logpdf(theta["tau2"], a, b)

    def default_theta(self):
        return {"sigma2": 1.0, "tau2": 10.0}

    # -- residuals for the conjugate updates ------------------------------
    @staticmethod
    def observation_residuals(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return y[:, 0] - x[:, 0] ** 2 / 20.0

    @staticmethod
    def state_residuals(x: np.ndarray) -> np.ndarray:
        t = np.arange(1, x.shape[0])
        mean = 0.5 * x[:-1, 0] + 25.0 * x[:-1, 0] / (1.0 + x[:-1, 0] ** 2) + 8.0 * np.cos(1.2 * t)
        return x[1:, 0] - mean

    def gibbs_blocks(self):
        prior = (self.prior_shape, self.prior_scale)

        def upd_sigma2(theta, x, y, rng):
            return {"sigma2": conjugate_variance_update(self.observation_residuals(x, y), prior, rng)}, True

        def upd_tau2(theta, x, y, rng):
            return {"tau2": conjugate_variance_update(self.state_residuals(x), prior, rng)}, True

        return [
            GibbsBlock("sigma2", ("sigma2",), upd_sigma2, exact=True),
            GibbsBlock("tau2", ("tau2",), upd_tau2, exact=True),
        ]
