"""Scalar linear-Gaussian AR(1) state-space model, used as an oracle-checkable fixture.

    x_0 ~ N(0, p0),  x_t = a x_{t-1} + sqrt(q) eta_t,  y_t = x_t + sqrt(r) eps_t
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._util import norm_logpdf
from ..model import Linearization, StateSpaceModel


@dataclass(frozen=True)
class LinearGaussianSSM(StateSpaceModel):
    p0: float = 1.0

    name = "lgssm"
    state_dim = 1
    param_names = ("a", "q", "r")

    def log_f1(self, x, theta):
        return norm_logpdf(x[..., 0], 0.0, self.p0)

    def log_ft(self, t, x, x_prev, theta):
        return norm_logpdf(x[..., 0], theta["a"] * x_prev[..., 0], theta["q"])

    def log_gt(self, t, y_t, x, theta):
        return norm_logpdf(y_t[0], x[..., 0], theta["r"])

    def sample_f1(self, theta, n, rng):
        return math.sqrt(self.p0) * rng.standard_normal((n, 1))

    def sample_ft(self, t, x_prev, theta, rng):
        return theta["a"] * x_prev + math.sqrt(theta["q"]) * rng.standard_normal(x_prev.shape)

    def sample_gt(self, t, x, theta, rng):
        return x[..., :1] + math.sqrt(theta["r"]) * rng.standard_normal(x[..., :1].shape)

    def linearization(self, t, theta):
        return Linearization(h=np.zeros(1), H=np.array([[theta["a"]]]), Sigma=np.array([[theta["q"]]]))

    def default_theta(self):
        return {"a": 0.8, "q": 1.0, "r": 1.0}

    def matrices(self, theta):
        """(A, Q, C, R, m0, P0) for the Kalman oracle."""
        one = np.ones((1, 1))
        return (theta["a"] * one, theta["q"] * one, one, theta["r"] * one, np.zeros(1), self.p0 * one)
