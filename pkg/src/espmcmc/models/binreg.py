"""Binomial regression with random-walk coefficients.

    Y_t | beta_t ~ Binomial(n_t, p_t),  logit p_t = beta0 + z_t' beta_t
    beta_t = beta_{t-1} + diag(tau) eta_t,  beta_{-1} = 0

Observation records are rows ``[y_t, n_t, z_{1,t}, ..., z_{m,t}]``.
Parameters: ``beta0`` and the variances ``tau2_1, ..., tau2_m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .._util import LOG_2PI, invgamma_logpdf
from ..errors import UnsupportedOperationError
from ..model import GibbsBlock, Linearization, StateSpaceModel, Theta
from .common import conjugate_variance_update


@dataclass(frozen=True)
class BinomialRegression(StateSpaceModel):
    m: int = 4
    beta0_prior_sd: float = 5.0
    tau2_prior: tuple[float, float] = (1.0, 0.5)
    beta0_step: float = 0.1

    name = "binreg"

    @property
    def state_dim(self) -> int:  # type: ignore[override]
        return self.m

    @property
    def param_names(self) -> tuple[str, ...]:  # type: ignore[override]
        return ("beta0",) + tuple(f"tau2_{i + 1}" for i in range(self.m))

    def _tau2(self, theta) -> np.ndarray:
        return np.array([theta[f"tau2_{i + 1}"] for i in range(self.m)], dtype=float)

    def _rw_logpdf(self, diff: np.ndarray, theta) -> np.ndarray:
        v = self._tau2(theta)
        return -0.5 * (self.m * LOG_2PI + np.log(v).sum()) - 0.5 * np.sum(diff * diff / v, axis=-1)

    def log_f1(self, x, theta):
        return self._rw_logpdf(x, theta)

    def log_ft(self, t, x, x_prev, theta):
        return self._rw_logpdf(x - x_prev, theta)

    def log_gt(self, t, y_t, x, theta):
        yv, n, z = y_t[0], y_t[1], y_t[2 : 2 + self.m]
        eta = theta["beta0"] + x @ z
        const = gammaln(n + 1) - gammaln(yv + 1) - gammaln(n - yv + 1)
        return const + yv * eta - n * np.logaddexp(0.0, eta)

    def sample_f1(self, theta, n, rng):
        return np.sqrt(self._tau2(theta)) * rng.standard_normal((n, self.m))

    def sample_ft(self, t, x_prev, theta, rng):
        return x_prev + np.sqrt(self._tau2(theta)) * rng.standard_normal(x_prev.shape)

    def sample_gt(self, t, x, theta, rng):
        raise UnsupportedOperationError("observation records carry covariates; use simulate_design")

    def linearization(self, t, theta):
        return Linearization(h=np.zeros(self.m), H=np.eye(self.m), Sigma=np.diag(self._tau2(theta)))

    def log_prior(self, theta: Theta) -> float:
        b0 = theta["beta0"]
        lp = -0.5 * b0 * b0 / self.beta0_prior_sd**2 - math.log(self.beta0_prior_sd) - 0.5 * LOG_2PI
        for v in self._tau2(theta):
            lp += invgamma_logpdf(float(v), *self.tau2_prior)
        return lp

    def default_theta(self):
        return {"beta0": 0.5, **{f"tau2_{i + 1}": 0.36 for i in range(self.m)}}

    def beta0_logpost(self, b0: float, x: np.ndarray, y: np.ndarray) -> float:
        yv, n, z = y[:, 0], y[:, 1], y[:, 2 : 2 + self.m]
        eta = b0 + np.sum(x * z, axis=1)
        return float(np.sum(yv * eta - n * np.logaddexp(0.0, eta))) - 0.5 * b0 * b0 / self.beta0_prior_sd**2

    def gibbs_blocks(self):
        blocks = []

        def upd_beta0(theta, x, y, rng):
            b0 = theta["beta0"]
            prop = b0 + self.beta0_step * rng.standard_normal()
            log_a = self.beta0_logpost(prop, x, y) - self.beta0_logpost(b0, x, y)
            if math.log(rng.random()) < log_a:
                return {"beta0": float(prop)}, True
            return {}, False

        blocks.append(GibbsBlock("beta0", ("beta0",), upd_beta0))
        for i in range(self.m):
            key = f"tau2_{i + 1}"

            def upd(theta, x, y, rng, i=i, key=key):
                steps = np.diff(np.concatenate([[0.0], x[:, i]]))
                return {key: conjugate_variance_update(steps, self.tau2_prior, rng)}, True

            blocks.append(GibbsBlock(key, (key,), upd, exact=True))
        return blocks

    def simulate_design(
        self,
        theta: Theta,
        T: int,
        rng: np.random.Generator,
        trials: tuple[int, float] = (100, 0.5),
    ):
        """Simulate states and observation records: n_t ~ Bin(trials), z ~ U(-1, 1)."""
        n = rng.binomial(trials[0], trials[1], size=T).astype(float)
        z = rng.uniform(-1.0, 1.0, size=(T, self.m))
        x = np.cumsum(np.sqrt(self._tau2(theta)) * rng.standard_normal((T, self.m)), axis=0)
        eta = theta["beta0"] + np.sum(x * z, axis=1)
        p = 1.0 / (1.0 + np.exp(-eta))
        yv = rng.binomial(n.astype(np.int64), p).astype(float)
        return x, np.column_stack([yv, n, z])
