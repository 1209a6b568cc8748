"""Stochastic volatility model in the standardised parametrisation.

    y_t = exp(mu + tau x_t) eps_t,   x_t = phi x_{t-1} + eta_t,   x_0 ~ N(0, 1/(1 - phi^2))

Priors: ``phi ~ U(-1, 1)``, ``tau`` half-t with 4 degrees of freedom (unit
scale), ``mu ~ N(0, 2^2)``.

The particle filter uses a Gaussian approximation to the locally optimal
importance density ``p(x_t | x_{t-1}, y_t)``: one Newton step from the
prior mean. Parameters are updated by independence Metropolis-Hastings
steps with Laplace-approximation proposals for the blocks ``(mu, tau)`` and
``phi``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from .._util import LOG_2PI, norm_logpdf
from ..errors import InputError
from ..model import GibbsBlock, Linearization, StateSpaceModel, Theta
from .common import half_t_logpdf

log = logging.getLogger(__name__)


def load_returns(path) -> np.ndarray:
    """Read a plain-text file with one return per line (no header) into a (T, 1) array."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"returns file not found: {p}")
    vals = []
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        try:
            vals.append(float(s))
        except ValueError:
            raise InputError(f"{p}:{lineno}: not a number: {s!r}") from None
    if len(vals) < 2:
        raise InputError(f"{p}: need at least 2 returns, found {len(vals)}")
    return np.asarray(vals)[:, None]


def _log_obs(y: float, s: np.ndarray) -> np.ndarray:
    """log N(y; 0, exp(2 s)) with s = mu + tau x."""
    return -0.5 * LOG_2PI - s - 0.5 * y * y * np.exp(-2.0 * s)


@dataclass(frozen=True)
class StochasticVolatility(StateSpaceModel):
    adapted: bool = True
    mu_prior_sd: float = 2.0
    tau_prior_dof: float = 4.0

    name = "sv"
    state_dim = 1
    param_names = ("mu", "tau", "phi")

    @property
    def bootstrap_importance(self) -> bool:  # type: ignore[override]
        return not self.adapted

    # -- densities ---------------------------------------------------------
    def log_f1(self, x, theta):
        phi = theta["phi"]
        return norm_logpdf(x[..., 0], 0.0, 1.0 / (1.0 - phi * phi))

    def log_ft(self, t, x, x_prev, theta):
        return norm_logpdf(x[..., 0], theta["phi"] * x_prev[..., 0], 1.0)

    def log_gt(self, t, y_t, x, theta):
        return _log_obs(y_t[0], theta["mu"] + theta["tau"] * x[..., 0])

    def sample_f1(self, theta, n, rng):
        phi = theta["phi"]
        return rng.standard_normal((n, 1)) / math.sqrt(1.0 - phi * phi)

    def sample_ft(self, t, x_prev, theta, rng):
        return theta["phi"] * x_prev + rng.standard_normal(x_prev.shape)

    def sample_gt(self, t, x, theta, rng):
        s = theta["mu"] + theta["tau"] * x[..., :1]
        return np.exp(s) * rng.standard_normal(s.shape)

    # -- adapted importance densities -----------------------------------------
    def optimal_importance_moments(self, y: float, prior_mean, prior_var, theta):
        """Gaussian approximation to p(x | y) with prior N(prior_mean, prior_var).

        log g is expanded to second order around the prior mean and combined
        with the Gaussian prior. Where the curvature would make the precision
        non-positive the prior itself is returned.
        """
        mu, tau = theta["mu"], theta["tau"]
        x0 = np.asarray(prior_mean, dtype=float)
        a = y * y * np.exp(-2.0 * (mu + tau * x0))
        grad = tau * (a - 1.0)
        curv = -2.0 * tau * tau * a
        prec = 1.0 / prior_var - curv
        ok = prec > 0
        if not np.all(ok):
            log.warning("non-concave expansion in the SV importance density; using the transition")
        safe = np.where(ok, prec, 1.0 / prior_var)
        mean = np.where(ok, x0 + grad / safe, x0)
        var = 1.0 / safe
        return mean, var

    def sv_optimal_importance(self, t: int, x_prev, y_t, theta):
        """Return ``(sampler(rng), logpdf(x))`` for the approximate optimal importance density."""
        y = float(np.asarray(y_t).ravel()[0])
        if t == 0:
            phi = theta["phi"]
            mean, var = self.optimal_importance_moments(y, np.zeros(1), np.full(1, 1.0 / (1.0 - phi * phi)), theta)
        else:
            xp = np.asarray(x_prev, dtype=float)[..., 0]
            mean, var = self.optimal_importance_moments(y, theta["phi"] * xp, np.ones_like(xp), theta)

        def sampler(rng):
            return (mean + np.sqrt(var) * rng.standard_normal(np.shape(mean)))[..., None]

        def logpdf(x):
            return norm_logpdf(np.asarray(x)[..., 0], mean, var)

        return sampler, logpdf

    def sample_m1(self, y_t, theta, n, rng):
        if not self.adapted:
            return self.sample_f1(theta, n, rng)
        phi = theta["phi"]
        mean, var = self.optimal_importance_moments(y_t[0], 0.0, 1.0 / (1.0 - phi * phi), theta)
        return mean + math.sqrt(var) * rng.standard_normal((n, 1))

    def log_m1(self, y_t, x, theta):
        if not self.adapted:
            return self.log_f1(x, theta)
        phi = theta["phi"]
        mean, var = self.optimal_importance_moments(y_t[0], 0.0, 1.0 / (1.0 - phi * phi), theta)
        return norm_logpdf(x[..., 0], mean, var)

    def sample_mt(self, t, y_t, x_prev, theta, rng):
        if not self.adapted:
            return self.sample_ft(t, x_prev, theta, rng)
        mean, var = self.optimal_importance_moments(y_t[0], theta["phi"] * x_prev[..., 0], 1.0, theta)
        return (mean + np.sqrt(var) * rng.standard_normal(mean.shape))[..., None]

    def log_mt(self, t, y_t, x, x_prev, theta):
        if not self.adapted:
            return self.log_ft(t, x, x_prev, theta)
        mean, var = self.optimal_importance_moments(y_t[0], theta["phi"] * x_prev[..., 0], 1.0, theta)
        return norm_logpdf(x[..., 0], mean, var)

    def linearization(self, t, theta):
        return Linearization(h=np.zeros(1), H=np.array([[theta["phi"]]]), Sigma=np.eye(1))

    # -- priors and parameter conditionals -----------------------------------
    def log_prior(self, theta: Theta) -> float:
        mu, tau, phi = theta["mu"], theta["tau"], theta["phi"]
        if not -1.0 < phi < 1.0 or tau <= 0:
            return -math.inf
        return (
            float(norm_logpdf(mu, 0.0, self.mu_prior_sd**2))
            + half_t_logpdf(tau, self.tau_prior_dof)
            - math.log(2.0)
        )

    def default_theta(self):
        return {"mu": -0.95, "tau": 0.18, "phi": 0.97}

    def mu_tau_logpost(self, mu: float, tau: float, x: np.ndarray, y: np.ndarray) -> float:
        """log p(mu, tau | x, y) up to a constant."""
        if tau <= 0:
            return -math.inf
        s = mu + tau * x[:, 0]
        nu = self.tau_prior_dof
        return (
            float(np.sum(_log_obs(y[:, 0], s)))
            - 0.5 * mu * mu / self.mu_prior_sd**2
            - 0.5 * (nu + 1) * math.log1p(tau * tau / nu)
        )

    def mu_tau_derivatives(self, mu: float, tau: float, x: np.ndarray, y: np.ndarray):
        """Gradient and Hessian of :meth:`mu_tau_logpost` in (mu, tau)."""
        xs = x[:, 0]
        a = y[:, 0] ** 2 * np.exp(-2.0 * (mu + tau * xs))
        r = a - 1.0
        nu = self.tau_prior_dof
        v = self.mu_prior_sd**2
        g = np.array([r.sum() - mu / v, (xs * r).sum() - (nu + 1) * tau / (nu + tau * tau)])
        h = -2.0 * np.array([[a.sum(), (a * xs).sum()], [(a * xs).sum(), (a * xs * xs).sum()]])
        h[0, 0] -= 1.0 / v
        h[1, 1] -= (nu + 1) * (nu - tau * tau) / (nu + tau * tau) ** 2
        return g, h

    @staticmethod
    def phi_logpost(phi: float, x: np.ndarray) -> float:
        if not -1.0 < phi < 1.0:
            return -math.inf
        xs = x[:, 0]
        e = xs[1:] - phi * xs[:-1]
        return 0.5 * math.log1p(-phi * phi) - 0.5 * (1 - phi * phi) * xs[0] ** 2 - 0.5 * float(e @ e)

    @staticmethod
    def phi_derivatives(phi: float, x: np.ndarray):
        xs = x[:, 0]
        e = xs[1:] - phi * xs[:-1]
        one = 1.0 - phi * phi
        g = -phi / one + phi * xs[0] ** 2 + float(xs[:-1] @ e)
        h = -(1.0 + phi * phi) / one**2 + xs[0] ** 2 - float(xs[:-1] @ xs[:-1])
        return np.array([g]), np.array([[h]])

    def gibbs_blocks(self):
        def upd_mu_tau(theta, x, y, rng):
            return laplace_independence_step(
                _MuTau(self, x, y), np.array([theta["mu"], theta["tau"]]), ("mu", "tau"), rng
            )

        def upd_phi(theta, x, y, rng):
            return laplace_independence_step(_Phi(self, x), np.array([theta["phi"]]), ("phi",), rng)

        return [GibbsBlock("mu_tau", ("mu", "tau"), upd_mu_tau), GibbsBlock("phi", ("phi",), upd_phi)]


# ---------------------------------------------------------------------------
# Laplace independence Metropolis-Hastings
# ---------------------------------------------------------------------------


class _MuTau:
    """(mu, tau) conditional; optimised over (mu, log tau)."""

    def __init__(self, model: StochasticVolatility, x, y):
        self.m, self.x, self.y = model, x, y

    def logpost(self, v):
        return self.m.mu_tau_logpost(v[0], v[1], self.x, self.y)

    def derivs(self, v):
        return self.m.mu_tau_derivatives(v[0], v[1], self.x, self.y)

    @staticmethod
    def to_z(v):
        return np.array([v[0], math.log(v[1])])

    @staticmethod
    def from_z(z):
        # first and second derivatives of the inverse map, elementwise
        tau = math.exp(z[1])
        return np.array([z[0], tau]), np.array([1.0, tau]), np.array([0.0, tau])


class _Phi:
    """phi conditional; optimised over atanh(phi)."""

    def __init__(self, model: StochasticVolatility, x):
        self.m, self.x = model, x

    def logpost(self, v):
        return self.m.phi_logpost(v[0], self.x)

    def derivs(self, v):
        return self.m.phi_derivatives(v[0], self.x)

    @staticmethod
    def to_z(v):
        return np.array([math.atanh(v[0])])

    @staticmethod
    def from_z(z):
        phi = math.tanh(z[0])
        d1 = 1.0 - phi * phi
        return np.array([phi]), np.array([d1]), np.array([-2.0 * phi * d1])


def find_mode(target, start: np.ndarray, gtol: float = 1e-8):
    """Maximise ``target.logpost`` over the unconstrained coordinates; returns (mode, gradient at mode)."""

    def f(z):
        v, _, _ = target.from_z(z)
        lp = target.logpost(v)
        return -lp if np.isfinite(lp) else 1e300

    def jac(z):
        v, d1, _ = target.from_z(z)
        g, _ = target.derivs(v)
        return -(g * d1)

    def hess(z):
        v, d1, d2 = target.from_z(z)
        g, h = target.derivs(v)
        return -(h * np.outer(d1, d1) + np.diag(g * d2))

    res = optimize.minimize(f, target.to_z(start), jac=jac, hess=hess, method="trust-exact", options={"gtol": gtol})
    v, _, _ = target.from_z(res.x)
    g, h = target.derivs(v)
    # the tolerance above is in z; near a boundary dz/dv is large, so polish in v
    for _ in range(20):
        if np.max(np.abs(g)) < gtol:
            break
        try:
            cand = v - np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            break
        if not np.isfinite(target.logpost(cand)):
            break
        g_new, h_new = target.derivs(cand)
        if np.max(np.abs(g_new)) >= np.max(np.abs(g)):
            break
        v, g, h = cand, g_new, h_new
    return v, g


def laplace_proposal(target, start: np.ndarray):
    """Mode and covariance of the Laplace approximation in the original coordinates.

    If the negative Hessian at the mode is not positive definite the
    eigenvalues are replaced by their absolute values and the covariance is
    doubled; if that still fails ``None`` is returned.
    """
    mode, _ = find_mode(target, start)
    _, h = target.derivs(mode)
    prec = -h
    try:
        return mode, np.linalg.inv(np.linalg.cholesky(prec)).T @ np.linalg.inv(np.linalg.cholesky(prec))
    except np.linalg.LinAlgError:
        pass
    lam, vec = np.linalg.eigh(prec)
    lam = np.abs(lam)
    if np.min(lam) <= 1e-12 * max(1.0, np.max(lam)):
        return None
    log.warning("Laplace precision not positive definite; widening the proposal")
    return mode, 2.0 * (vec / lam) @ vec.T


def _gauss_logpdf(v, mean, chol):
    z = np.linalg.solve(chol, v - mean)
    return -0.5 * float(z @ z) - float(np.log(np.diag(chol)).sum())


def laplace_independence_step(target, current: np.ndarray, keys, rng, rw_step: float = 0.1):
    """One independence MH step with a Laplace proposal; random-walk fallback."""
    lap = laplace_proposal(target, current)
    if lap is None:
        log.warning("Laplace approximation failed; using a random-walk step")
        z = target.to_z(current)
        zp = z + rw_step * rng.standard_normal(z.shape)
        vp, d1p, _ = target.from_z(zp)
        _, d1, _ = target.from_z(z)
        # proposal is symmetric in z, so the ratio carries the Jacobian of the map
        log_a = target.logpost(vp) - target.logpost(current) + np.log(np.abs(d1p)).sum() - np.log(np.abs(d1)).sum()
        accepted = math.log(rng.random()) < log_a
        return (dict(zip(keys, map(float, vp))) if accepted else {}), bool(accepted)
    mode, cov = lap
    chol = np.linalg.cholesky(cov)
    prop = mode + chol @ rng.standard_normal(mode.shape)
    lp_new = target.logpost(prop)
    if not np.isfinite(lp_new):
        rng.random()
        return {}, False
    log_a = lp_new - target.logpost(current) + _gauss_logpdf(current, mode, chol) - _gauss_logpdf(prop, mode, chol)
    accepted = math.log(rng.random()) < log_a
    return (dict(zip(keys, map(float, prop))) if accepted else {}), bool(accepted)
