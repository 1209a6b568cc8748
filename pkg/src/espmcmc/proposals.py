"""Proposal families for the backward Metropolis-Hastings kernels.

Each family is turned into a proposal object for one target context (one
time index of one backward pass or conditional SMC sweep); moment estimates
are computed once per context and reused across the chain's steps.

Families
--------
``rw-backward``           random walk, covariance from backward-weighted particles
``rw-linearized``         random walk, covariance from the linearised smoother
``ind-gauss-backward``    independent Gaussian, moments from backward weights
``ind-gauss-linearized``  independent Gaussian, linearised moments
``ind-student-t``         independent Student-t (moments from ``moments`` source)
``bootstrap``             mixture of transitions from the previous particles
``flip``                  deterministic state flip for binary-state models
``reject``                kernel that never moves (diagnostic)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from ._util import logsumexp, mvn_logpdf, mvt_logpdf, normalize_log
from .errors import (
    ConfigurationError,
    DegenerateWeightsError,
    ProposalError,
    SingularInnovationError,
)
from .model import Linearization

if TYPE_CHECKING:
    from .backward import BackwardTargetContext

FAMILIES = (
    "rw-backward",
    "rw-linearized",
    "ind-gauss-backward",
    "ind-gauss-linearized",
    "ind-student-t",
    "bootstrap",
    "flip",
    "reject",
)
LINEARIZED = ("rw-linearized", "ind-gauss-linearized")
CONTINUOUS_FAMILIES = FAMILIES[:6]

# short names used in result tables
SHORT_NAMES = {
    "bootstrap": "Boot",
    "rw-backward": "RW1",
    "rw-linearized": "RW2",
    "ind-gauss-backward": "Ind1",
    "ind-gauss-linearized": "Ind2",
    "ind-student-t": "IndT",
    "flip": "Flip",
    "reject": "Reject",
}


@dataclass(frozen=True)
class SmoothingMoments:
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class ProposalSpec:
    """Proposal family plus tuning.

    ``scale`` multiplies the estimated covariance; ``None`` means the family
    default (``2.38**d / d`` for random walks, 1 otherwise). ``moments`` picks
    the moment source of the Student-t family.
    """

    family: str = "bootstrap"
    scale: float | None = None
    dof: float = 4.0
    moments: str = "backward"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown proposal family {self.family!r}; choose from {FAMILIES}")
        if self.scale is not None and not self.scale > 0:
            raise ConfigurationError("proposal scale must be > 0")
        if not self.dof > 2:
            raise ConfigurationError("Student-t degrees of freedom must exceed 2")
        if self.moments not in ("backward", "linearized"):
            raise ConfigurationError(f"unknown moment source {self.moments!r}")

    @property
    def needs_linearization(self) -> bool:
        return self.family in LINEARIZED or (self.family == "ind-student-t" and self.moments == "linearized")

    def scale_for(self, d: int) -> float:
        if self.scale is not None:
            return float(self.scale)
        if self.family.startswith("rw-"):
            return 2.38**d / d
        return 1.0


# ---------------------------------------------------------------------------
# moment estimators
# ---------------------------------------------------------------------------


def jitter(cov: np.ndarray) -> np.ndarray:
    """Add ``1e-9 * trace / d`` (or ``1e-12`` when the trace is 0) to the diagonal."""
    d = cov.shape[0]
    tr = float(np.trace(cov))
    eps = 1e-9 * tr / d if tr > 0 else 1e-12
    return cov + eps * np.eye(d)


def _weighted_moments(x: np.ndarray, logw: np.ndarray) -> SmoothingMoments:
    W, lsum = normalize_log(logw)
    if not np.isfinite(lsum):
        raise DegenerateWeightsError(what="moment weights")
    mean = W @ x
    diff = x - mean
    cov = (diff * W[:, None]).T @ diff
    cov = 0.5 * (cov + cov.T)
    return SmoothingMoments(mean, cov)


def _drop(arr: np.ndarray, exclude: int | None) -> np.ndarray:
    if exclude is None:
        return arr
    return np.delete(arr, exclude, axis=0)


def backward_weight_moments(
    particles: np.ndarray,
    logw: np.ndarray,
    x_next: np.ndarray,
    model,
    theta,
    t: int,
    exclude: int | None = None,
) -> SmoothingMoments:
    """Weighted mean/covariance with weights ``w_t^i f_{t+1}(x_next | x_t^i)``, slot ``exclude`` left out.

    The returned covariance has the jitter rule applied.
    """
    x = _drop(np.asarray(particles, dtype=float), exclude)
    lw = _drop(np.asarray(logw, dtype=float), exclude)
    if x.shape[0] == 0:
        raise DegenerateWeightsError(t, "backward weights (no particles left after exclusion)")
    lbw = lw + model.log_ft(t + 1, x_next, x, theta)
    lbw = np.where(np.isnan(lbw), -np.inf, lbw)
    try:
        m = _weighted_moments(x, lbw)
    except DegenerateWeightsError:
        raise DegenerateWeightsError(t, "backward weights") from None
    return SmoothingMoments(m.mean, jitter(m.cov))


def filtered_moments(particles: np.ndarray, logw: np.ndarray, exclude: int | None = None) -> SmoothingMoments:
    """Filtered mean/covariance from forward weights, excluding slot ``exclude`` (no jitter)."""
    x = _drop(np.asarray(particles, dtype=float), exclude)
    lw = _drop(np.asarray(logw, dtype=float), exclude)
    if x.shape[0] == 0:
        raise DegenerateWeightsError(what="filter weights (no particles left after exclusion)")
    return _weighted_moments(x, lw)


def linearization_moments(
    filt_mean: np.ndarray,
    filt_cov: np.ndarray,
    coeffs: Linearization,
    x_next: np.ndarray,
) -> SmoothingMoments:
    """Condition the filtered Gaussian on ``x_next`` through the linearised transition."""
    m = np.atleast_1d(np.asarray(filt_mean, dtype=float))
    S = np.atleast_2d(np.asarray(filt_cov, dtype=float))
    h = np.atleast_1d(np.asarray(coeffs.h, dtype=float))
    H = np.atleast_2d(np.asarray(coeffs.H, dtype=float))
    Sig = np.atleast_2d(np.asarray(coeffs.Sigma, dtype=float))
    R = H @ S @ H.T + Sig
    R = 0.5 * (R + R.T)
    try:
        cR = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise SingularInnovationError("innovation covariance R is not positive definite") from None
    if np.min(np.diag(cR)) <= 1e-150:
        raise SingularInnovationError("innovation covariance R is singular")
    e = np.atleast_1d(x_next) - h - H @ m
    SHt = S @ H.T
    # K = S H^T R^{-1} via two triangular solves
    K = np.linalg.solve(cR.T, np.linalg.solve(cR, SHt.T)).T
    mean = m + K @ e
    cov = S - K @ H @ S
    return SmoothingMoments(mean, 0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# proposal objects
# ---------------------------------------------------------------------------


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        try:
            return np.linalg.cholesky(jitter(cov))
        except np.linalg.LinAlgError:
            raise ProposalError("proposal covariance is not positive definite after jitter") from None


class Proposal:
    """Proposal bound to one target context.

    ``log_q(a, b)`` is the log density of proposing ``b`` from ``a``.
    Independent proposals additionally vectorise sampling and the
    target-to-proposal log ratio used by the fast chain path.
    """

    independent = False
    deterministic_flip = False
    never_moves = False

    def __init__(self, ctx: "BackwardTargetContext"):
        self.ctx = ctx

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def log_q(self, x_from: np.ndarray, x_to: np.ndarray) -> float:
        raise NotImplementedError


class RandomWalk(Proposal):
    def __init__(self, ctx, cov: np.ndarray, scale: float):
        super().__init__(ctx)
        self.chol = _cholesky(jitter(np.asarray(cov) * scale))

    def sample(self, x, rng):
        z = rng.standard_normal(x.shape[-1])
        return x + self.chol @ z

    def log_q(self, x_from, x_to):
        return float(mvn_logpdf(np.atleast_2d(x_to), np.atleast_2d(x_from), self.chol)[0])


class IndependentGaussian(Proposal):
    independent = True

    def __init__(self, ctx, mean, cov, scale: float):
        super().__init__(ctx)
        self.mean = np.asarray(mean, dtype=float)
        self.chol = _cholesky(jitter(np.asarray(cov) * scale))

    def sample_many(self, rng, m: int) -> np.ndarray:
        z = rng.standard_normal((m, self.mean.shape[0]))
        return self.mean + z @ self.chol.T

    def sample(self, x, rng):
        return self.sample_many(rng, 1)[0]

    def log_density(self, xs: np.ndarray) -> np.ndarray:
        return mvn_logpdf(xs, self.mean, self.chol)

    def log_q(self, x_from, x_to):
        return float(self.log_density(np.atleast_2d(x_to))[0])

    def log_importance(self, xs: np.ndarray) -> np.ndarray:
        return self.ctx.log_target(xs) - self.log_density(xs)


class IndependentStudentT(IndependentGaussian):
    def __init__(self, ctx, loc, cov, scale: float, dof: float):
        super().__init__(ctx, loc, cov, scale)
        self.dof = float(dof)

    def sample_many(self, rng, m):
        d = self.mean.shape[0]
        z = rng.standard_normal((m, d))
        g = rng.chisquare(self.dof, size=m)
        return self.mean + (z @ self.chol.T) / np.sqrt(g / self.dof)[:, None]

    def log_density(self, xs):
        return mvt_logpdf(xs, self.mean, self.chol, self.dof)


class BootstrapMixture(Proposal):
    """q(x) = sum_i W_{t-1}^i f_t(x | x_{t-1}^i); at the first time q = f_1."""

    independent = True

    def sample_many(self, rng, m):
        ctx = self.ctx
        if ctx.prev_x is None:
            return ctx.model.sample_f1(ctx.theta, m, rng)
        c = ctx.prev_W.cumsum()
        idx = c.searchsorted(rng.random(m) * c[-1], side="right")
        np.minimum(idx, len(c) - 1, out=idx)
        return ctx.model.sample_ft(ctx.t, ctx.prev_x[idx], ctx.theta, rng)

    def sample(self, x, rng):
        return self.sample_many(rng, 1)[0]

    def log_density(self, xs):
        ctx = self.ctx
        if ctx.prev_x is None:
            return ctx.model.log_f1(xs, ctx.theta)
        lf = ctx.model.log_ft(ctx.t, xs[:, None, :], ctx.prev_x[None, :, :], ctx.theta)
        return logsumexp(lf + ctx.prev_logW[None, :], axis=1)

    def log_q(self, x_from, x_to):
        return float(self.log_density(np.atleast_2d(x_to))[0])

    def log_importance(self, xs):
        # the mixture cancels against the target's particle sum
        return self.ctx.log_local(xs)


class Flip(Proposal):
    """x' = 1 - x on {0, 1}; symmetric."""

    deterministic_flip = True

    def sample(self, x, rng):
        return 1.0 - x

    def log_q(self, x_from, x_to):
        return 0.0


class Reject(Proposal):
    never_moves = True

    def sample(self, x, rng):
        return x.copy()

    def log_q(self, x_from, x_to):
        return 0.0


def make_proposal(spec: ProposalSpec, ctx: "BackwardTargetContext") -> Proposal:
    d = ctx.model.state_dim
    fam = spec.family
    if ctx.model.discrete and fam in CONTINUOUS_FAMILIES and fam != "bootstrap":
        raise ConfigurationError(f"proposal {fam!r} needs a continuous state space")
    if spec.needs_linearization and ctx.linearization is None:
        raise ConfigurationError(f"proposal {fam!r} needs a model linearisation; {ctx.model.name} has none")
    if fam == "bootstrap":
        return BootstrapMixture(ctx)
    if fam == "flip":
        return Flip(ctx)
    if fam == "reject":
        return Reject(ctx)
    scale = spec.scale_for(d)
    if fam == "rw-backward":
        return RandomWalk(ctx, ctx.backward_moments.cov, scale)
    if fam == "rw-linearized":
        return RandomWalk(ctx, ctx.linearized_moments.cov, scale)
    if fam == "ind-gauss-backward":
        mo = ctx.backward_moments
        return IndependentGaussian(ctx, mo.mean, mo.cov, scale)
    if fam == "ind-gauss-linearized":
        mo = ctx.linearized_moments
        return IndependentGaussian(ctx, mo.mean, mo.cov, scale)
    if fam == "ind-student-t":
        mo = ctx.linearized_moments if spec.moments == "linearized" else ctx.backward_moments
        return IndependentStudentT(ctx, mo.mean, mo.cov, scale, spec.dof)
    raise ConfigurationError(f"unknown proposal family {fam!r}")


def propose(spec: ProposalSpec, ctx: "BackwardTargetContext", x: np.ndarray, rng: np.random.Generator):
    """Draw ``x'`` and return ``(x', log q(x -> x'), log q(x' -> x))``."""
    prop = make_proposal(spec, ctx)
    x = np.asarray(x, dtype=float)
    xp = prop.sample(x, rng)
    if not np.all(np.isfinite(xp)):
        raise ProposalError(f"non-finite proposal at t={ctx.t}")
    return xp, prop.log_q(x, xp), prop.log_q(xp, x)


def bootstrap_mh_log_ratio(ctx: "BackwardTargetContext", x: np.ndarray, x_new: np.ndarray) -> float:
    """log of f(x_next | x') g(y | x') / (f(x_next | x) g(y | x)) (uncapped)."""
    lx = ctx.log_local(np.atleast_2d(x))[0]
    ln = ctx.log_local(np.atleast_2d(x_new))[0]
    return float(ln - lx)


def log_acceptance(ctx: "BackwardTargetContext", prop: Proposal, x: np.ndarray, x_new: np.ndarray) -> float:
    """log alpha(x -> x') for the full Metropolis-Hastings ratio (capped at 0)."""
    num = ctx.log_target(np.atleast_2d(x_new))[0] + prop.log_q(x_new, x)
    den = ctx.log_target(np.atleast_2d(x))[0] + prop.log_q(x, x_new)
    r = num - den
    if math.isnan(r):
        return -math.inf
    return min(0.0, float(r))
