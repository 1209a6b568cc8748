"""Backward pass with Metropolis-Hastings rejuvenation.

For ``t = T-2, ..., 0`` the pass selects an index ``B_t`` from the backward
weights ``w_t^i f_{t+1}(x_next | x_t^i)`` and runs ``C_t`` MH steps, seeded
at ``x_t^{B_t}``, against the approximate conditional smoothing target

    log g_t(y_t | x) + log f_{t+1}(x_next | x) + log sum_i w_{t-1}^i f_t(x | x_{t-1}^i)

(with ``log f_1(x)`` in place of the particle sum at ``t = 0``). The chain at
``t`` conditions on the final iterate at ``t + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from ._util import logsumexp, normalize_log
from .errors import ConfigurationError, DegenerateWeightsError, ProposalError
from .model import StateSpaceModel, Theta
from .proposals import (
    Proposal,
    ProposalSpec,
    SmoothingMoments,
    backward_weight_moments,
    filtered_moments,
    linearization_moments,
    make_proposal,
)
from .smc import ParticleSystem, categorical_sample, sample_from_log_weights


@dataclass(eq=False)
class BackwardTargetContext:
    """Everything the MH kernel at one time index conditions on.

    ``prev_x``/``prev_logw`` are the particles and log weights at ``t - 1``
    (``None`` at ``t = 0``). ``cur_x``/``cur_logw`` are the particles at
    ``t``; slot ``exclude`` (the selected index ``b_t``) is never read by the
    proposals.
    """

    model: StateSpaceModel
    theta: Theta
    t: int
    y_t: np.ndarray
    x_next: np.ndarray
    prev_x: np.ndarray | None = None
    prev_logw: np.ndarray | None = None
    cur_x: np.ndarray | None = None
    cur_logw: np.ndarray | None = None
    exclude: int | None = None
    prev_weights: np.ndarray | None = None

    # -- cached derived quantities ---------------------------------------
    @cached_property
    def prev_logw_shifted(self) -> np.ndarray:
        return self.prev_logw - np.max(self.prev_logw)

    @cached_property
    def prev_logW(self) -> np.ndarray:
        W, lsum = normalize_log(self.prev_logw)
        return self.prev_logw - lsum

    @cached_property
    def prev_W(self) -> np.ndarray:
        """Normalised weights at t - 1 (taken from ``prev_weights`` when supplied)."""
        if self.prev_weights is not None:
            return self.prev_weights
        return normalize_log(self.prev_logw)[0]

    @cached_property
    def backward_moments(self) -> SmoothingMoments:
        if self.cur_x is None:
            raise ConfigurationError("backward-weight moments need the current particles")
        return backward_weight_moments(
            self.cur_x, self.cur_logw, self.x_next, self.model, self.theta, self.t, self.exclude
        )

    @cached_property
    def linearization(self):
        return self.model.linearization(self.t, self.theta)

    @cached_property
    def filtered_moments(self) -> SmoothingMoments:
        if self.cur_x is None:
            raise ConfigurationError("filtered moments need the current particles")
        return filtered_moments(self.cur_x, self.cur_logw, self.exclude)

    @cached_property
    def linearized_moments(self) -> SmoothingMoments:
        fm = self.filtered_moments
        return linearization_moments(fm.mean, fm.cov, self.linearization, self.x_next)

    # -- target pieces ---------------------------------------------------
    def log_local(self, x: np.ndarray) -> np.ndarray:
        """log g_t(y_t | x) + log f_{t+1}(x_next | x) for rows of ``x``."""
        m, th = self.model, self.theta
        return m.log_gt(self.t, self.y_t, x, th) + m.log_ft(self.t + 1, self.x_next, x, th)

    def log_prior_term(self, x: np.ndarray) -> np.ndarray:
        """log f_1(x) at t = 0, else log sum_i w_{t-1}^i f_t(x | x_{t-1}^i) with shifted weights."""
        m, th = self.model, self.theta
        if self.prev_x is None:
            return m.log_f1(x, th)
        lf = m.log_ft(self.t, x[:, None, :], self.prev_x[None, :, :], th)
        return logsumexp(lf + self.prev_logw_shifted[None, :], axis=1)

    def log_target(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        out = self.log_local(x) + self.log_prior_term(x)
        out[np.isnan(out)] = -np.inf
        return out


def backward_target_logpdf(ctx: BackwardTargetContext, x) -> float:
    """Unnormalised log target density at a single state ``x``."""
    return float(ctx.log_target(np.atleast_2d(np.asarray(x, dtype=float)))[0])


def mh_kernel_step(ctx: BackwardTargetContext, x: np.ndarray, proposal, rng: np.random.Generator):
    """One Metropolis-Hastings step; returns ``(x_next, accepted)``.

    ``proposal`` is a :class:`ProposalSpec` or an already-bound proposal object.
    """
    prop = make_proposal(proposal, ctx) if isinstance(proposal, ProposalSpec) else proposal
    x = np.asarray(x, dtype=float)
    if prop.never_moves:
        return x.copy(), False
    xp = prop.sample(x, rng)
    if not np.all(np.isfinite(xp)):
        raise ProposalError(f"non-finite proposal at t={ctx.t}")
    both = ctx.log_target(np.vstack([x, xp]))
    log_r = both[1] - both[0] + prop.log_q(xp, x) - prop.log_q(x, xp)
    if np.isnan(log_r):
        log_r = -math.inf
    if math.log(rng.random()) < log_r:
        return xp, True
    return x.copy(), False


def run_kernel_chain(
    ctx: BackwardTargetContext,
    x0: np.ndarray,
    n_steps: int,
    prop: Proposal,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int]:
    """Apply ``n_steps`` kernel steps from ``x0``; returns ``(iterates, n_accepted)``.

    Independent proposals draw all candidates up front and evaluate the target
    in one vectorised call, which is equivalent in law to stepping one at a time.
    """
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[-1]
    out = np.empty((n_steps, d))
    if n_steps == 0:
        return out, 0
    if prop.never_moves:
        out[:] = x0
        return out, 0
    logu = np.log(rng.random(n_steps))
    n_acc = 0
    if prop.independent:
        cand = prop.sample_many(rng, n_steps)
        li = prop.log_importance(np.concatenate([x0[None, :], cand]))
        if not -math.inf < cand.sum() < math.inf:
            raise ProposalError(f"non-finite proposal at t={ctx.t}")
        li = [v if v == v else -math.inf for v in li.tolist()]
        cur, cur_li = x0, li[0]
        for j in range(n_steps):
            if logu[j] < li[j + 1] - cur_li:
                cur, cur_li = cand[j], li[j + 1]
                n_acc += 1
            out[j] = cur
        return out, n_acc
    if prop.deterministic_flip:
        pair = np.vstack([x0, prop.sample(x0, rng)])
        lt = ctx.log_target(pair)
        k = 0
        for j in range(n_steps):
            if logu[j] < lt[1 - k] - lt[k]:
                k = 1 - k
                n_acc += 1
            out[j] = pair[k]
        return out, n_acc
    cur = x0
    cur_lt = ctx.log_target(cur[None, :])[0]
    for j in range(n_steps):
        xp = prop.sample(cur, rng)
        if not np.all(np.isfinite(xp)):
            raise ProposalError(f"non-finite proposal at t={ctx.t}")
        lt = ctx.log_target(xp[None, :])[0]
        if logu[j] < lt - cur_lt + prop.log_q(xp, cur) - prop.log_q(cur, xp):
            cur, cur_lt = xp, lt
            n_acc += 1
        out[j] = cur
    return out, n_acc


@dataclass
class ExtendedState:
    """Particle system plus selected indices and the MCMC-generated states.

    ``xtilde[t]`` has shape ``(C_t, d_x)`` for ``t = 0..T-2``; its last row is
    the state on the selected trajectory.
    """

    ps: ParticleSystem
    B: np.ndarray
    xtilde: list
    n_accepted: int = 0
    n_proposed: int = 0

    @property
    def T(self) -> int:
        return self.ps.T

    @property
    def C(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.xtilde)

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else math.nan


def _mcmc_lengths(n_mcmc, T: int) -> list[int]:
    if np.isscalar(n_mcmc):
        C = [int(n_mcmc)] * (T - 1)
    else:
        C = [int(c) for c in n_mcmc]
        if len(C) != T - 1:
            raise ConfigurationError(f"need {T - 1} MCMC lengths, got {len(C)}")
    if C and min(C) < 1:
        raise ConfigurationError("MCMC lengths C_t must be >= 1")
    return C


def context_at(model, theta, y, ps: ParticleSystem, t: int, x_next, exclude) -> BackwardTargetContext:
    prev_x = ps.x[t - 1] if t > 0 else None
    prev_logw = ps.logw[t - 1] if t > 0 else None
    return BackwardTargetContext(
        model=model,
        theta=theta,
        t=t,
        y_t=y[t],
        x_next=np.asarray(x_next, dtype=float),
        prev_x=prev_x,
        prev_logw=prev_logw,
        cur_x=ps.x[t],
        cur_logw=ps.logw[t],
        exclude=exclude,
        prev_weights=ps.W[t - 1] if t > 0 else None,
    )


def run_backward_pass(
    model: StateSpaceModel,
    theta: Theta,
    y: np.ndarray,
    ps: ParticleSystem,
    n_mcmc: int | Sequence[int],
    proposal: ProposalSpec,
    rng: np.random.Generator,
) -> ExtendedState:
    """Draw ``B_{T-1}`` from the final weights, then run the MH chains backwards in time."""
    T = ps.T
    C = _mcmc_lengths(n_mcmc, T)
    B = np.empty(T, dtype=np.int64)
    B[T - 1] = categorical_sample(ps.W[T - 1], rng)
    x_next = ps.x[T - 1][B[T - 1]]
    xtilde: list = [None] * (T - 1)
    n_acc = n_prop = 0
    for t in range(T - 2, -1, -1):
        lbw = ps.logw[t] + model.log_ft(t + 1, x_next, ps.x[t], theta)
        b = sample_from_log_weights(lbw, rng, t, "backward weights")
        B[t] = b
        ctx = context_at(model, theta, y, ps, t, x_next, b)
        prop = make_proposal(proposal, ctx)
        it, acc = run_kernel_chain(ctx, ps.x[t][b], C[t], prop, rng)
        xtilde[t] = it
        n_acc += acc
        n_prop += C[t]
        x_next = it[-1]
    return ExtendedState(ps=ps, B=B, xtilde=xtilde, n_accepted=n_acc, n_proposed=n_prop)


def extract_trajectory(ext: ExtendedState) -> np.ndarray:
    """The selected path: final MCMC iterate at each t < T-1, then x_{T-1}^{B_{T-1}}."""
    T = ext.T
    rows = [ext.xtilde[t][-1] for t in range(T - 1)]
    rows.append(ext.ps.x[T - 1][ext.B[T - 1]])
    return np.vstack(rows)
