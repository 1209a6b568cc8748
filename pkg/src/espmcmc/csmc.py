"""Conditional SMC around a retained trajectory, with reversed MH chains.

At each ``t < T-1`` the retained value is treated as the *last* iterate of
the time-``t`` chain: the kernel is applied from it to produce the earlier
iterates in reverse order, and one more application produces the particle
``x_t^{b_t}`` that re-enters the particle system. Its ancestor is then drawn
with probability proportional to ``w_{t-1}^i f_t(x_t^{b_t} | x_{t-1}^i)``.
The retained coordinates are never overwritten.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backward import ExtendedState, _mcmc_lengths, run_kernel_chain, BackwardTargetContext
from .errors import ConfigurationError, InputError
from .model import StateSpaceModel, Theta, as_observations
from .proposals import ProposalSpec, make_proposal
from .smc import (
    ParticleSystem,
    _sizes,
    initial_draw,
    log_weights,
    normalize_step,
    propagate,
    sample_from_log_weights,
)


@dataclass(frozen=True)
class RetainedTrajectory:
    """Path ``(x~_0^{C_0}, ..., x~_{T-2}^{C_{T-2}}, x_{T-1}^{b})`` plus the final slot ``b``."""

    path: np.ndarray
    b_last: int

    @classmethod
    def from_extended(cls, ext: ExtendedState) -> "RetainedTrajectory":
        from .backward import extract_trajectory

        return cls(path=extract_trajectory(ext), b_last=int(ext.B[-1]))


def _ancestor_for(model, theta, t, x_b, prev_x, prev_logw, rng) -> int:
    lv = prev_logw + model.log_ft(t, x_b, prev_x, theta)
    return sample_from_log_weights(lv, rng, t=t, what="ancestor weights")


def run_csmc(
    retained: RetainedTrajectory,
    model: StateSpaceModel,
    theta: Theta,
    y,
    n_particles: int | Sequence[int],
    n_mcmc: int | Sequence[int],
    proposal: ProposalSpec,
    rng: np.random.Generator,
) -> ExtendedState:
    y = as_observations(y)
    T = y.shape[0]
    N = _sizes(n_particles, T)
    C = _mcmc_lengths(n_mcmc, T)
    path = np.asarray(retained.path, dtype=float)
    if path.shape != (T, model.state_dim):
        raise InputError(f"retained path must have shape {(T, model.state_dim)}, got {path.shape}")
    if min(N) < 2:
        raise ConfigurationError("conditional SMC needs at least 2 particles per time")
    if not 0 <= retained.b_last < N[-1]:
        raise InputError(f"retained slot {retained.b_last} out of range for N={N[-1]}")

    xs, lws, Ws, ancs = [], [], [], []
    L = np.empty(T)
    B = np.empty(T, dtype=np.int64)
    xtilde: list = [None] * (T - 1)
    n_acc = n_prop = 0

    for t in range(T - 1):
        b = int(rng.integers(N[t]))
        B[t] = b
        # other slots by ordinary SMC; slot b is a placeholder until the kernel fills it
        if t == 0:
            x = initial_draw(model, theta, y[0], N[0], rng)
            anc, parent = None, None
            lw = log_weights(model, theta, y[0], 0, x)
        else:
            anc, x = propagate(model, theta, y[t], t, xs[-1], Ws[-1], N[t], rng)
            parent = xs[-1][anc]
            lw = log_weights(model, theta, y[t], t, x, parent)

        ctx = BackwardTargetContext(
            model=model,
            theta=theta,
            t=t,
            y_t=y[t],
            x_next=path[t + 1],
            prev_x=xs[-1] if t > 0 else None,
            prev_logw=lws[-1] if t > 0 else None,
            cur_x=x,
            cur_logw=lw,
            exclude=b,
            prev_weights=Ws[-1] if t > 0 else None,
        )
        prop = make_proposal(proposal, ctx)
        # reversed chain: iterates C_t-1, ..., 1 then the particle itself
        rev, acc = run_kernel_chain(ctx, path[t], C[t], prop, rng)
        n_acc += acc
        n_prop += C[t]
        it = np.empty((C[t], model.state_dim))
        it[C[t] - 1] = path[t]
        if C[t] > 1:
            it[: C[t] - 1] = rev[: C[t] - 1][::-1]
        xtilde[t] = it
        x[b] = rev[-1]

        if t > 0:
            anc[b] = _ancestor_for(model, theta, t, x[b], xs[-1], lws[-1], rng)
            lw[b] = log_weights(model, theta, y[t], t, x[b : b + 1], xs[-1][anc[b] : anc[b] + 1])[0]
        else:
            lw[b] = log_weights(model, theta, y[0], 0, x[b : b + 1])[0]
        W, L[t] = normalize_step(lw, t)
        xs.append(x), lws.append(lw), Ws.append(W)
        if anc is not None:
            ancs.append(anc)

    t = T - 1
    b = int(retained.b_last)
    B[t] = b
    a_b = _ancestor_for(model, theta, t, path[t], xs[-1], lws[-1], rng)
    anc, x = propagate(model, theta, y[t], t, xs[-1], Ws[-1], N[t], rng)
    anc[b] = a_b
    x[b] = path[t]
    lw = log_weights(model, theta, y[t], t, x, xs[-1][anc])
    W, L[t] = normalize_step(lw, t)
    xs.append(x), lws.append(lw), Ws.append(W), ancs.append(anc)

    ps = ParticleSystem(x=xs, logw=lws, W=Ws, log_weight_sums=L, ancestors=ancs)
    return ExtendedState(ps=ps, B=B, xtilde=xtilde, n_accepted=n_acc, n_proposed=n_prop)
