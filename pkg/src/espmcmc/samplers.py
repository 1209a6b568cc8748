"""Sampling schemes built from the SMC, backward-pass and conditional-SMC pieces.

``pimh``
    independent MH on the extended space: propose a fresh particle system,
    accept with the ratio of likelihood estimates, run the backward pass only
    on acceptance.
``pg-smooth``
    particle Gibbs smoothing: conditional SMC around the retained trajectory,
    then a fresh backward pass.
``general``
    parameter blocks ``1..p1`` by PMMH, blocks ``p1+1..p`` by PG / PMwG moves
    given the retained trajectory, states by the extended-space PG step.
``bsi``
    baseline particle Gibbs with backward simulation (index-only backward
    draws, no MCMC rejuvenation). With parameter blocks it runs the same
    block schedule as ``general``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from ._util import normalize_log
from . import _compiled
from .backward import ExtendedState, extract_trajectory, run_backward_pass
from .csmc import RetainedTrajectory, run_csmc
from .errors import ConfigurationError, DegenerateWeightsError
from .model import ParamBlocks, StateSpaceModel, as_observations
from .proposals import ProposalSpec
from .rng import sweep_generator
from .smc import ParticleSystem, RetainedPath, categorical_sample, run_smc

log = logging.getLogger(__name__)

SCHEMES = ("pimh", "pg-smooth", "general", "bsi")
ENGINES = ("auto", "python", "compiled")


@dataclass
class SamplerConfig:
    scheme: str = "pg-smooth"
    n_particles: int = 20
    n_mcmc: int = 5
    proposal: ProposalSpec = field(default_factory=ProposalSpec)
    blocks: ParamBlocks | None = None
    sweeps: int = 1000
    warmup: int = 0
    thin: int = 1
    # run conditional SMC even when no Part-2 block moved (composes with a PG smoothing step)
    refresh_states: bool = True
    record_trajectory: bool = False
    # "auto" uses the compiled routines when the model and proposal support them
    engine: str = "auto"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.engine not in ENGINES:
            raise ConfigurationError(f"unknown engine {self.engine!r}; choose from {ENGINES}")
        if self.n_particles < 1 or self.n_mcmc < 1:
            raise ConfigurationError("N and C must be >= 1")
        if self.scheme in ("pg-smooth", "bsi", "general") and self.n_particles < 2:
            raise ConfigurationError(f"scheme {self.scheme!r} needs N >= 2 (conditional SMC)")
        if self.scheme == "general" and self.blocks is None:
            raise ConfigurationError("the general scheme needs parameter blocks")
        if self.scheme == "pimh" and self.blocks is not None and self.blocks.p > 0:
            raise ConfigurationError("pimh smooths at fixed theta; use 'general' with p1 = p for PMMH")
        if not 0 <= self.warmup < self.sweeps:
            raise ConfigurationError("need 0 <= warmup < sweeps")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")


@dataclass
class ChainState:
    ext: ExtendedState
    theta: dict
    loglik: float
    sweep: int = 0
    accepts: dict = field(default_factory=dict)
    tries: dict = field(default_factory=dict)
    last: dict = field(default_factory=dict)

    @property
    def trajectory(self) -> np.ndarray:
        return extract_trajectory(self.ext)

    def count(self, name: str, accepted: bool) -> None:
        self.tries[name] = self.tries.get(name, 0) + 1
        self.accepts[name] = self.accepts.get(name, 0) + int(bool(accepted))
        self.last[name] = bool(accepted)

    def acceptance_rates(self) -> dict[str, float]:
        return {k: self.accepts[k] / self.tries[k] for k in self.tries}


# ---------------------------------------------------------------------------
# state kernels
# ---------------------------------------------------------------------------


def backward_simulation(model, theta, ps: ParticleSystem, rng) -> ExtendedState:
    """Index-only backward draws; each ``xtilde[t]`` is the single selected particle."""
    T = ps.T
    B = np.empty(T, dtype=np.int64)
    B[T - 1] = categorical_sample(ps.W[T - 1], rng)
    x_next = ps.x[T - 1][B[T - 1]]
    xt: list = [None] * (T - 1)
    for t in range(T - 2, -1, -1):
        lbw = ps.logw[t] + model.log_ft(t + 1, x_next, ps.x[t], theta)
        Wb, lsum = normalize_log(np.where(np.isnan(lbw), -np.inf, lbw))
        if not np.isfinite(lsum):
            raise DegenerateWeightsError(t, "backward weights")
        B[t] = categorical_sample(Wb, rng)
        x_next = ps.x[t][B[t]]
        xt[t] = x_next[None, :].copy()
    return ExtendedState(ps=ps, B=B, xtilde=xt)


@dataclass(frozen=True)
class Ops:
    """The four particle routines a sampler needs, from one engine."""

    name: str
    smc: Callable
    backward: Callable
    csmc: Callable
    bsim: Callable


PYTHON_OPS = Ops("python", run_smc, run_backward_pass, run_csmc, backward_simulation)
COMPILED_OPS = Ops(
    "compiled", _compiled.run_smc, _compiled.run_backward_pass, _compiled.run_csmc, _compiled.backward_simulation
)


@lru_cache(maxsize=None)
def _resolve(model, engine: str, family: str, moments: str) -> Ops:
    ok = _compiled.supports(model, family, moments)
    if engine == "compiled" and not ok:
        raise ConfigurationError(f"no compiled engine for model {model.name!r} with proposal {family!r}")
    return COMPILED_OPS if ok and engine != "python" else PYTHON_OPS


def engine_ops(model, config: SamplerConfig) -> Ops:
    """Pick the engine for ``model`` under ``config.engine``."""
    return _resolve(model, config.engine, config.proposal.family, config.proposal.moments)


def _backward(model, theta, y, ps, config: SamplerConfig, rng) -> ExtendedState:
    ops = engine_ops(model, config)
    if config.scheme == "bsi":
        return ops.bsim(model, theta, ps, rng)
    return ops.backward(model, theta, y, ps, config.n_mcmc, config.proposal, rng)


def _conditional_refresh(model, theta, y, chain: ChainState, config: SamplerConfig, rng) -> ParticleSystem:
    """Regenerate the particle system around the retained trajectory."""
    path = chain.trajectory
    b_last = int(chain.ext.B[-1])
    if config.scheme == "bsi":
        T = path.shape[0]
        slots = rng.integers(config.n_particles, size=T)
        slots[-1] = b_last
        return engine_ops(model, config).smc(model, theta, y, config.n_particles, rng, retained=RetainedPath(path, slots))
    ext = engine_ops(model, config).csmc(
        RetainedTrajectory(path, b_last), model, theta, y, config.n_particles, config.n_mcmc, config.proposal, rng
    )
    return ext.ps


def initial_state(model: StateSpaceModel, theta, y, config: SamplerConfig, rng) -> ChainState:
    y = as_observations(y)
    ps = engine_ops(model, config).smc(model, theta, y, config.n_particles, rng)
    ext = _backward(model, theta, y, ps, config, rng)
    return ChainState(ext=ext, theta=dict(theta), loglik=ps.log_likelihood)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def pimh_accept_prob(ps_current: ParticleSystem, ps_proposed: ParticleSystem) -> float:
    """1 ^ prod_t (sum_i w'_t^i) / prod_t (sum_i w_t^i)."""
    d = float(np.sum(ps_proposed.log_weight_sums) - np.sum(ps_current.log_weight_sums))
    return 1.0 if d >= 0 else math.exp(d)


def pimh_sweep(chain: ChainState, model, y, config: SamplerConfig, rng) -> ChainState:
    ps_new = engine_ops(model, config).smc(model, chain.theta, y, config.n_particles, rng)
    prob = pimh_accept_prob(chain.ext.ps, ps_new)
    accepted = rng.random() < prob
    chain.last["pimh_prob"] = prob
    chain.last["proposed_log_weight_sums"] = ps_new.log_weight_sums
    if accepted:
        chain.ext = _backward(model, chain.theta, y, ps_new, config, rng)
        chain.loglik = ps_new.log_likelihood
    chain.count("pimh", accepted)
    chain.sweep += 1
    return chain


def pg_smooth_sweep(chain: ChainState, model, y, config: SamplerConfig, rng) -> ChainState:
    ps = _conditional_refresh(model, chain.theta, y, chain, config, rng)
    chain.ext = _backward(model, chain.theta, y, ps, config, rng)
    chain.loglik = ps.log_likelihood
    chain.sweep += 1
    return chain


def bsi_sweep(chain: ChainState, model, y, config: SamplerConfig, rng) -> ChainState:
    if config.scheme != "bsi":
        raise ConfigurationError("bsi_sweep needs a config with scheme='bsi'")
    if config.blocks is not None and config.blocks.p > 0:
        return general_sweep(chain, model, y, config, rng)
    return pg_smooth_sweep(chain, model, y, config, rng)


def _pmmh_block(chain: ChainState, block, model, y, config, prior, rng) -> None:
    theta = chain.theta
    new_vals = block.sample(theta, rng, chain.ext)
    theta_new = {**theta, **new_vals}
    lp_new = prior(theta_new)
    if not np.isfinite(lp_new):
        chain.count(block.name, False)
        return
    lp_old = prior(theta)
    try:
        ps_new = engine_ops(model, config).smc(model, theta_new, y, config.n_particles, rng)
    except DegenerateWeightsError:
        chain.count(block.name, False)
        return
    ext_new = None
    if block.uses_state:
        ext_new = _backward(model, theta_new, y, ps_new, config, rng)
    log_q_rev = block.log_density({k: theta[k] for k in block.keys}, theta_new, ext_new)
    log_q_fwd = block.log_density(new_vals, theta, chain.ext)
    log_a = ps_new.log_likelihood - chain.loglik + lp_new - lp_old + log_q_rev - log_q_fwd
    accepted = math.log(rng.random()) < log_a
    if accepted:
        if ext_new is None:
            ext_new = _backward(model, theta_new, y, ps_new, config, rng)
        chain.ext = ext_new
        chain.theta = theta_new
        chain.loglik = ps_new.log_likelihood
    chain.count(block.name, accepted)


def general_sweep(chain: ChainState, model, y, config: SamplerConfig, rng) -> ChainState:
    blocks = config.blocks
    prior = blocks.log_prior if blocks is not None else (lambda th: 0.0)
    p1 = blocks.p1 if blocks is not None else 0
    all_blocks = blocks.blocks if blocks is not None else []
    for block in all_blocks[:p1]:
        _pmmh_block(chain, block, model, y, config, prior, rng)
    gibbs = all_blocks[p1:]
    if gibbs or blocks is None:
        path = chain.trajectory
        moved = False
        for block in gibbs:
            new_vals, accepted = block.update(chain.theta, path, y, rng)
            if accepted:
                chain.theta = {**chain.theta, **new_vals}
                moved = True
            chain.count(block.name, accepted)
        if moved or config.refresh_states or blocks is None:
            ps = _conditional_refresh(model, chain.theta, y, chain, config, rng)
        else:
            ps = chain.ext.ps
        chain.ext = _backward(model, chain.theta, y, ps, config, rng)
        chain.loglik = ps.log_likelihood
    chain.sweep += 1
    return chain


SWEEPS: dict[str, Callable] = {
    "pimh": pimh_sweep,
    "pg-smooth": pg_smooth_sweep,
    "general": general_sweep,
    "bsi": bsi_sweep,
}


# ---------------------------------------------------------------------------
# chain driver
# ---------------------------------------------------------------------------


@dataclass
class ChainResult:
    param_names: tuple[str, ...]
    sweeps: np.ndarray
    theta: np.ndarray
    loglik: np.ndarray
    accept_names: tuple[str, ...]
    accept_flags: np.ndarray
    acceptance_rates: dict
    state_acceptance_rate: float
    trajectories: np.ndarray | None
    wall_time: float
    final: ChainState | None = None


def run_chain(
    model: StateSpaceModel,
    y,
    theta0,
    config: SamplerConfig,
    key: np.ndarray,
    callback: Callable[[ChainState], None] | None = None,
) -> ChainResult:
    """Run one chain; the stream for sweep ``s`` is ``sweep_generator(key, s)`` (sweep 0 initialises)."""
    y = as_observations(y)
    step = SWEEPS[config.scheme]
    if engine_ops(model, config) is COMPILED_OPS:
        _compiled.warm_up(model, {k: float(v) for k, v in dict(theta0).items()}, y, config.proposal)
    t0 = time.perf_counter()
    theta0 = {k: float(v) for k, v in dict(theta0).items()}
    chain = initial_state(model, theta0, y, config, sweep_generator(key, 0))
    names = tuple(config.blocks.keys) if config.blocks is not None else ()
    if config.scheme == "pimh":
        acc_names: tuple[str, ...] = ("pimh",)
    else:
        acc_names = tuple(b.name for b in config.blocks.blocks) if config.blocks is not None else ()
    n_keep = (config.sweeps - config.warmup) // config.thin
    th = np.empty((n_keep, len(names)))
    ll = np.empty(n_keep)
    sw = np.empty(n_keep, dtype=np.int64)
    flags = np.zeros((n_keep, len(acc_names)), dtype=np.int8)
    trajs = None
    if config.record_trajectory:
        trajs = np.empty((n_keep, y.shape[0], model.state_dim))
    k = 0
    st_acc = st_prop = 0
    for s in range(1, config.sweeps + 1):
        chain.last.clear()
        step(chain, model, y, config, sweep_generator(key, s))
        st_acc += chain.ext.n_accepted
        st_prop += chain.ext.n_proposed
        if callback is not None:
            callback(chain)
        if s > config.warmup and (s - config.warmup) % config.thin == 0 and k < n_keep:
            sw[k] = s
            th[k] = [chain.theta[n] for n in names]
            ll[k] = chain.loglik
            flags[k] = [chain.last.get(a, False) for a in acc_names]
            if trajs is not None:
                trajs[k] = chain.trajectory
            k += 1
    return ChainResult(
        param_names=names,
        sweeps=sw[:k],
        theta=th[:k],
        loglik=ll[:k],
        accept_names=acc_names,
        accept_flags=flags[:k],
        acceptance_rates=chain.acceptance_rates(),
        state_acceptance_rate=st_acc / st_prop if st_prop else math.nan,
        trajectories=None if trajs is None else trajs[:k],
        wall_time=time.perf_counter() - t0,
        final=chain,
    )
