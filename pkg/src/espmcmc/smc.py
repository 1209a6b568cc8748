"""Sequential Monte Carlo with multinomial resampling.

The engine stores, for every time index, the particle states, their log
unnormalised weights, the normalised weights and the log weight sum; the
ancestor indices link time ``t`` particles to their parents at ``t - 1``.
Particles at the final time are left weighted (not resampled).

Indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._util import normalize_log
from .errors import ConfigurationError, DegenerateWeightsError
from .model import StateSpaceModel, Theta, as_observations


@dataclass
class ParticleSystem:
    """Output of one SMC sweep.

    Attributes
    ----------
    x : list of arrays
        ``x[t]`` has shape ``(N_t, d_x)``.
    logw : list of arrays
        Log unnormalised weights, ``logw[t]`` of shape ``(N_t,)``.
    W : list of arrays
        Normalised weights.
    log_weight_sums : ndarray
        ``L_t = log sum_i w_t^i`` for each t, computed once at weighting time.
    ancestors : list of int arrays
        ``ancestors[t - 1][i]`` is the parent slot at ``t - 1`` of particle ``i`` at ``t``.
    """

    x: list
    logw: list
    W: list
    log_weight_sums: np.ndarray
    ancestors: list
    packed: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def T(self) -> int:
        return len(self.x)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(w) for w in self.logw)

    @property
    def log_likelihood(self) -> float:
        return log_marginal_likelihood_estimate(self)

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(
            x=[a.copy() for a in self.x],
            logw=[a.copy() for a in self.logw],
            W=[a.copy() for a in self.W],
            log_weight_sums=self.log_weight_sums.copy(),
            ancestors=[a.copy() for a in self.ancestors],
            packed=None if self.packed is None else tuple(a.copy() for a in self.packed),
        )


@dataclass(frozen=True)
class RetainedPath:
    """A path held fixed by conditional SMC.

    ``slots[t]`` is the slot occupied at time t; ``ancestors[t - 1]`` the fixed
    ancestor link of that slot (defaults to the previous slot, i.e. the path's
    own lineage).
    """

    states: np.ndarray
    slots: np.ndarray
    ancestors: np.ndarray | None = None

    def ancestor(self, t: int) -> int:
        if self.ancestors is None:
            return int(self.slots[t - 1])
        return int(self.ancestors[t - 1])


def categorical_sample(W: np.ndarray, rng: np.random.Generator, size: int | None = None):
    """Multinomial draw(s) of 0-based indices with probabilities ``W``."""
    c = W.cumsum()
    total = c[-1]
    if not (0.0 < total < math.inf):
        raise DegenerateWeightsError()
    if size is None:
        idx = int(c.searchsorted(rng.random() * total, side="right"))
        return idx if idx < len(c) else len(c) - 1
    idx = c.searchsorted(rng.random(size) * total, side="right")
    return np.minimum(idx, len(c) - 1)


def sample_from_log_weights(logw: np.ndarray, rng: np.random.Generator, t: int | None = None, what="weights"):
    """Draw one index with probability proportional to ``exp(logw)``."""
    m = logw.max()
    if m != m:  # NaN entries count as zero weight
        logw = np.where(np.isnan(logw), -np.inf, logw)
        m = logw.max()
    if not (-math.inf < m < math.inf):
        raise DegenerateWeightsError(t, what)
    c = np.exp(logw - m).cumsum()
    idx = int(c.searchsorted(rng.random() * c[-1], side="right"))
    return idx if idx < len(c) else len(c) - 1


def _sizes(n_particles, T: int) -> list[int]:
    if np.isscalar(n_particles):
        sizes = [int(n_particles)] * T
    else:
        sizes = [int(n) for n in n_particles]
        if len(sizes) != T:
            raise ConfigurationError(f"need {T} particle counts, got {len(sizes)}")
    if min(sizes) < 1:
        raise ConfigurationError("particle counts must be >= 1")
    return sizes


def initial_draw(model: StateSpaceModel, theta: Theta, y0, n: int, rng) -> np.ndarray:
    return model.sample_m1(y0, theta, n, rng)


def propagate(model: StateSpaceModel, theta: Theta, y_t, t: int, x_prev, W_prev, n: int, rng):
    """Resample ancestors from ``W_prev`` and draw ``n`` states from the importance density."""
    anc = categorical_sample(W_prev, rng, n)
    x = model.sample_mt(t, y_t, x_prev[anc], theta, rng)
    return anc, x


def log_weights(model: StateSpaceModel, theta: Theta, y_t, t: int, x, x_parent=None) -> np.ndarray:
    """Incremental log weights: log g + log f - log M (just log g for bootstrap importance)."""
    lw = model.log_gt(t, y_t, x, theta)
    if model.bootstrap_importance:
        return np.asarray(lw, dtype=float)
    if t == 0:
        return lw + model.log_f1(x, theta) - model.log_m1(y_t, x, theta)
    return lw + model.log_ft(t, x, x_parent, theta) - model.log_mt(t, y_t, x, x_parent, theta)


def normalize_step(logw: np.ndarray, t: int) -> tuple[np.ndarray, float]:
    """Normalise in place-safe fashion; NaN log weights are set to -inf."""
    m = logw.max()
    if m != m:
        logw[np.isnan(logw)] = -np.inf
        m = logw.max()
    if not (-math.inf < m < math.inf):
        raise DegenerateWeightsError(t)
    e = np.exp(logw - m)
    s = e.sum()
    return e / s, float(m + math.log(s))


def run_smc(
    model: StateSpaceModel,
    theta: Theta,
    y,
    n_particles: int | Sequence[int],
    rng: np.random.Generator,
    retained: RetainedPath | None = None,
) -> ParticleSystem:
    """Run the particle filter; with ``retained`` the designated slots are kept fixed.

    Retained slots still have their weights recomputed (under ``theta``) from
    their fixed state and fixed ancestor link.
    """
    y = as_observations(y, min_length=1)
    T = y.shape[0]
    sizes = _sizes(n_particles, T)
    if retained is not None and min(sizes) < 2:
        raise ConfigurationError("conditional SMC needs at least 2 particles per time")

    xs, lws, Ws, ancs = [], [], [], []
    L = np.empty(T)

    x = initial_draw(model, theta, y[0], sizes[0], rng)
    if retained is not None:
        x[int(retained.slots[0])] = retained.states[0]
    lw = log_weights(model, theta, y[0], 0, x)
    W, L[0] = normalize_step(lw, 0)
    xs.append(x), lws.append(lw), Ws.append(W)

    for t in range(1, T):
        anc, x = propagate(model, theta, y[t], t, xs[-1], Ws[-1], sizes[t], rng)
        if retained is not None:
            b = int(retained.slots[t])
            anc[b] = retained.ancestor(t)
            x[b] = retained.states[t]
        parent = xs[-1][anc]
        lw = log_weights(model, theta, y[t], t, x, parent)
        W, L[t] = normalize_step(lw, t)
        xs.append(x), lws.append(lw), Ws.append(W), ancs.append(anc)

    return ParticleSystem(x=xs, logw=lws, W=Ws, log_weight_sums=L, ancestors=ancs)


def log_marginal_likelihood_estimate(ps: ParticleSystem) -> float:
    """sum_t (L_t - log N_t): the log of the unbiased likelihood estimate."""
    return float(sum(L - math.log(n) for L, n in zip(ps.log_weight_sums, ps.sizes)))


def effective_sample_size(W: np.ndarray) -> float:
    return float(1.0 / np.sum(W * W))
