"""State-space model abstraction, parameter blocks and joint-density arithmetic.

Conventions used throughout the package:

* time is 0-based: ``t = 0, ..., T-1``; ``log_ft(t, ...)`` is the density of
  the state at index ``t`` given the state at ``t - 1`` (so ``t >= 1``);
* states are arrays of shape ``(..., d_x)``; model densities broadcast over
  the leading axes and return arrays of the broadcast leading shape;
* an observation series is a 2-D float array ``(T, k)``; row ``t`` is the
  observation record handed to ``log_gt`` (models may pack covariates into
  the record);
* ``theta`` is a mapping from parameter name to float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, InputError, UnsupportedOperationError

Theta = Mapping[str, float]


@dataclass(frozen=True)
class Linearization:
    """Gaussian-linear approximation ``x_{t+1} = h + H x_t + u``, ``u ~ N(0, Sigma)``."""

    h: np.ndarray
    H: np.ndarray
    Sigma: np.ndarray


class StateSpaceModel:
    """Base class for models.

    Subclasses implement the transition/observation densities and samplers.
    The importance densities default to the transition (bootstrap filter);
    models with an adapted filter override ``sample_m1``/``log_m1`` and
    ``sample_mt``/``log_mt`` and set ``bootstrap_importance = False``.
    """

    name: str = "model"
    state_dim: int = 1
    discrete: bool = False
    bootstrap_importance: bool = True
    param_names: tuple[str, ...] = ()

    # -- densities -------------------------------------------------------
    def log_f1(self, x: np.ndarray, theta: Theta) -> np.ndarray:
        raise NotImplementedError

    def log_ft(self, t: int, x: np.ndarray, x_prev: np.ndarray, theta: Theta) -> np.ndarray:
        raise NotImplementedError

    def log_gt(self, t: int, y_t: np.ndarray, x: np.ndarray, theta: Theta) -> np.ndarray:
        raise NotImplementedError

    # -- samplers --------------------------------------------------------
    def sample_f1(self, theta: Theta, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_ft(self, t: int, x_prev: np.ndarray, theta: Theta, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_gt(self, t: int, x: np.ndarray, theta: Theta, rng: np.random.Generator) -> np.ndarray:
        raise UnsupportedOperationError(f"{self.name} has no observation sampler")

    # -- importance densities (bootstrap by default) ---------------------
    def sample_m1(self, y_t: np.ndarray, theta: Theta, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_f1(theta, n, rng)

    def log_m1(self, y_t: np.ndarray, x: np.ndarray, theta: Theta) -> np.ndarray:
        return self.log_f1(x, theta)

    def sample_mt(
        self, t: int, y_t: np.ndarray, x_prev: np.ndarray, theta: Theta, rng: np.random.Generator
    ) -> np.ndarray:
        return self.sample_ft(t, x_prev, theta, rng)

    def log_mt(self, t: int, y_t: np.ndarray, x: np.ndarray, x_prev: np.ndarray, theta: Theta) -> np.ndarray:
        return self.log_ft(t, x, x_prev, theta)

    # -- optional pieces -------------------------------------------------
    def linearization(self, t: int, theta: Theta) -> Linearization | None:
        """Coefficients for the transition from index ``t`` to ``t + 1``; ``None`` if unavailable."""
        return None

    def log_prior(self, theta: Theta) -> float:
        return 0.0

    def default_theta(self) -> dict[str, float]:
        raise UnsupportedOperationError(f"{self.name} has no default parameters")

    def gibbs_blocks(self) -> list["GibbsBlock"]:
        """Conditional updates of parameter blocks given a trajectory."""
        return []

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, state_dim={self.state_dim})"


# ---------------------------------------------------------------------------
# parameter blocks
# ---------------------------------------------------------------------------

_TRANSFORMS: dict[str, tuple[Callable, Callable, Callable]] = {
    # name: (to unconstrained, from unconstrained, log |d unconstrained / d value|)
    "identity": (lambda v: v, lambda z: z, lambda v: 0.0),
    "log": (math.log, math.exp, lambda v: -math.log(v)),
    "atanh": (math.atanh, math.tanh, lambda v: -math.log1p(-v * v)),
}


@dataclass
class RandomWalkBlock:
    """Gaussian random-walk proposal on a transformed scale, used for PMMH blocks.

    ``uses_state`` is False: the proposal reads only theta, so the backward
    pass can be deferred until a move is accepted.
    """

    name: str
    keys: tuple[str, ...]
    step: float | Sequence[float] = 0.1
    transform: str | Sequence[str] = "identity"
    uses_state: bool = False

    def __post_init__(self):
        self.keys = tuple(self.keys)
        k = len(self.keys)
        steps = [self.step] * k if np.isscalar(self.step) else list(self.step)
        trs = [self.transform] * k if isinstance(self.transform, str) else list(self.transform)
        if len(steps) != k or len(trs) != k:
            raise ConfigurationError(f"block {self.name}: step/transform length mismatch")
        for tr in trs:
            if tr not in _TRANSFORMS:
                raise ConfigurationError(f"unknown transform {tr!r}")
        if any(s <= 0 for s in steps):
            raise ConfigurationError(f"block {self.name}: steps must be positive")
        self._steps = steps
        self._trs = trs

    def sample(self, theta: Theta, rng: np.random.Generator, ext=None) -> dict[str, float]:
        eps = rng.standard_normal(len(self.keys))
        out = {}
        for k, s, tr, e in zip(self.keys, self._steps, self._trs, eps):
            fwd, inv, _ = _TRANSFORMS[tr]
            try:
                z = fwd(float(theta[k]))
            except ValueError:
                z = math.nan
            out[k] = inv(z + s * e)
        return out

    def log_density(self, to: Mapping[str, float], theta_from: Theta, ext=None) -> float:
        lp = 0.0
        for k, s, tr in zip(self.keys, self._steps, self._trs):
            fwd, _, logjac = _TRANSFORMS[tr]
            try:
                z_to, z_from = fwd(float(to[k])), fwd(float(theta_from[k]))
            except ValueError:
                return -math.inf
            d = (z_to - z_from) / s
            lp += -0.5 * d * d - math.log(s) - 0.5 * math.log(2 * math.pi) + logjac(float(to[k]))
        return lp


@dataclass
class GibbsBlock:
    """Conditional update of a block given the retained trajectory.

    ``update(theta, trajectory, y, rng)`` returns ``(new_values, accepted)``.
    Exact conditional draws always report ``accepted=True``.
    """

    name: str
    keys: tuple[str, ...]
    update: Callable[[Theta, np.ndarray, np.ndarray, np.random.Generator], tuple[dict, bool]]
    exact: bool = False


@dataclass
class ParamBlocks:
    """theta split into blocks; the first ``p1`` use PMMH, the rest PG / PMwG moves."""

    blocks: list
    p1: int = 0
    log_prior: Callable[[Theta], float] = field(default=lambda theta: 0.0)

    def __post_init__(self):
        p = len(self.blocks)
        if not 0 <= self.p1 <= p:
            raise ConfigurationError(f"split index p1={self.p1} outside [0, {p}]")
        for i, b in enumerate(self.blocks):
            if i < self.p1 and not hasattr(b, "sample"):
                raise ConfigurationError(f"block {b.name} is in the PMMH part but has no proposal")
            if i >= self.p1 and not hasattr(b, "update"):
                raise ConfigurationError(f"block {b.name} is in the Gibbs part but has no update")
        seen: set[str] = set()
        for b in self.blocks:
            dup = seen.intersection(b.keys)
            if dup:
                raise ConfigurationError(f"parameter(s) {sorted(dup)} appear in more than one block")
            seen.update(b.keys)

    @property
    def p(self) -> int:
        return len(self.blocks)

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(k for b in self.blocks for k in b.keys)

    def split(self, theta: Theta) -> list[dict[str, float]]:
        return [{k: theta[k] for k in b.keys} for b in self.blocks]

    @staticmethod
    def join(parts: Sequence[Mapping[str, float]]) -> dict[str, float]:
        out: dict[str, float] = {}
        for part in parts:
            out.update(part)
        return out


# ---------------------------------------------------------------------------
# joint density and simulation
# ---------------------------------------------------------------------------


def as_observations(y, min_length: int = 2) -> np.ndarray:
    """Validate and coerce an observation series to a float array ``(T, k)``."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"observations must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[0] < min_length:
        raise InputError(f"need T >= {min_length} observations, got {arr.shape[0]}")
    return arr


def _as_states(model: StateSpaceModel, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1 and model.state_dim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[1] != model.state_dim:
        raise InputError(f"states must have shape (T, {model.state_dim}), got {arr.shape}")
    return arr


def log_joint(model: StateSpaceModel, theta: Theta, x, y) -> float:
    """log p(y_{1:T}, x_{1:T} | theta), summed term by term."""
    xs = _as_states(model, x)
    ys = as_observations(y, min_length=1)
    if xs.shape[0] != ys.shape[0]:
        raise InputError(f"state length {xs.shape[0]} != observation length {ys.shape[0]}")
    total = float(model.log_gt(0, ys[0], xs[0:1], theta)[0]) + float(model.log_f1(xs[0:1], theta)[0])
    for t in range(1, xs.shape[0]):
        total += float(model.log_gt(t, ys[t], xs[t : t + 1], theta)[0])
        total += float(model.log_ft(t, xs[t : t + 1], xs[t - 1 : t], theta)[0])
    return total


def simulate(model: StateSpaceModel, theta: Theta, T: int, rng: np.random.Generator):
    """Draw ``(x, y)`` from the model; ``x`` has shape (T, d_x), ``y`` shape (T, k)."""
    if T < 2:
        raise InputError(f"T must be >= 2, got {T}")
    design = getattr(model, "simulate_design", None)
    if design is not None:
        return design(theta, T, rng)
    x = np.empty((T, model.state_dim))
    x[0] = model.sample_f1(theta, 1, rng)[0]
    ys = [np.atleast_1d(model.sample_gt(0, x[0:1], theta, rng)).astype(float).ravel()]
    for t in range(1, T):
        x[t] = model.sample_ft(t, x[t - 1 : t], theta, rng)[0]
        ys.append(np.atleast_1d(model.sample_gt(t, x[t : t + 1], theta, rng)).astype(float).ravel())
    return x, np.vstack(ys)
