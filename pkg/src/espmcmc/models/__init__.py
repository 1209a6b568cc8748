"""Bundled models, registered under short string identifiers."""

from __future__ import annotations

from ..errors import ConfigurationError
from ..model import StateSpaceModel
from .binreg import BinomialRegression
from .common import conjugate_variance_update, inverse_gamma_posterior
from .hmm2 import DiscreteHMM2
from .lgssm import LinearGaussianSSM
from .nonlinear import NonlinearBenchmark
from .sv import StochasticVolatility, load_returns

REGISTRY: dict[str, type] = {
    "nonlinear": NonlinearBenchmark,
    "sv": StochasticVolatility,
    "binreg": BinomialRegression,
    "lgssm": LinearGaussianSSM,
    "hmm2": DiscreteHMM2,
}


def get_model(name: str, **options) -> StateSpaceModel:
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise ConfigurationError(f"unknown model {name!r}; available: {sorted(REGISTRY)}") from None
    try:
        return cls(**options)
    except TypeError as exc:
        raise ConfigurationError(f"bad options for model {name!r}: {exc}") from None


__all__ = [
    "REGISTRY",
    "get_model",
    "BinomialRegression",
    "DiscreteHMM2",
    "LinearGaussianSSM",
    "NonlinearBenchmark",
    "StochasticVolatility",
    "conjugate_variance_update",
    "inverse_gamma_posterior",
    "load_returns",
]
