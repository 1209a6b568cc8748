"""Helpers shared by the bundled models."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigurationError


def inverse_gamma_posterior(shape: float, scale: float, ssr: float, n: int) -> tuple[float, float]:
    """Parameters of IG(shape + n/2, scale + ssr/2), the variance conditional given n Gaussian residuals."""
    if shape <= 0 or scale <= 0:
        raise ConfigurationError("inverse-gamma prior needs positive shape and scale")
    if n < 0 or ssr < 0:
        raise ValueError("need n >= 0 and ssr >= 0")
    return shape + 0.5 * n, scale + 0.5 * ssr


def sample_inverse_gamma(shape: float, scale: float, rng: np.random.Generator) -> float:
    return float(scale / rng.gamma(shape))


def conjugate_variance_update(residuals, prior: tuple[float, float], rng: np.random.Generator) -> float:
    """Exact draw of a variance from its inverse-gamma conditional given Gaussian residuals."""
    r = np.asarray(residuals, dtype=float).ravel()
    a, b = inverse_gamma_posterior(prior[0], prior[1], float(r @ r), r.size)
    return sample_inverse_gamma(a, b, rng)


def half_t_logpdf(x: float, dof: float, scale: float = 1.0) -> float:
    """log density of |T| for a Student-t T with ``dof`` degrees of freedom."""
    if x <= 0:
        return -math.inf
    z = x / scale
    return (
        math.log(2.0)
        + math.lgamma(0.5 * (dof + 1))
        - math.lgamma(0.5 * dof)
        - 0.5 * math.log(dof * math.pi)
        - math.log(scale)
        - 0.5 * (dof + 1) * math.log1p(z * z / dof)
    )
