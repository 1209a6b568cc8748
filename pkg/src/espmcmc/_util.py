"""Small numerical helpers shared across modules.

These avoid scipy.special.logsumexp in hot loops: its argument checking costs
more than the arithmetic for the particle counts used here.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def logsumexp(a: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    a = np.asarray(a, dtype=float)
    if axis is None:
        m = a.max()
        if not np.isfinite(m):
            return float(m) if m != np.inf else math.inf
        return float(m + math.log(np.exp(a - m).sum()))
    m = a.max(axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.exp(a - m_safe).sum(axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis=axis)


def normalize_log(logw: np.ndarray) -> tuple[np.ndarray, float]:
    """Return (normalised weights, log of the weight sum) via max-shift."""
    m = logw.max()
    if not np.isfinite(m):
        return np.full_like(logw, np.nan), float(m) if m == np.inf else -math.inf
    e = np.exp(logw - m)
    s = e.sum()
    return e / s, float(m + math.log(s))


def norm_logpdf(x, mean, var):
    """Elementwise log N(x; mean, var)."""
    d = x - mean
    if isinstance(var, float):
        return (-0.5 / var) * (d * d) - 0.5 * (LOG_2PI + math.log(var))
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * d * d / var


def mvn_logpdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """log N(x; mean, L L^T) for rows of ``x`` (shape (..., d)) given the Cholesky factor."""
    d = x.shape[-1]
    diff = np.asarray(x - mean, dtype=float)
    flat = diff.reshape(-1, d)
    z = np.linalg.solve(chol, flat.T).T if d > 1 else flat / chol[0, 0]
    quad = np.einsum("ij,ij->i", z, z).reshape(diff.shape[:-1])
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (d * LOG_2PI + logdet + quad)


def mvt_logpdf(x: np.ndarray, loc: np.ndarray, chol: np.ndarray, dof: float) -> np.ndarray:
    """log density of a multivariate Student-t with scale matrix L L^T."""
    d = x.shape[-1]
    diff = np.asarray(x - loc, dtype=float)
    flat = diff.reshape(-1, d)
    z = np.linalg.solve(chol, flat.T).T if d > 1 else flat / chol[0, 0]
    quad = np.einsum("ij,ij->i", z, z).reshape(diff.shape[:-1])
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return (
        math.lgamma(0.5 * (dof + d))
        - math.lgamma(0.5 * dof)
        - 0.5 * d * math.log(dof * math.pi)
        - 0.5 * logdet
        - 0.5 * (dof + d) * np.log1p(quad / dof)
    )


def invgamma_logpdf(x: float, shape: float, scale: float) -> float:
    if x <= 0:
        return -math.inf
    return shape * math.log(scale) - math.lgamma(shape) - (shape + 1.0) * math.log(x) - scale / x
