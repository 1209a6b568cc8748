"""Exact reference computations for the linear-Gaussian and two-state models.

These are test oracles: they share no code with the particle algorithms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SingularInnovationError
from .model import as_observations

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class KalmanResult:
    loglik: float
    filt_means: np.ndarray  # (T, d)
    filt_covs: np.ndarray  # (T, d, d)
    smooth_means: np.ndarray
    smooth_covs: np.ndarray


def _matrices(model, theta):
    if not hasattr(model, "matrices"):
        raise ConfigurationError(f"{model!r} is not linear-Gaussian")
    return model.matrices(theta)


def kalman_filter(A, Q, C, R, m0, P0, y):
    """Covariance-form filter; returns (loglik, filtered means, filtered covariances)."""
    y = as_observations(y, min_length=1)
    T, d = y.shape[0], len(m0)
    means, covs = np.empty((T, d)), np.empty((T, d, d))
    m, P = np.asarray(m0, float), np.asarray(P0, float)
    ll = 0.0
    for t in range(T):
        if t > 0:
            m, P = A @ m, A @ P @ A.T + Q
        S = C @ P @ C.T + R
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise SingularInnovationError(f"innovation covariance not positive definite at t={t}") from None
        e = y[t] - C @ m
        z = np.linalg.solve(L, e)
        ll += -0.5 * (len(e) * LOG_2PI + 2 * np.log(np.diag(L)).sum() + z @ z)
        K = np.linalg.solve(S, C @ P).T
        m = m + K @ e
        P = P - K @ S @ K.T
        P = 0.5 * (P + P.T)
        means[t], covs[t] = m, P
    return float(ll), means, covs


def rts_smoother(A, Q, filt_means, filt_covs):
    T = filt_means.shape[0]
    sm, sc = filt_means.copy(), filt_covs.copy()
    for t in range(T - 2, -1, -1):
        m, P = filt_means[t], filt_covs[t]
        Pp = A @ P @ A.T + Q
        G = np.linalg.solve(Pp, A @ P).T
        sm[t] = m + G @ (sm[t + 1] - A @ m)
        sc[t] = P + G @ (sc[t + 1] - Pp) @ G.T
    return sm, sc


def kalman_loglik_and_smoother(model, theta, y) -> KalmanResult:
    A, Q, C, R, m0, P0 = _matrices(model, theta)
    ll, fm, fc = kalman_filter(A, Q, C, R, m0, P0, y)
    sm, sc = rts_smoother(A, Q, fm, fc)
    return KalmanResult(ll, fm, fc, sm, sc)


def kalman_loglik(model, theta, y) -> float:
    A, Q, C, R, m0, P0 = _matrices(model, theta)
    return kalman_filter(A, Q, C, R, m0, P0, y)[0]


def conditional_smoothing_moments(filt_mean, filt_cov, A, Q, x_next):
    """Moments of p(x_t | y_{1:t}, x_{t+1}) in information form.

    precision = P^-1 + A' Q^-1 A,  mean = precision^-1 (P^-1 m + A' Q^-1 x_next)
    """
    Pi = np.linalg.inv(filt_cov)
    Qi = np.linalg.inv(Q)
    prec = Pi + A.T @ Qi @ A
    cov = np.linalg.inv(prec)
    mean = cov @ (Pi @ filt_mean + A.T @ Qi @ np.asarray(x_next, float))
    return mean, 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# two-state chain
# ---------------------------------------------------------------------------

MAX_ENUMERATION_T = 12


@dataclass(frozen=True)
class HMMSmoothing:
    paths: np.ndarray  # (2^T, T) of 0/1
    path_probs: np.ndarray  # (2^T,)
    marginals: np.ndarray  # (T, 2): P(x_t = k | y)


def _hmm_arrays(model, theta):
    return model.initial_probs(theta), model.transition_matrix(theta), model.emission_matrix(theta)


def hmm_exact_smoothing(model, theta, y) -> HMMSmoothing:
    """Enumerate all 2^T paths; raises MemoryError for T > 12."""
    y = as_observations(y, min_length=1)
    T = y.shape[0]
    if T > MAX_ENUMERATION_T:
        raise MemoryError(f"exact enumeration limited to T <= {MAX_ENUMERATION_T}, got {T}")
    pi, P, E = _hmm_arrays(model, theta)
    obs = y[:, 0].astype(int)
    paths = np.array(list(itertools.product((0, 1), repeat=T)), dtype=int)
    w = pi[paths[:, 0]] * E[paths[:, 0], obs[0]]
    for t in range(1, T):
        w = w * P[paths[:, t - 1], paths[:, t]] * E[paths[:, t], obs[t]]
    probs = w / w.sum()
    marg = np.empty((T, 2))
    for t in range(T):
        marg[t, 1] = probs[paths[:, t] == 1].sum()
        marg[t, 0] = 1.0 - marg[t, 1]
    return HMMSmoothing(paths, probs, marg)


def hmm_forward_backward(model, theta, y):
    """Scaled forward-backward; returns (filtering probs (T, 2), smoothing marginals (T, 2), log-likelihood)."""
    y = as_observations(y, min_length=1)
    T = y.shape[0]
    pi, P, E = _hmm_arrays(model, theta)
    obs = y[:, 0].astype(int)
    alpha = np.empty((T, 2))
    c = np.empty(T)
    a = pi * E[:, obs[0]]
    for t in range(T):
        if t > 0:
            a = (alpha[t - 1] @ P) * E[:, obs[t]]
        c[t] = a.sum()
        alpha[t] = a / c[t]
    beta = np.ones((T, 2))
    for t in range(T - 2, -1, -1):
        beta[t] = P @ (E[:, obs[t + 1]] * beta[t + 1]) / c[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    return alpha, gamma, float(np.log(c).sum())
