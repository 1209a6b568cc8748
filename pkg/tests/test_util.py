import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import logsumexp as sp_logsumexp

from espmcmc._util import invgamma_logpdf, logsumexp, mvn_logpdf, mvt_logpdf, norm_logpdf, normalize_log

finite = st.floats(-50, 50, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=30))
def test_logsumexp_matches_scipy(vals):
    a = np.array(vals)
    assert logsumexp(a) == pytest.approx(sp_logsumexp(a), rel=1e-12, abs=1e-12)


def test_logsumexp_all_minus_inf():
    assert logsumexp(np.array([-np.inf, -np.inf])) == -np.inf


@given(st.lists(finite, min_size=1, max_size=30))
def test_normalize_log_sums_to_one(vals):
    W, lsum = normalize_log(np.array(vals))
    assert W.sum() == pytest.approx(1.0, abs=1e-12)
    assert lsum == pytest.approx(sp_logsumexp(vals), rel=1e-12, abs=1e-12)


@settings(max_examples=50)
@given(finite, finite, st.floats(0.01, 100))
def test_norm_logpdf_matches_scipy(x, m, v):
    ref = stats.norm.logpdf(x, m, math.sqrt(v))
    assert norm_logpdf(x, m, v) == pytest.approx(ref, rel=1e-10, abs=1e-10)
    assert float(norm_logpdf(np.array([x]), m, np.array([v]))[0]) == pytest.approx(ref, rel=1e-10, abs=1e-10)


def test_mvn_and_mvt_logpdf_match_scipy(rng):
    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    chol = np.linalg.cholesky(cov)
    mean = np.array([0.5, -1.0])
    x = rng.standard_normal((5, 2))
    assert np.allclose(mvn_logpdf(x, mean, chol), stats.multivariate_normal(mean, cov).logpdf(x))
    assert np.allclose(mvt_logpdf(x, mean, chol, 4.0), stats.multivariate_t(mean, cov, df=4.0).logpdf(x))


def test_invgamma_logpdf_matches_scipy():
    assert invgamma_logpdf(0.7, 1.0, 0.1) == pytest.approx(stats.invgamma(1.0, scale=0.1).logpdf(0.7))
    assert invgamma_logpdf(-1.0, 1.0, 0.1) == -math.inf
