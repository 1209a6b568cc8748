"""Compiled (numba) implementation of the particle routines for scalar-state models.

The Python modules ``smc``, ``backward`` and ``csmc`` are the reference
implementation. This module mirrors them for models with a one-dimensional
continuous state, consuming the random stream in exactly the same order, so
both engines give the same output up to floating-point rounding.

A model opts in by having an entry in :data:`KERNEL_FACTORIES`, which builds
jitted scalar density and sampler functions. Parameters are passed to the
kernels as a float array ordered like ``model.param_names``.
"""

from __future__ import annotations

import math
from collections import namedtuple
from functools import lru_cache

import numpy as np

from .errors import DegenerateWeightsError, ProposalError, SingularInnovationError

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

LOG_2PI = math.log(2.0 * math.pi)

FAMILY_CODES = {
    "bootstrap": 0,
    "reject": 1,
    "rw-backward": 2,
    "rw-linearized": 3,
    "ind-gauss-backward": 4,
    "ind-gauss-linearized": 5,
    "ind-student-t": 6,
}

# status codes returned by the kernels
OK, DEGENERATE, BACKWARD_DEGENERATE, ANCESTOR_DEGENERATE, MOMENT_DEGENERATE, SINGULAR, BAD_PROPOSAL = range(7)

Kernels = namedtuple(
    "Kernels",
    "f1_logpdf ft_logpdf g_logpdf f1_sample ft_sample m1_sample m1_logpdf mt_sample mt_logpdf "
    "linearization has_linearization bootstrap",
)


def _raise(code: int, t: int) -> None:
    if code == OK:
        return
    if code == DEGENERATE:
        raise DegenerateWeightsError(t)
    if code == BACKWARD_DEGENERATE:
        raise DegenerateWeightsError(t, "backward weights")
    if code == ANCESTOR_DEGENERATE:
        raise DegenerateWeightsError(t, "ancestor weights")
    if code == MOMENT_DEGENERATE:
        raise DegenerateWeightsError(t, "moment weights")
    if code == SINGULAR:
        raise SingularInnovationError(f"innovation covariance R is not positive definite at t={t}")
    raise ProposalError(f"proposal failure at t={t}")


# ---------------------------------------------------------------------------
# model kernels
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nlp(x, mean, var):
        # scalar-variance branch of _util.norm_logpdf
        d = x - mean
        return (-0.5 / var) * (d * d) - 0.5 * (LOG_2PI + math.log(var))

    @njit(cache=True)
    def _nlp_arr(x, mean, var):
        # array-variance branch of _util.norm_logpdf
        d = x - mean
        return -0.5 * (LOG_2PI + math.log(var)) - 0.5 * d * d / var

    @njit(cache=True)
    def _no_lin(t, tp):
        return 0.0, 0.0, 0.0


@lru_cache(maxsize=None)
def _nonlinear_kernels(init_var: float) -> Kernels:
    sd0 = math.sqrt(init_var)

    @njit
    def f1_logpdf(x, tp):
        return _nlp(x, 0.0, init_var)

    @njit
    def tmean(t, xp):
        return xp * (0.5 + 25.0 / (1.0 + xp * xp)) + 8.0 * math.cos(1.2 * t)

    @njit
    def ft_logpdf(t, x, xp, tp):
        return _nlp(x, tmean(t, xp), tp[1])

    @njit
    def g_logpdf(t, yt, x, tp):
        return _nlp(yt[0], 0.05 * (x * x), tp[0])

    @njit
    def f1_sample(tp, rng):
        return sd0 * rng.standard_normal()

    @njit
    def ft_sample(t, xp, tp, rng):
        return tmean(t, xp) + math.sqrt(tp[1]) * rng.standard_normal()

    @njit
    def m1_sample(yt, tp, rng):
        return f1_sample(tp, rng)

    @njit
    def m1_logpdf(yt, x, tp):
        return f1_logpdf(x, tp)

    @njit
    def mt_sample(t, yt, xp, tp, rng):
        return ft_sample(t, xp, tp, rng)

    @njit
    def mt_logpdf(t, yt, x, xp, tp):
        return ft_logpdf(t, x, xp, tp)

    return Kernels(
        f1_logpdf, ft_logpdf, g_logpdf, f1_sample, ft_sample, m1_sample, m1_logpdf, mt_sample, mt_logpdf,
        _no_lin, False, True,
    )


@lru_cache(maxsize=None)
def _lgssm_kernels(p0: float) -> Kernels:
    sd0 = math.sqrt(p0)

    @njit
    def f1_logpdf(x, tp):
        return _nlp(x, 0.0, p0)

    @njit
    def ft_logpdf(t, x, xp, tp):
        return _nlp(x, tp[0] * xp, tp[1])

    @njit
    def g_logpdf(t, yt, x, tp):
        return _nlp(yt[0], x, tp[2])

    @njit
    def f1_sample(tp, rng):
        return sd0 * rng.standard_normal()

    @njit
    def ft_sample(t, xp, tp, rng):
        return tp[0] * xp + math.sqrt(tp[1]) * rng.standard_normal()

    @njit
    def m1_sample(yt, tp, rng):
        return f1_sample(tp, rng)

    @njit
    def m1_logpdf(yt, x, tp):
        return f1_logpdf(x, tp)

    @njit
    def mt_sample(t, yt, xp, tp, rng):
        return ft_sample(t, xp, tp, rng)

    @njit
    def mt_logpdf(t, yt, x, xp, tp):
        return ft_logpdf(t, x, xp, tp)

    @njit
    def lin(t, tp):
        return 0.0, tp[0], tp[1]

    return Kernels(
        f1_logpdf, ft_logpdf, g_logpdf, f1_sample, ft_sample, m1_sample, m1_logpdf, mt_sample, mt_logpdf,
        lin, True, True,
    )


@lru_cache(maxsize=None)
def _sv_kernels(adapted: bool) -> Kernels:
    # tp = (mu, tau, phi)

    @njit
    def f1_logpdf(x, tp):
        phi = tp[2]
        return _nlp(x, 0.0, 1.0 / (1.0 - phi * phi))

    @njit
    def ft_logpdf(t, x, xp, tp):
        return _nlp(x, tp[2] * xp, 1.0)

    @njit
    def log_obs(y, s):
        return -0.5 * LOG_2PI - s - 0.5 * y * y * math.exp(-2.0 * s)

    @njit
    def g_logpdf(t, yt, x, tp):
        return log_obs(yt[0], tp[0] + tp[1] * x)

    @njit
    def f1_sample(tp, rng):
        phi = tp[2]
        return rng.standard_normal() / math.sqrt(1.0 - phi * phi)

    @njit
    def ft_sample(t, xp, tp, rng):
        return tp[2] * xp + rng.standard_normal()

    @njit
    def opt_moments(y, x0, prior_var, tp):
        mu, tau = tp[0], tp[1]
        a = y * y * math.exp(-2.0 * (mu + tau * x0))
        grad = tau * (a - 1.0)
        curv = -2.0 * tau * tau * a
        prec = 1.0 / prior_var - curv
        if prec > 0:
            return x0 + grad / prec, 1.0 / prec
        return x0, 1.0 / (1.0 / prior_var)

    @njit
    def m1_moments(yt, tp):
        phi = tp[2]
        return opt_moments(yt[0], 0.0, 1.0 / (1.0 - phi * phi), tp)

    if adapted:

        @njit
        def m1_sample(yt, tp, rng):
            mean, var = m1_moments(yt, tp)
            return mean + math.sqrt(var) * rng.standard_normal()

        @njit
        def m1_logpdf(yt, x, tp):
            mean, var = m1_moments(yt, tp)
            return _nlp_arr(x, mean, var)

        @njit
        def mt_sample(t, yt, xp, tp, rng):
            mean, var = opt_moments(yt[0], tp[2] * xp, 1.0, tp)
            return mean + math.sqrt(var) * rng.standard_normal()

        @njit
        def mt_logpdf(t, yt, x, xp, tp):
            mean, var = opt_moments(yt[0], tp[2] * xp, 1.0, tp)
            return _nlp_arr(x, mean, var)

    else:

        @njit
        def m1_sample(yt, tp, rng):
            return f1_sample(tp, rng)

        @njit
        def m1_logpdf(yt, x, tp):
            return f1_logpdf(x, tp)

        @njit
        def mt_sample(t, yt, xp, tp, rng):
            return ft_sample(t, xp, tp, rng)

        @njit
        def mt_logpdf(t, yt, x, xp, tp):
            return ft_logpdf(t, x, xp, tp)

    @njit
    def lin(t, tp):
        return 0.0, tp[2], 1.0

    return Kernels(
        f1_logpdf, ft_logpdf, g_logpdf, f1_sample, ft_sample, m1_sample, m1_logpdf, mt_sample, mt_logpdf,
        lin, True, not adapted,
    )


def _factories():
    from .models import LinearGaussianSSM, NonlinearBenchmark, StochasticVolatility

    return {
        NonlinearBenchmark: lambda m: _nonlinear_kernels(float(m.init_var)),
        LinearGaussianSSM: lambda m: _lgssm_kernels(float(m.p0)),
        StochasticVolatility: lambda m: _sv_kernels(bool(m.adapted)),
    }


def kernels_for(model) -> Kernels | None:
    if not HAVE_NUMBA:
        return None
    factory = _factories().get(type(model))
    return None if factory is None else factory(model)


def supports(model, family: str, moments: str = "backward") -> bool:
    """True when the compiled routines cover ``model`` with this proposal."""
    k = kernels_for(model)
    if k is None or family not in FAMILY_CODES:
        return False
    needs_lin = family.endswith("linearized") or (family == "ind-student-t" and moments == "linearized")
    return k.has_linearization or not needs_lin


# ---------------------------------------------------------------------------
# shared numeric helpers
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _cumsum(w, out):
        s = 0.0
        for i in range(w.shape[0]):
            s += w[i]
            out[i] = s

    @njit(cache=True)
    def _search_right(c, v):
        lo, hi = 0, c.shape[0]
        while lo < hi:
            mid = (lo + hi) >> 1
            if v < c[mid]:
                hi = mid
            else:
                lo = mid + 1
        return lo if lo < c.shape[0] else c.shape[0] - 1

    @njit(cache=True)
    def _normalize(lw, W):
        """In-place NaN -> -inf, normalised weights into W; returns (status, log sum)."""
        n = lw.shape[0]
        m = -np.inf
        for i in range(n):
            if lw[i] != lw[i]:
                lw[i] = -np.inf
            if lw[i] > m:
                m = lw[i]
        if not (-np.inf < m < np.inf):
            return DEGENERATE, m
        s = 0.0
        for i in range(n):
            W[i] = math.exp(lw[i] - m)
            s += W[i]
        for i in range(n):
            W[i] /= s
        return OK, m + math.log(s)

    @njit(cache=True)
    def _sample_log(lw, u):
        """Index drawn with probability proportional to exp(lw); -1 if degenerate."""
        n = lw.shape[0]
        m = -np.inf
        for i in range(n):
            v = lw[i]
            if v == v and v > m:
                m = v
        if not (-np.inf < m < np.inf):
            return -1
        c = np.empty(n)
        s = 0.0
        for i in range(n):
            v = lw[i]
            if v == v:
                s += math.exp(v - m)
            c[i] = s
        return _search_right(c, u * c[n - 1])

    @njit(cache=True)
    def _jitter(v):
        return v + (1e-9 * v if v > 0 else 1e-12)

    @njit(cache=True)
    def _proposal_sd(var, scale):
        v = _jitter(var * scale)
        if not v > 0:
            v = _jitter(v)
            if not v > 0:
                return -1.0
        return math.sqrt(v)

    @njit(cache=True)
    def _gauss_lq(diff, sd):
        z = diff / sd
        return -0.5 * (LOG_2PI + 2.0 * math.log(sd) + z * z)

    @njit(cache=True)
    def _t_lq(diff, sd, dof):
        z = diff / sd
        return (
            math.lgamma(0.5 * (dof + 1.0))
            - math.lgamma(0.5 * dof)
            - 0.5 * math.log(dof * math.pi)
            - 0.5 * (2.0 * math.log(sd))
            - 0.5 * (dof + 1.0) * math.log1p(z * z / dof)
        )


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

Engine = namedtuple("Engine", "smc backward csmc bsim")


@lru_cache(maxsize=None)
def build_engine(k: Kernels) -> Engine:
    f1_lp, ft_lp, g_lp = k.f1_logpdf, k.ft_logpdf, k.g_logpdf
    f1_s, ft_s = k.f1_sample, k.ft_sample
    m1_s, m1_lp, mt_s, mt_lp = k.m1_sample, k.m1_logpdf, k.mt_sample, k.mt_logpdf
    lin = k.linearization
    boot = k.bootstrap

    @njit
    def logw_one(t, yt, x, xp, tp):
        lw = g_lp(t, yt, x, tp)
        if boot:
            return lw
        if t == 0:
            return lw + f1_lp(x, tp) - m1_lp(yt, x, tp)
        return lw + ft_lp(t, x, xp, tp) - mt_lp(t, yt, x, xp, tp)

    @njit
    def propagate(t, yt, xprev, Wprev, tp, rng, anc_out, x_out):
        n = x_out.shape[0]
        u = np.empty(n)
        for i in range(n):
            u[i] = rng.random()
        c = np.empty(Wprev.shape[0])
        _cumsum(Wprev, c)
        tot = c[c.shape[0] - 1]
        for i in range(n):
            anc_out[i] = _search_right(c, u[i] * tot)
        for i in range(n):
            x_out[i] = mt_s(t, yt, xprev[anc_out[i]], tp, rng)

    @njit
    def smc(y, tp, N, rng, has_ret, ret_x, ret_slots, ret_anc):
        T = y.shape[0]
        X = np.empty((T, N))
        LW = np.empty((T, N))
        W = np.empty((T, N))
        L = np.empty(T)
        ANC = np.zeros((max(T - 1, 0), N), dtype=np.int64)
        for i in range(N):
            X[0, i] = m1_s(y[0], tp, rng)
        if has_ret:
            X[0, ret_slots[0]] = ret_x[0]
        for i in range(N):
            LW[0, i] = logw_one(0, y[0], X[0, i], 0.0, tp)
        st, L[0] = _normalize(LW[0], W[0])
        if st != OK:
            return X, LW, W, L, ANC, st, 0
        for t in range(1, T):
            propagate(t, y[t], X[t - 1], W[t - 1], tp, rng, ANC[t - 1], X[t])
            if has_ret:
                b = ret_slots[t]
                ANC[t - 1, b] = ret_anc[t - 1]
                X[t, b] = ret_x[t]
            for i in range(N):
                LW[t, i] = logw_one(t, y[t], X[t, i], X[t - 1, ANC[t - 1, i]], tp)
            st, L[t] = _normalize(LW[t], W[t])
            if st != OK:
                return X, LW, W, L, ANC, st, t
        return X, LW, W, L, ANC, OK, 0

    @njit
    def log_local(t, yt, x_next, x, tp):
        return g_lp(t, yt, x, tp) + ft_lp(t + 1, x_next, x, tp)

    @njit
    def log_prior_term(t, x, xprev, lwprev_shift, has_prev, tp):
        if not has_prev:
            return f1_lp(x, tp)
        n = xprev.shape[0]
        a = np.empty(n)
        m = -np.inf
        for i in range(n):
            a[i] = ft_lp(t, x, xprev[i], tp) + lwprev_shift[i]
            if a[i] > m:
                m = a[i]
        if not (-np.inf < m < np.inf):
            ms = 0.0
        else:
            ms = m
        s = 0.0
        for i in range(n):
            s += math.exp(a[i] - ms)
        return math.log(s) + ms

    @njit
    def log_target(t, yt, x_next, x, xprev, lwprev_shift, has_prev, tp):
        v = log_local(t, yt, x_next, x, tp) + log_prior_term(t, x, xprev, lwprev_shift, has_prev, tp)
        return v if v == v else -np.inf

    @njit
    def moments_weighted(x, lw, excl):
        """Weighted mean/variance with slot ``excl`` removed; status on degeneracy."""
        n = x.shape[0]
        m = -np.inf
        cnt = 0
        for i in range(n):
            if i == excl:
                continue
            cnt += 1
            v = lw[i]
            if v == v and v > m:
                m = v
        if cnt == 0 or not (-np.inf < m < np.inf):
            return MOMENT_DEGENERATE, 0.0, 0.0
        s = 0.0
        e = np.empty(n)
        for i in range(n):
            if i == excl:
                e[i] = 0.0
                continue
            v = lw[i]
            e[i] = math.exp(v - m) if v == v else 0.0
            s += e[i]
        mean = 0.0
        for i in range(n):
            if i != excl:
                mean += (e[i] / s) * x[i]
        var = 0.0
        for i in range(n):
            if i != excl:
                d = x[i] - mean
                var += d * (e[i] / s) * d
        return OK, mean, var

    @njit
    def proposal_moments(fam, stud_lin, t, x_next, cur_x, cur_lw, excl, tp):
        use_lin = fam == 3 or fam == 5 or (fam == 6 and stud_lin)
        if not use_lin:
            lbw = np.empty(cur_x.shape[0])
            for i in range(cur_x.shape[0]):
                lbw[i] = cur_lw[i] + ft_lp(t + 1, x_next, cur_x[i], tp)
            st, mean, var = moments_weighted(cur_x, lbw, excl)
            if st != OK:
                return BACKWARD_DEGENERATE, 0.0, 0.0
            return OK, mean, _jitter(var)
        st, m, S = moments_weighted(cur_x, cur_lw, excl)
        if st != OK:
            return MOMENT_DEGENERATE, 0.0, 0.0
        h, H, Sig = lin(t, tp)
        R = H * S * H + Sig
        if not R > 0:
            return SINGULAR, 0.0, 0.0
        cR = math.sqrt(R)
        if cR <= 1e-150:
            return SINGULAR, 0.0, 0.0
        e = x_next - h - H * m
        K = ((S * H) / cR) / cR
        return OK, m + K * e, S - K * H * S

    @njit
    def kernel_chain(t, yt, x_next, xprev, lwprev, wprev, has_prev, cur_x, cur_lw, excl, x0,
                     C, fam, scale, dof, stud_lin, tp, rng, out):
        """Returns (status, n_accepted); iterates are written to ``out``."""
        if fam == 1:
            for j in range(C):
                out[j] = x0
            return OK, 0
        mean = 0.0
        sd = 0.0
        if fam >= 2:
            st, mean, var = proposal_moments(fam, stud_lin, t, x_next, cur_x, cur_lw, excl, tp)
            if st != OK:
                return st, 0
            sd = _proposal_sd(var, scale)
            if sd < 0:
                return BAD_PROPOSAL, 0
        lwprev_shift = np.empty(xprev.shape[0])
        if has_prev:
            mx = -np.inf
            for i in range(xprev.shape[0]):
                if lwprev[i] > mx:
                    mx = lwprev[i]
            for i in range(xprev.shape[0]):
                lwprev_shift[i] = lwprev[i] - mx
        logu = np.empty(C)
        for j in range(C):
            logu[j] = math.log(rng.random())
        n_acc = 0
        if fam == 2 or fam == 3:
            cur = x0
            cur_lt = log_target(t, yt, x_next, cur, xprev, lwprev_shift, has_prev, tp)
            for j in range(C):
                xp = cur + sd * rng.standard_normal()
                if not (-np.inf < xp < np.inf):
                    return BAD_PROPOSAL, n_acc
                lt = log_target(t, yt, x_next, xp, xprev, lwprev_shift, has_prev, tp)
                lq_rev = _gauss_lq(cur - xp, sd)
                lq_fwd = _gauss_lq(xp - cur, sd)
                if logu[j] < lt - cur_lt + lq_rev - lq_fwd:
                    cur = xp
                    cur_lt = lt
                    n_acc += 1
                out[j] = cur
            return OK, n_acc
        cand = np.empty(C)
        if fam == 0:
            if not has_prev:
                for j in range(C):
                    cand[j] = f1_s(tp, rng)
            else:
                u = np.empty(C)
                for j in range(C):
                    u[j] = rng.random()
                c = np.empty(wprev.shape[0])
                _cumsum(wprev, c)
                tot = c[c.shape[0] - 1]
                for j in range(C):
                    cand[j] = ft_s(t, xprev[_search_right(c, u[j] * tot)], tp, rng)
        elif fam == 4 or fam == 5:
            for j in range(C):
                cand[j] = mean + rng.standard_normal() * sd
        else:
            z = np.empty(C)
            for j in range(C):
                z[j] = rng.standard_normal()
            for j in range(C):
                g = rng.chisquare(dof)
                cand[j] = mean + (z[j] * sd) / math.sqrt(g / dof)
        li = np.empty(C + 1)
        for j in range(C + 1):
            x = x0 if j == 0 else cand[j - 1]
            if j > 0 and not (-np.inf < x < np.inf):
                return BAD_PROPOSAL, 0
            if fam == 0:
                v = log_local(t, yt, x_next, x, tp)
            elif fam == 6:
                v = log_target(t, yt, x_next, x, xprev, lwprev_shift, has_prev, tp) - _t_lq(x - mean, sd, dof)
            else:
                v = log_target(t, yt, x_next, x, xprev, lwprev_shift, has_prev, tp) - _gauss_lq(x - mean, sd)
            li[j] = v if v == v else -np.inf
        cur = x0
        cur_li = li[0]
        for j in range(C):
            if logu[j] < li[j + 1] - cur_li:
                cur = cand[j]
                cur_li = li[j + 1]
                n_acc += 1
            out[j] = cur
        return OK, n_acc

    @njit
    def backward(y, tp, X, LW, W, C, fam, scale, dof, stud_lin, rng):
        T, N = X.shape
        B = np.zeros(T, dtype=np.int64)
        XT = np.empty((max(T - 1, 0), C))
        c = np.empty(N)
        _cumsum(W[T - 1], c)
        B[T - 1] = _search_right(c, rng.random() * c[N - 1])
        x_next = X[T - 1, B[T - 1]]
        n_acc = 0
        lbw = np.empty(N)
        dummy = np.empty(1)
        for t in range(T - 2, -1, -1):
            for i in range(N):
                lbw[i] = LW[t, i] + ft_lp(t + 1, x_next, X[t, i], tp)
            b = _sample_log(lbw, rng.random())
            if b < 0:
                return B, XT, n_acc, BACKWARD_DEGENERATE, t
            B[t] = b
            if t > 0:
                st, acc = kernel_chain(t, y[t], x_next, X[t - 1], LW[t - 1], W[t - 1], True, X[t], LW[t], b,
                                       X[t, b], C, fam, scale, dof, stud_lin, tp, rng, XT[t])
            else:
                st, acc = kernel_chain(t, y[t], x_next, dummy, dummy, dummy, False, X[t], LW[t], b,
                                       X[t, b], C, fam, scale, dof, stud_lin, tp, rng, XT[t])
            if st != OK:
                return B, XT, n_acc, st, t
            n_acc += acc
            x_next = XT[t, C - 1]
        return B, XT, n_acc, OK, 0

    @njit
    def csmc(y, tp, path, b_last, N, C, fam, scale, dof, stud_lin, rng):
        T = y.shape[0]
        X = np.empty((T, N))
        LW = np.empty((T, N))
        W = np.empty((T, N))
        L = np.empty(T)
        ANC = np.zeros((max(T - 1, 0), N), dtype=np.int64)
        B = np.zeros(T, dtype=np.int64)
        XT = np.empty((max(T - 1, 0), C))
        rev = np.empty(C)
        lv = np.empty(N)
        dummy = np.empty(1)
        n_acc = 0
        for t in range(T - 1):
            b = rng.integers(0, N)
            B[t] = b
            if t == 0:
                for i in range(N):
                    X[0, i] = m1_s(y[0], tp, rng)
                for i in range(N):
                    LW[0, i] = logw_one(0, y[0], X[0, i], 0.0, tp)
                st, acc = kernel_chain(0, y[0], path[1], dummy, dummy, dummy, False, X[0], LW[0], b,
                                       path[0], C, fam, scale, dof, stud_lin, tp, rng, rev)
            else:
                propagate(t, y[t], X[t - 1], W[t - 1], tp, rng, ANC[t - 1], X[t])
                for i in range(N):
                    LW[t, i] = logw_one(t, y[t], X[t, i], X[t - 1, ANC[t - 1, i]], tp)
                st, acc = kernel_chain(t, y[t], path[t + 1], X[t - 1], LW[t - 1], W[t - 1], True, X[t], LW[t], b,
                                       path[t], C, fam, scale, dof, stud_lin, tp, rng, rev)
            if st != OK:
                return X, LW, W, L, ANC, B, XT, n_acc, st, t
            n_acc += acc
            XT[t, C - 1] = path[t]
            for j in range(C - 1):
                XT[t, j] = rev[C - 2 - j]
            X[t, b] = rev[C - 1]
            if t > 0:
                for i in range(N):
                    lv[i] = LW[t - 1, i] + ft_lp(t, X[t, b], X[t - 1, i], tp)
                a = _sample_log(lv, rng.random())
                if a < 0:
                    return X, LW, W, L, ANC, B, XT, n_acc, ANCESTOR_DEGENERATE, t
                ANC[t - 1, b] = a
                LW[t, b] = logw_one(t, y[t], X[t, b], X[t - 1, a], tp)
            else:
                LW[0, b] = logw_one(0, y[0], X[0, b], 0.0, tp)
            st, L[t] = _normalize(LW[t], W[t])
            if st != OK:
                return X, LW, W, L, ANC, B, XT, n_acc, st, t
        t = T - 1
        b = b_last
        B[t] = b
        for i in range(N):
            lv[i] = LW[t - 1, i] + ft_lp(t, path[t], X[t - 1, i], tp)
        a = _sample_log(lv, rng.random())
        if a < 0:
            return X, LW, W, L, ANC, B, XT, n_acc, ANCESTOR_DEGENERATE, t
        propagate(t, y[t], X[t - 1], W[t - 1], tp, rng, ANC[t - 1], X[t])
        ANC[t - 1, b] = a
        X[t, b] = path[t]
        for i in range(N):
            LW[t, i] = logw_one(t, y[t], X[t, i], X[t - 1, ANC[t - 1, i]], tp)
        st, L[t] = _normalize(LW[t], W[t])
        if st != OK:
            return X, LW, W, L, ANC, B, XT, n_acc, st, t
        return X, LW, W, L, ANC, B, XT, n_acc, OK, 0

    @njit
    def bsim(tp, X, LW, W, rng):
        T, N = X.shape
        B = np.zeros(T, dtype=np.int64)
        XT = np.empty((max(T - 1, 0), 1))
        c = np.empty(N)
        _cumsum(W[T - 1], c)
        B[T - 1] = _search_right(c, rng.random() * c[N - 1])
        x_next = X[T - 1, B[T - 1]]
        lbw = np.empty(N)
        Wb = np.empty(N)
        for t in range(T - 2, -1, -1):
            for i in range(N):
                lbw[i] = LW[t, i] + ft_lp(t + 1, x_next, X[t, i], tp)
            st, _ = _normalize(lbw, Wb)
            if st != OK:
                return B, XT, BACKWARD_DEGENERATE, t
            _cumsum(Wb, c)
            B[t] = _search_right(c, rng.random() * c[N - 1])
            x_next = X[t, B[t]]
            XT[t, 0] = x_next
        return B, XT, OK, 0

    return Engine(smc, backward, csmc, bsim)


# ---------------------------------------------------------------------------
# Python-facing wrappers returning the reference data structures
# ---------------------------------------------------------------------------


def _tp(model, theta) -> np.ndarray:
    return np.array([float(theta[k]) for k in model.param_names], dtype=float)


def _to_ps(X, LW, W, L, ANC):
    from .smc import ParticleSystem

    T = X.shape[0]
    return ParticleSystem(
        x=[X[t][:, None] for t in range(T)],
        logw=[LW[t] for t in range(T)],
        W=[W[t] for t in range(T)],
        log_weight_sums=L,
        ancestors=[ANC[t] for t in range(T - 1)],
        packed=(X, LW, W),
    )


def _packed(ps):
    if ps.packed is not None:
        return ps.packed
    X = np.ascontiguousarray(np.stack([x[:, 0] for x in ps.x]))
    LW = np.ascontiguousarray(np.stack(ps.logw))
    W = np.ascontiguousarray(np.stack(ps.W))
    return X, LW, W


def _spec_args(spec):
    return FAMILY_CODES[spec.family], float(spec.scale_for(1)), float(spec.dof), spec.moments == "linearized"


def run_smc(model, theta, y, n, rng, retained=None):
    eng = build_engine(kernels_for(model))
    y = np.ascontiguousarray(y, dtype=float)
    T = y.shape[0]
    if retained is None:
        ret_x, slots, anc = np.zeros(T), np.zeros(T, np.int64), np.zeros(max(T - 1, 0), np.int64)
    else:
        ret_x = np.ascontiguousarray(np.asarray(retained.states, float)[:, 0])
        slots = np.asarray(retained.slots, np.int64)
        anc = np.array([retained.ancestor(t) for t in range(1, T)], dtype=np.int64)
    X, LW, W, L, ANC, st, t = eng.smc(y, _tp(model, theta), int(n), rng, retained is not None, ret_x, slots, anc)
    _raise(st, t)
    return _to_ps(X, LW, W, L, ANC)


def run_backward_pass(model, theta, y, ps, n_mcmc, spec, rng):
    from .backward import ExtendedState

    eng = build_engine(kernels_for(model))
    X, LW, W = _packed(ps)
    fam, scale, dof, slin = _spec_args(spec)
    C = int(n_mcmc)
    B, XT, nacc, st, t = eng.backward(np.ascontiguousarray(y, float), _tp(model, theta), X, LW, W, C, fam, scale,
                                      dof, slin, rng)
    _raise(st, t)
    T = X.shape[0]
    return ExtendedState(ps=ps, B=B, xtilde=[XT[t][:, None] for t in range(T - 1)], n_accepted=int(nacc),
                         n_proposed=C * (T - 1))


def run_csmc(retained, model, theta, y, n, n_mcmc, spec, rng):
    from .backward import ExtendedState

    eng = build_engine(kernels_for(model))
    fam, scale, dof, slin = _spec_args(spec)
    C = int(n_mcmc)
    path = np.ascontiguousarray(np.asarray(retained.path, float)[:, 0])
    out = eng.csmc(np.ascontiguousarray(y, float), _tp(model, theta), path, int(retained.b_last), int(n), C, fam,
                   scale, dof, slin, rng)
    X, LW, W, L, ANC, B, XT, nacc, st, t = out
    _raise(st, t)
    T = X.shape[0]
    ps = _to_ps(X, LW, W, L, ANC)
    return ExtendedState(ps=ps, B=B, xtilde=[XT[t][:, None] for t in range(T - 1)], n_accepted=int(nacc),
                         n_proposed=C * (T - 1))


def backward_simulation(model, theta, ps, rng):
    from .backward import ExtendedState

    eng = build_engine(kernels_for(model))
    X, LW, W = _packed(ps)
    B, XT, st, t = eng.bsim(_tp(model, theta), X, LW, W, rng)
    _raise(st, t)
    return ExtendedState(ps=ps, B=B, xtilde=[XT[t][:, None] for t in range(X.shape[0] - 1)])


def warm_up(model, theta, y, spec) -> None:
    """Compile every routine on a two-step problem so later timings exclude compilation."""
    from .csmc import RetainedTrajectory

    rng = np.random.Generator(np.random.Philox(0))
    y2 = np.ascontiguousarray(np.asarray(y, float)[:2])
    try:
        ps = run_smc(model, theta, y2, 2, rng)
        ext = run_backward_pass(model, theta, y2, ps, 1, spec, rng)
        backward_simulation(model, theta, ps, rng)
        path = np.array([[ext.xtilde[0][-1, 0]], [ps.x[1][ext.B[1], 0]]])
        run_csmc(RetainedTrajectory(path, int(ext.B[1])), model, theta, y2, 2, 1, spec, rng)
    except (DegenerateWeightsError, ProposalError, SingularInnovationError):
        pass  # compilation happened before the numerical failure
