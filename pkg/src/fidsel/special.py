"""Special functions and exact samplers shared by every posterior.

The incomplete gamma function uses the usual split: power series below
``x = a + 1`` and a modified-Lentz continued fraction above it.  Everything
is carried in log space so that rates of order 1e25 (the ODE experiment)
neither overflow nor lose the tiny tail.

Each hot routine exists twice: a scalar kernel compiled with numba, and a
vectorized numpy twin.  Public functions pick one per call via
:data:`fidsel._accel.USE_NUMBA`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy
from scipy.linalg import lapack

from . import _accel
from ._accel import jit
from .errors import DomainError, NumericError

_EPS = 2.220446049250313e-16
_FPMIN = 1e-300
_MAXIT = 5000
_INV_TOL = 1e-12
_INV_MAXIT = 200

LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------------------
# scalar kernels (numba)
# --------------------------------------------------------------------------


@jit
def _log_gammainc_pair_scalar(a, x):
    """(ln P(a, x), ln Q(a, x)); NaN pair if the expansion did not converge."""
    if x <= 0.0:
        return -np.inf, 0.0
    if np.isinf(x):
        return 0.0, -np.inf
    lpre = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        ap = a
        d = 1.0 / a
        s = d
        ok = False
        for _ in range(_MAXIT):
            ap += 1.0
            d *= x / ap
            s += d
            if abs(d) < abs(s) * _EPS:
                ok = True
                break
        if not ok:
            return np.nan, np.nan
        lp = lpre + math.log(s)
        p = math.exp(lp)
        if p < 0.5:
            lq = math.log1p(-p)
        else:
            lq = math.log(-math.expm1(lp)) if lp < 0.0 else -np.inf
        return lp, lq
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    ok = False
    for i in range(1, _MAXIT + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        dl = d * c
        h *= dl
        if abs(dl - 1.0) <= _EPS:
            ok = True
            break
    if not ok:
        return np.nan, np.nan
    lq = lpre + math.log(h)
    lp = math.log1p(-math.exp(lq))
    return lp, lq


@jit
def _inv_log_gammainc_scalar(a, logu):
    """Solve ln P(a, x) = logu for x by safeguarded Newton in s = ln x."""
    if logu == -np.inf:
        return 0.0
    if logu >= 0.0:
        return np.inf
    lga = math.lgamma(a)
    if logu < -4.6:
        s = (logu + math.lgamma(a + 1.0)) / a
    else:
        # Wilson-Hilferty start
        p = math.exp(logu)
        if a > 1.0:
            pp = p if p < 0.5 else 1.0 - p
            t = math.sqrt(-2.0 * math.log(pp))
            z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t
            if p < 0.5:
                z = -z
            x = a * (1.0 - 1.0 / (9.0 * a) - z / (3.0 * math.sqrt(a))) ** 3
            if x <= 0.0:
                x = math.exp((logu + math.lgamma(a + 1.0)) / a)
        else:
            t = 1.0 - a * (0.253 + a * 0.12)
            if p < t:
                x = (p / t) ** (1.0 / a)
            else:
                x = 1.0 - math.log(1.0 - (p - t) / (1.0 - t))
        s = math.log(x)
    lo = -np.inf
    hi = np.inf
    for _ in range(_INV_MAXIT):
        x = math.exp(s)
        lp, lq = _log_gammainc_pair_scalar(a, x)
        if lp != lp:
            return np.nan
        f = lp - logu
        if f > 0.0:
            hi = s
        else:
            lo = s
        # d lnP / d s = x * density / P
        slope = math.exp(a * s - x - lga - lp)
        if slope > 0.0 and np.isfinite(slope):
            sn = s - f / slope
        else:
            sn = np.nan
        if not (sn > lo and sn < hi):
            if np.isfinite(lo) and np.isfinite(hi):
                sn = 0.5 * (lo + hi)
            elif np.isfinite(lo):
                sn = lo + 2.0
            else:
                sn = hi - 2.0
        if abs(sn - s) <= _INV_TOL or (hi - lo) <= _INV_TOL:
            return math.exp(sn)
        s = sn
    return np.nan


@jit
def _trunc_gamma_draw_scalar(shape, rate, u):
    """Inverse-CDF draw from Gamma(shape, rate) truncated to [0, 1]; u in (0, 1]."""
    lp_top, _ = _log_gammainc_pair_scalar(shape, rate)
    x = _inv_log_gammainc_scalar(shape, lp_top + math.log(u))
    if x > rate:
        x = rate
    return x / rate


@jit
def _trunc_gamma_mean_scalar(shape, rate):
    lp0, _ = _log_gammainc_pair_scalar(shape, rate)
    lp1, _ = _log_gammainc_pair_scalar(shape + 1.0, rate)
    return math.exp(math.log(shape) - math.log(rate) + lp1 - lp0)


@jit
def _log_gammainc_pair_vec_nb(a, x):
    n = a.size
    lp = np.empty(n)
    lq = np.empty(n)
    for i in range(n):
        lp[i], lq[i] = _log_gammainc_pair_scalar(a[i], x[i])
    return lp, lq


@jit
def _inv_log_gammainc_vec_nb(a, logu):
    n = a.size
    out = np.empty(n)
    for i in range(n):
        out[i] = _inv_log_gammainc_scalar(a[i], logu[i])
    return out


@jit
def _trunc_gamma_draw_vec_nb(shape, rate, u):
    n = shape.size
    out = np.empty(n)
    for i in range(n):
        out[i] = _trunc_gamma_draw_scalar(shape[i], rate[i], u[i])
    return out


@jit
def _trunc_gamma_mean_vec_nb(shape, rate):
    n = shape.size
    out = np.empty(n)
    for i in range(n):
        out[i] = _trunc_gamma_mean_scalar(shape[i], rate[i])
    return out


# --------------------------------------------------------------------------
# numpy twins
# --------------------------------------------------------------------------


def _lgamma_np(a):
    a = np.asarray(a, dtype=float)
    u, inv = np.unique(a, return_inverse=True)
    vals = np.array([math.lgamma(v) for v in u])
    return vals[inv].reshape(a.shape)


def _series_np(a, x):
    ap = a.copy()
    d = 1.0 / a
    s = d.copy()
    idx = np.arange(a.size)
    for _ in range(_MAXIT):
        ap[idx] += 1.0
        d[idx] *= x[idx] / ap[idx]
        s[idx] += d[idx]
        idx = idx[np.abs(d[idx]) >= np.abs(s[idx]) * _EPS]
        if idx.size == 0:
            return s
    raise NumericError("incomplete gamma series did not converge")


def _contfrac_np(a, x):
    b = x + 1.0 - a
    c = np.full(a.shape, 1.0 / _FPMIN)
    d = 1.0 / b
    h = d.copy()
    idx = np.arange(a.size)
    for i in range(1, _MAXIT + 1):
        an = -i * (i - a[idx])
        b[idx] += 2.0
        di = an * d[idx] + b[idx]
        di = np.where(np.abs(di) < _FPMIN, _FPMIN, di)
        ci = b[idx] + an / c[idx]
        ci = np.where(np.abs(ci) < _FPMIN, _FPMIN, ci)
        di = 1.0 / di
        dl = di * ci
        h[idx] *= dl
        d[idx] = di
        c[idx] = ci
        idx = idx[np.abs(dl - 1.0) > _EPS]
        if idx.size == 0:
            return h
    raise NumericError("incomplete gamma continued fraction did not converge")


def _log_gammainc_pair_np(a, x):
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    lp = np.full(a.shape, -np.inf)
    lq = np.zeros(a.shape)
    big = np.isinf(x)
    lp[big] = 0.0
    lq[big] = -np.inf
    pos = (x > 0.0) & ~big
    ser = pos & (x < a + 1.0)
    cf = pos & ~ser

    if ser.any():
        aa = a[ser]
        xx = x[ser]
        lpre = aa * np.log(xx) - xx - _lgamma_np(aa)
        s = _series_np(aa, xx)
        lps = lpre + np.log(s)
        p = np.exp(lps)
        with np.errstate(divide="ignore", invalid="ignore"):
            lqs = np.where(p < 0.5, np.log1p(-np.minimum(p, 0.5)), np.log(-np.expm1(np.minimum(lps, 0.0))))
        lp[ser] = lps
        lq[ser] = lqs

    if cf.any():
        aa = a[cf]
        xx = x[cf]
        lpre = aa * np.log(xx) - xx - _lgamma_np(aa)
        h = _contfrac_np(aa, xx)
        lqc = lpre + np.log(h)
        lq[cf] = lqc
        lp[cf] = np.log1p(-np.exp(lqc))
    return lp, lq


def _inv_log_gammainc_np(a, logu):
    a = np.asarray(a, dtype=float)
    logu = np.asarray(logu, dtype=float)
    out = np.empty(a.shape)
    out[logu == -np.inf] = 0.0
    out[logu >= 0.0] = np.inf
    act = np.isfinite(logu) & (logu < 0.0)
    if not act.any():
        return out
    aa = a[act]
    lu = logu[act]
    lga = _lgamma_np(aa)
    lga1 = _lgamma_np(aa + 1.0)

    s = (lu + lga1) / aa
    mid = lu >= -4.6
    if mid.any():
        m = mid
        p = np.exp(lu[m])
        am = aa[m]
        gt = am > 1.0
        pp = np.where(p < 0.5, p, 1.0 - p)
        t = np.sqrt(-2.0 * np.log(pp))
        z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t
        z = np.where(p < 0.5, -z, z)
        wh = am * (1.0 - 1.0 / (9.0 * am) - z / (3.0 * np.sqrt(am))) ** 3
        wh = np.where(wh > 0.0, wh, np.exp(s[m]))
        tt = 1.0 - am * (0.253 + am * 0.12)
        with np.errstate(divide="ignore", invalid="ignore"):
            small = np.where(p < tt, (p / tt) ** (1.0 / am), 1.0 - np.log(1.0 - (p - tt) / (1.0 - tt)))
        x = np.where(gt, wh, small)
        s[m] = np.log(x)

    lo = np.full(aa.shape, -np.inf)
    hi = np.full(aa.shape, np.inf)
    res = np.full(aa.shape, np.nan)
    todo = np.ones(aa.shape, dtype=bool)
    for _ in range(_INV_MAXIT):
        idx = np.flatnonzero(todo)
        if idx.size == 0:
            break
        ai, si = aa[idx], s[idx]
        xi = np.exp(si)
        lp, _ = _log_gammainc_pair_np(ai, xi)
        f = lp - lu[idx]
        hi[idx] = np.where(f > 0.0, si, hi[idx])
        lo[idx] = np.where(f > 0.0, lo[idx], si)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            slope = np.exp(ai * si - xi - lga[idx] - lp)
            sn = np.where((slope > 0.0) & np.isfinite(slope), si - f / slope, np.nan)
        loi, hii = lo[idx], hi[idx]
        bad = ~((sn > loi) & (sn < hii))
        fin_lo = np.isfinite(loi)
        fin_hi = np.isfinite(hii)
        fallback = np.where(fin_lo & fin_hi, 0.5 * (loi + hii), np.where(fin_lo, loi + 2.0, hii - 2.0))
        sn = np.where(bad, fallback, sn)
        done = (np.abs(sn - si) <= _INV_TOL) | ((hii - loi) <= _INV_TOL)
        res[idx[done]] = np.exp(sn[done])
        todo[idx[done]] = False
        s[idx] = sn
    out[act] = res
    return out


def _trunc_gamma_draw_np(shape, rate, u):
    lp_top, _ = _log_gammainc_pair_np(shape, rate)
    x = _inv_log_gammainc_np(shape, lp_top + np.log(u))
    return np.minimum(x, rate) / rate


def _trunc_gamma_mean_np(shape, rate):
    lp0, _ = _log_gammainc_pair_np(shape, rate)
    lp1, _ = _log_gammainc_pair_np(shape + 1.0, rate)
    return np.exp(np.log(shape) - np.log(rate) + lp1 - lp0)


# --------------------------------------------------------------------------
# dispatch helpers
# --------------------------------------------------------------------------


def _flat_pair(a, x):
    a, x = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x, dtype=float))
    return a.shape, np.array(a, dtype=float).ravel(), np.array(x, dtype=float).ravel()


def _finish(shape, out):
    out = out.reshape(shape)
    return out[()] if out.ndim == 0 else out


def log_gammainc_pair(a, x):
    """Return ``(ln P(a, x), ln Q(a, x))`` for the regularized lower/upper functions."""
    shape, af, xf = _flat_pair(a, x)
    if np.any(af <= 0.0) or np.any(np.isnan(af)):
        raise DomainError("incomplete gamma requires a > 0")
    if np.any(xf < 0.0):
        raise DomainError("incomplete gamma requires x >= 0")
    if _accel.USE_NUMBA:
        lp, lq = _log_gammainc_pair_vec_nb(af, xf)
        if np.isnan(lp).any():
            raise NumericError("incomplete gamma expansion did not converge")
    else:
        lp, lq = _log_gammainc_pair_np(af, xf)
    return _finish(shape, lp), _finish(shape, lq)


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------


def log_gamma(x):
    """Natural log of |Gamma(x)|, elementwise."""
    if np.ndim(x) == 0:
        return math.lgamma(float(x))
    return _lgamma_np(x)


def log_beta(a, b) -> float:
    """ln B(a, b) = ln Gamma(a) + ln Gamma(b) - ln Gamma(a + b)."""
    if not (a > 0 and b > 0):
        raise DomainError(f"log_beta requires positive arguments, got ({a}, {b})")
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def log_regularized_lower(a, x):
    """ln P(a, x)."""
    return log_gammainc_pair(a, x)[0]


def regularized_lower(a, x):
    """P(a, x) = gamma(a, x) / Gamma(a)."""
    return np.exp(log_gammainc_pair(a, x)[0])


def regularized_upper(a, x):
    """Q(a, x) = 1 - P(a, x), computed without cancellation."""
    return np.exp(log_gammainc_pair(a, x)[1])


def log_lower_incomplete_gamma(a, x):
    """ln gamma(a, x) via ln Gamma(a) + ln P(a, x)."""
    return log_gamma(a) + log_gammainc_pair(a, x)[0]


def lower_incomplete_gamma(a, x):
    """gamma(a, x) = int_0^x t^(a-1) e^(-t) dt."""
    return np.exp(log_lower_incomplete_gamma(a, x))


def upper_incomplete_gamma(a, x):
    """Gamma(a, x) = int_x^inf t^(a-1) e^(-t) dt."""
    return np.exp(log_gamma(a) + log_gammainc_pair(a, x)[1])


def inverse_log_regularized_lower(a, logu):
    """x such that ln P(a, x) = logu; the log form keeps tiny quantiles exact."""
    shape, af, lf = _flat_pair(a, logu)
    if np.any(af <= 0.0):
        raise DomainError("inverse incomplete gamma requires a > 0")
    if np.any(lf > 0.0):
        raise DomainError("log-probability must be <= 0")
    out = _inv_log_gammainc_vec_nb(af, lf) if _accel.USE_NUMBA else _inv_log_gammainc_np(af, lf)
    if np.isnan(out).any():
        raise NumericError(f"inverse incomplete gamma failed to reach tolerance {_INV_TOL:g}")
    return _finish(shape, out)


def inverse_regularized_lower(a, u):
    """P^{-1}(a, u) for u in [0, 1]."""
    u = np.asarray(u, dtype=float)
    if np.any((u < 0.0) | (u > 1.0)):
        raise DomainError("probability must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        return inverse_log_regularized_lower(a, np.log(u))


@dataclass(frozen=True)
class TruncatedGammaParams:
    """Gamma(shape, rate) restricted to the unit interval."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise DomainError(f"truncated gamma needs shape > 0 and rate > 0, got {self.shape}, {self.rate}")

    def mean(self) -> float:
        return float(truncated_gamma_mean(self.shape, self.rate))

    def logpdf(self, tau):
        tau = np.asarray(tau, dtype=float)
        lnorm = self.shape * math.log(self.rate) - log_lower_incomplete_gamma(self.shape, self.rate)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = lnorm + xlogy(self.shape - 1.0, tau) - self.rate * tau
        return np.where((tau >= 0.0) & (tau <= 1.0), val, -np.inf)


def _uniform_open_closed(rng, size):
    # (0, 1]: log(u) stays finite
    return 1.0 - rng.random(size)


def truncated_gamma_from_uniforms(shape, rate, u):
    """Deterministic inverse-CDF map used by the samplers (u in (0, 1])."""
    shape, rate, u = np.broadcast_arrays(
        np.asarray(shape, dtype=float), np.asarray(rate, dtype=float), np.asarray(u, dtype=float)
    )
    s = np.array(shape, dtype=float).ravel()
    r = np.array(rate, dtype=float).ravel()
    uu = np.array(u, dtype=float).ravel()
    out = _trunc_gamma_draw_vec_nb(s, r, uu) if _accel.USE_NUMBA else _trunc_gamma_draw_np(s, r, uu)
    if np.isnan(out).any():
        raise NumericError("truncated gamma inversion failed")
    return _finish(shape.shape, out)


def sample_truncated_gamma(params: TruncatedGammaParams, rng, size=None):
    """Exact draws from Gamma(shape, rate) conditioned on [0, 1]."""
    u = _uniform_open_closed(rng, size)
    return truncated_gamma_from_uniforms(params.shape, params.rate, u)


def truncated_gamma_mean(shape, rate):
    """E[tau] for Gamma(shape, rate) truncated to [0, 1]: (shape/rate) P(shape+1, rate) / P(shape, rate)."""
    shape, rate = np.broadcast_arrays(np.asarray(shape, dtype=float), np.asarray(rate, dtype=float))
    s = np.array(shape, dtype=float).ravel()
    r = np.array(rate, dtype=float).ravel()
    out = _trunc_gamma_mean_vec_nb(s, r) if _accel.USE_NUMBA else _trunc_gamma_mean_np(s, r)
    return _finish(shape.shape, out)


# --------------------------------------------------------------------------
# fidelity transform
# --------------------------------------------------------------------------


def logit(x):
    """T(x) = log(1/x - 1).

    Note the orientation: this is decreasing in x, the negative of the
    textbook logit.  ``sigmoid`` below is its exact inverse.
    """
    x = np.asarray(x, dtype=float)
    if np.any((x <= 0.0) | (x >= 1.0)):
        raise DomainError("logit argument must lie strictly inside (0, 1)")
    out = np.log1p(-x) - np.log(x)
    return out[()] if out.ndim == 0 else out


def sigmoid(z):
    """T^{-1}(z) = 1 / (1 + e^z)."""
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore"):
        e = np.exp(-np.abs(z))
        out = np.where(z >= 0.0, e / (1.0 + e), 1.0 / (1.0 + e))
    return out[()] if out.ndim == 0 else out


def sigmoid_jacobian(z):
    """|d/dz T^{-1}(z)| = s - s^2 with s = T^{-1}(z), formed as s (1 - s) without cancellation."""
    return sigmoid(z) * sigmoid(-np.asarray(z, dtype=float))


def log_sigmoid(z):
    """ln T^{-1}(z) = -softplus(z), stable for |z| large."""
    z = np.asarray(z, dtype=float)
    return -np.logaddexp(0.0, z)


# --------------------------------------------------------------------------
# multivariate normal
# --------------------------------------------------------------------------


def cholesky_lower(cov) -> np.ndarray:
    """Lower Cholesky factor; raises NumericError naming the failing pivot."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise DomainError("covariance must be square")
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
        raise DomainError("covariance must be symmetric")
    c, info = lapack.dpotrf(cov, lower=1, clean=1)
    if info > 0:
        raise NumericError(f"covariance not positive definite: leading minor of order {info} (pivot {info - 1}) fails")
    if info < 0:
        raise NumericError(f"dpotrf rejected argument {-info}")
    return c


def mvn_logpdf_chol(x, mean, chol):
    """Gaussian log-density given a lower Cholesky factor; ``x`` may be (..., k)."""
    x = np.asarray(x, dtype=float)
    diff = x - np.asarray(mean, dtype=float)
    k = chol.shape[0]
    flat = diff.reshape(-1, k).T
    sol = _solve_lower(chol, flat)
    quad = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (k * LOG_2PI + logdet + quad)
    out = out.reshape(diff.shape[:-1]) if diff.ndim > 1 else out[0]
    return out


def _solve_lower(chol, b):
    return lapack.dtrtrs(chol, b, lower=1)[0]


def mvn_logpdf(x, mean, cov):
    """Exact multivariate normal log-density (normalization included)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = cholesky_lower(np.atleast_2d(cov))
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    return mvn_logpdf_chol(x, mean, chol)
