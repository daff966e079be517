"""Log-densities for standard and data-selection posteriors.

Everything works on a :class:`~fidsel.models.LinearProblem`; datasets are
converted on the way in.  Evaluators accept a single parameter vector or a
batch of shape (K, p) and return a scalar or a length-K array accordingly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from . import _accel
from ._accel import jit
from .datasets import OdeDataset, RegressionDataset
from .errors import CapacityError, DomainError, NumericError
from .models import LinearProblem, ode_problem, regression_problem
from .special import (
    LOG_2PI,
    TruncatedGammaParams,
    cholesky_lower,
    log_gammainc_pair,
    log_sigmoid,
    mvn_logpdf_chol,
    sigmoid,
)

PMODEL_MAX_OBS = 24


# --------------------------------------------------------------------------
# hyperparameter records
# --------------------------------------------------------------------------


@dataclass
class GaussianPrior:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise DomainError("prior covariance shape does not match the mean")
        self.chol = cholesky_lower(self.cov)

    @classmethod
    def isotropic(cls, dim: int, sd: float = 100.0) -> "GaussianPrior":
        if not sd > 0:
            raise DomainError(f"prior sd must be positive, got {sd}")
        return cls(np.zeros(dim), sd * sd * np.eye(dim))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def precision(self) -> np.ndarray:
        eye = np.eye(self.dim)
        return np.linalg.solve(self.cov, eye)

    def logpdf(self, theta):
        return mvn_logpdf_chol(np.asarray(theta, dtype=float), self.mean, self.chol)

    def sample(self, rng, size: int) -> np.ndarray:
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ self.chol.T


def _positive(name, **vals):
    for k, v in vals.items():
        if not (v > 0 and math.isfinite(v)):
            raise DomainError(f"{name}.{k} must be a positive finite number, got {v}")


@dataclass(frozen=True)
class BetaHyper:
    alpha: float = 2.0
    beta: float = 50.0

    def __post_init__(self):
        _positive("BetaHyper", alpha=self.alpha, beta=self.beta)


@dataclass(frozen=True)
class FidelityHyper:
    """Gamma(alpha, beta) restricted to [0, 1] as the prior on each fidelity."""

    alpha: float = 2.0
    beta: float = 2.0

    def __post_init__(self):
        _positive("FidelityHyper", alpha=self.alpha, beta=self.beta)

    def prior(self) -> TruncatedGammaParams:
        return TruncatedGammaParams(self.alpha, self.beta)


@dataclass(frozen=True)
class InvGammaHyper:
    nu: float = 100.0
    psi: float = 0.98

    def __post_init__(self):
        _positive("InvGammaHyper", nu=self.nu, psi=self.psi)


@dataclass(frozen=True)
class GPFidelityConfig:
    mean_m: float = 1.0
    sigma_tau: float = 1.0
    lengthscale_l: float = 0.5
    jitter: float | None = None

    def __post_init__(self):
        _positive("GPFidelityConfig", sigma_tau=self.sigma_tau, lengthscale_l=self.lengthscale_l)
        if self.jitter is not None and not self.jitter >= 0:
            raise DomainError("GPFidelityConfig.jitter must be non-negative")

    @property
    def effective_jitter(self) -> float:
        return 1e-10 * self.sigma_tau**2 if self.jitter is None else self.jitter


@dataclass
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray
    log_weight: float = 0.0

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def logpdf(self, theta):
        return mvn_logpdf_chol(np.asarray(theta, dtype=float), self.mean, cholesky_lower(self.cov))

    def as_prior(self) -> GaussianPrior:
        return GaussianPrior(self.mean, self.cov)


@dataclass(frozen=True)
class SubsetMask:
    bits: tuple

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise DomainError("subset bits must be 0 or 1")

    @classmethod
    def from_index(cls, index: int, n: int) -> "SubsetMask":
        return cls(tuple((index >> i) & 1 for i in range(n)))

    @property
    def n_selected(self) -> int:
        return sum(self.bits)

    def as_bool(self) -> np.ndarray:
        return np.array(self.bits, dtype=bool)


def as_problem(data, operator: str = "exact") -> LinearProblem:
    """Coerce a dataset to its linear problem; LinearProblem passes through."""
    if isinstance(data, LinearProblem):
        return data
    if isinstance(data, RegressionDataset):
        return regression_problem(data)
    if isinstance(data, OdeDataset):
        return ode_problem(data, operator)
    raise DomainError(f"cannot build a linear problem from {type(data).__name__}")


def _batch(theta, dim):
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim <= 1
    theta = theta.reshape(-1, dim)
    return theta, single


def _unbatch(out, single):
    return float(out[0]) if single else out


# --------------------------------------------------------------------------
# standard posterior
# --------------------------------------------------------------------------


def linreg_conjugate(prior: GaussianPrior, data, mask=None) -> GaussianComponent:
    """Exact Gaussian posterior; ``mask`` restricts to a subset of observations."""
    prob = as_problem(data)
    A, y = prob.A, prob.y
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        A, y = A[keep], y[keep]
    prec0 = prior.precision
    prec = prec0 + (A.T @ A) / prob.noise_var
    rhs = prec0 @ prior.mean + (A.T @ y) / prob.noise_var
    try:
        chol = cholesky_lower(0.5 * (prec + prec.T))
    except NumericError as exc:
        raise NumericError(f"posterior precision is singular: {exc}") from None
    eye = np.eye(prior.dim)
    cov = _chol_inverse(chol, eye)
    mean = cov @ rhs
    return GaussianComponent(mean, cov, 0.0)


def _chol_inverse(chol, eye):
    cov = cho_solve((chol, True), eye)
    return 0.5 * (cov + cov.T)


def gaussian_loglik(prob: LinearProblem, theta):
    """Normalized iid Gaussian log-likelihood, batched over theta."""
    theta, single = _batch(theta, prob.dim)
    r = prob.residuals(theta)
    n = prob.n_obs
    out = -0.5 * n * (LOG_2PI + math.log(prob.noise_var)) - 0.5 * np.sum(r * r, axis=1) / prob.noise_var
    return _unbatch(out, single)


def standard_logpdf(prior: GaussianPrior, data, theta):
    """Unnormalized standard posterior: prior times Gaussian likelihood."""
    prob = as_problem(data)
    return prior.logpdf(theta) + gaussian_loglik(prob, theta)


# --------------------------------------------------------------------------
# p-model
# --------------------------------------------------------------------------


def pmodel_log_weights(n_obs: int, hyper: BetaHyper) -> np.ndarray:
    """ln C for a subset with n selected points, indexed by n = 0..N."""
    s = hyper.alpha + hyper.beta
    la, lb = math.log(hyper.alpha / s), math.log(hyper.beta / s)
    n = np.arange(n_obs + 1)
    return n * la + (n_obs - n) * lb


def _pmodel_guard(n):
    if n > PMODEL_MAX_OBS:
        raise CapacityError(f"p-model enumeration is limited to {PMODEL_MAX_OBS} observations, got {n}")


def pmodel_components(prior: GaussianPrior, data, hyper: BetaHyper) -> Iterator[GaussianComponent]:
    """Yield all 2^N mixture components; bit i of the component index selects observation i."""
    prob = as_problem(data)
    n = prob.n_obs
    _pmodel_guard(n)
    logc = pmodel_log_weights(n, hyper)
    for idx in range(1 << n):
        mask = SubsetMask.from_index(idx, n)
        comp = linreg_conjugate(prior, prob, mask.as_bool())
        comp.log_weight = float(logc[mask.n_selected])
        yield comp


def pmodel_mixture_logpdf(components, theta):
    """ln sum_k C_k N(theta; mu_k, Sigma_k) for an explicit component list."""
    comps = list(components)
    if not comps:
        raise DomainError("mixture needs at least one component")
    theta, single = _batch(theta, comps[0].mean.size)
    terms = np.stack([c.log_weight + np.atleast_1d(c.logpdf(theta)) for c in comps])
    return _unbatch(logsumexp(terms, axis=0), single)


def _subset_sums(A, y, var):
    """Precision and information sums for every subset of the rows of (A, y).

    Entry j sums the rows whose bits are set in j; each entry is built from
    one smaller entry plus one row, so the whole table costs one add per row.
    """
    n = A.shape[0]
    size = 1 << n
    S = np.zeros((size, 3))
    b = np.zeros((size, 2))
    cnt = np.zeros(size, dtype=np.int64)
    rows_s = np.column_stack([A[:, 0] ** 2, A[:, 0] * A[:, 1], A[:, 1] ** 2]) / var
    rows_b = A * y[:, None] / var
    for i in range(n):
        lo, hi = 1 << i, 1 << (i + 1)
        S[lo:hi] = S[:lo] + rows_s[i]
        b[lo:hi] = b[:lo] + rows_b[i]
        cnt[lo:hi] = cnt[:lo] + 1
    return S, b, cnt


@jit
def _pmodel_accumulate_nb(P0, h0, S_lo, b_lo, n_lo, S_hi, b_hi, n_hi, logc, thetas, m, s):
    nk = thetas.shape[0]
    for hi in range(S_hi.shape[0]):
        for lo in range(S_lo.shape[0]):
            p11 = P0[0] + S_lo[lo, 0] + S_hi[hi, 0]
            p12 = P0[1] + S_lo[lo, 1] + S_hi[hi, 1]
            p22 = P0[2] + S_lo[lo, 2] + S_hi[hi, 2]
            h1 = h0[0] + b_lo[lo, 0] + b_hi[hi, 0]
            h2 = h0[1] + b_lo[lo, 1] + b_hi[hi, 1]
            det = p11 * p22 - p12 * p12
            if not det > 0.0:
                return False
            mu1 = (p22 * h1 - p12 * h2) / det
            mu2 = (p11 * h2 - p12 * h1) / det
            c = logc[n_lo[lo] + n_hi[hi]] + 0.5 * math.log(det) - LOG_2PI
            for k in range(nk):
                d1 = thetas[k, 0] - mu1
                d2 = thetas[k, 1] - mu2
                l = c - 0.5 * (p11 * d1 * d1 + 2.0 * p12 * d1 * d2 + p22 * d2 * d2)
                if l > m[k]:
                    s[k] = s[k] * math.exp(m[k] - l) + 1.0
                    m[k] = l
                elif l > m[k] - 50.0:
                    s[k] += math.exp(l - m[k])
    return True


def _pmodel_accumulate_np(P0, h0, S_lo, b_lo, n_lo, S_hi, b_hi, n_hi, logc, thetas, m, s, chunk=2048):
    for hi in range(S_hi.shape[0]):
        p11 = P0[0] + S_lo[:, 0] + S_hi[hi, 0]
        p12 = P0[1] + S_lo[:, 1] + S_hi[hi, 1]
        p22 = P0[2] + S_lo[:, 2] + S_hi[hi, 2]
        h1 = h0[0] + b_lo[:, 0] + b_hi[hi, 0]
        h2 = h0[1] + b_lo[:, 1] + b_hi[hi, 1]
        det = p11 * p22 - p12 * p12
        if not np.all(det > 0.0):
            return False
        mu1 = (p22 * h1 - p12 * h2) / det
        mu2 = (p11 * h2 - p12 * h1) / det
        c = logc[n_lo + n_hi[hi]] + 0.5 * np.log(det) - LOG_2PI
        for k0 in range(0, thetas.shape[0], chunk):
            th = thetas[k0:k0 + chunk]
            d1 = th[None, :, 0] - mu1[:, None]
            d2 = th[None, :, 1] - mu2[:, None]
            l = c[:, None] - 0.5 * (p11[:, None] * d1 * d1 + 2.0 * p12[:, None] * d1 * d2 + p22[:, None] * d2 * d2)
            mk = m[k0:k0 + chunk]
            new = np.maximum(mk, l.max(axis=0))
            with np.errstate(invalid="ignore"):
                scale = np.where(np.isneginf(mk), 0.0, np.exp(mk - new))
            s[k0:k0 + chunk] = s[k0:k0 + chunk] * scale + np.exp(l - new).sum(axis=0)
            m[k0:k0 + chunk] = new
    return True


class PModelPosterior:
    """Exact 2^N-component mixture posterior for two-parameter linear models.

    Subsets are split into low and high bit halves.  Both halves get a table
    of exact subset sums, and each component adds one entry from each table to
    the prior terms, so there is no accumulated drift however many components
    are visited.
    """

    def __init__(self, prior: GaussianPrior, data, hyper: BetaHyper, low_bits: int = 10):
        prob = as_problem(data)
        if prob.dim != 2 or prior.dim != 2:
            raise DomainError("the fast p-model evaluator handles two-parameter models only")
        _pmodel_guard(prob.n_obs)
        self.prior, self.problem, self.hyper = prior, prob, hyper
        n = prob.n_obs
        self.low_bits = min(n, low_bits)
        prec0 = prior.precision
        self._P0 = np.array([prec0[0, 0], prec0[0, 1], prec0[1, 1]])
        self._h0 = prec0 @ prior.mean
        L = self.low_bits
        self._S_lo, self._b_lo, self._n_lo = _subset_sums(prob.A[:L], prob.y[:L], prob.noise_var)
        self._S_hi, self._b_hi, self._n_hi = _subset_sums(prob.A[L:], prob.y[L:], prob.noise_var)
        self._logc = pmodel_log_weights(n, hyper)

    @property
    def n_components(self) -> int:
        return 1 << self.problem.n_obs

    def _args(self):
        return (self._P0, self._h0, self._S_lo, self._b_lo, self._n_lo,
                self._S_hi, self._b_hi, self._n_hi, self._logc)

    def logpdf(self, theta):
        """Normalized mixture log-density at one point or a (K, 2) batch."""
        theta, single = _batch(theta, 2)
        theta = np.ascontiguousarray(theta)
        m = np.full(theta.shape[0], -np.inf)
        s = np.zeros(theta.shape[0])
        kernel = _pmodel_accumulate_nb if _accel.USE_NUMBA else _pmodel_accumulate_np
        if not kernel(*self._args(), theta, m, s):
            raise NumericError("p-model component precision is not positive definite")
        return _unbatch(m + np.log(s), single)

    def component_peaks(self, top: int = 8):
        """Means and peak log-heights ln C + ln N(mu; mu, Sigma) of the highest components.

        The mixture density at a component mean is at least that component's
        peak, so these means are good optimizer starts.
        """
        best_c, best_mu = np.empty(0), np.empty((0, 2))
        P0, h0 = self._P0, self._h0
        for hi in range(self._S_hi.shape[0]):
            p = P0 + self._S_lo + self._S_hi[hi]
            h = h0 + self._b_lo + self._b_hi[hi]
            det = p[:, 0] * p[:, 2] - p[:, 1] ** 2
            mu = np.column_stack([(p[:, 2] * h[:, 0] - p[:, 1] * h[:, 1]) / det,
                                  (p[:, 0] * h[:, 1] - p[:, 1] * h[:, 0]) / det])
            c = self._logc[self._n_lo + self._n_hi[hi]] + 0.5 * np.log(det) - LOG_2PI
            best_c = np.concatenate([best_c, c])
            best_mu = np.vstack([best_mu, mu])
            if best_c.size > 4 * top:
                keep = np.argsort(-best_c, kind="stable")[:top]
                best_c, best_mu = best_c[keep], best_mu[keep]
        keep = np.argsort(-best_c, kind="stable")[:top]
        return best_mu[keep], best_c[keep]


def pmodel_logpdf(prior: GaussianPrior, data, hyper: BetaHyper, theta):
    """Convenience wrapper around :class:`PModelPosterior`."""
    return PModelPosterior(prior, data, hyper).logpdf(theta)


# --------------------------------------------------------------------------
# fidelity posterior (conjugate truncated-gamma priors)
# --------------------------------------------------------------------------


def _mismatch(prob: LinearProblem, theta):
    """Half squared whitened residuals, shape (K, N)."""
    r = prob.residuals(theta)
    return 0.5 * r * r / prob.noise_var


def fidelity_loglik_terms(m, hyper: FidelityHyper, obs_dim: int = 1):
    """Per-observation ln of int_0^1 tau^(alpha-1+d/2) e^(-tau (beta + m)) dtau."""
    a = hyper.alpha + 0.5 * obs_dim
    rate = hyper.beta + np.asarray(m, dtype=float)
    lp, _ = log_gammainc_pair(a, rate)
    return math.lgamma(a) + lp - a * np.log(rate)


def fidelity_marginal_logpdf(prior: GaussianPrior, data, hyper: FidelityHyper, theta, obs_dim: int = 1):
    """Posterior on theta with every fidelity integrated out (unnormalized)."""
    prob = as_problem(data)
    theta, single = _batch(theta, prob.dim)
    out = np.atleast_1d(prior.logpdf(theta))
    if prob.n_obs:
        out = out + fidelity_loglik_terms(_mismatch(prob, theta), hyper, obs_dim).sum(axis=1)
    return _unbatch(out, single)


def fidelity_joint_logpdf(prior: GaussianPrior, data, hyper: FidelityHyper, theta, tau, obs_dim: int = 1) -> float:
    """Joint density of (theta, tau) whose tau-marginal is :func:`fidelity_marginal_logpdf`."""
    prob = as_problem(data)
    tau = np.asarray(tau, dtype=float)
    if np.any((tau < 0.0) | (tau > 1.0)):
        return -math.inf
    m = _mismatch(prob, np.asarray(theta, dtype=float).reshape(1, -1))[0]
    a = hyper.alpha + 0.5 * obs_dim
    with np.errstate(divide="ignore"):
        terms = (a - 1.0) * np.log(tau) - tau * (hyper.beta + m)
    return float(prior.logpdf(theta) + terms.sum())


def fidelity_conditional_rates(data, hyper: FidelityHyper, theta, obs_dim: int = 1):
    """(shape, rates) of every tau_i given theta."""
    prob = as_problem(data)
    m = _mismatch(prob, np.asarray(theta, dtype=float).reshape(1, -1))[0]
    return hyper.alpha + 0.5 * obs_dim, hyper.beta + m


def fidelity_conditional(theta, data, hyper: FidelityHyper, i: int, obs_dim: int = 1) -> TruncatedGammaParams:
    prob = as_problem(data)
    if not 0 <= i < prob.n_obs:
        raise DomainError(f"observation index {i} out of range")
    shape, rates = fidelity_conditional_rates(prob, hyper, theta, obs_dim)
    return TruncatedGammaParams(shape, float(rates[i]))


# --------------------------------------------------------------------------
# non-product-form posterior (unknown noise variance, inverse-gamma prior)
# --------------------------------------------------------------------------


def npf_log_normalizer(iw: InvGammaHyper, n_obs: int) -> float:
    """Constant turning the power law into the marginal Student likelihood."""
    nu, psi = iw.nu, iw.psi
    half = 0.5 * (nu + n_obs)
    return (0.5 * nu * math.log(0.5 * psi) - math.lgamma(0.5 * nu) - 0.5 * n_obs * LOG_2PI
            + math.lgamma(half) + half * math.log(2.0))


def npf_joint_logpdf(prior: GaussianPrior, data, fid_prior: FidelityHyper, iw: InvGammaHyper, theta, gammas,
                     include_constant: bool = False, obs_dim: int = 1):
    """Joint posterior over (theta, gamma); batched when theta is (K, p) and gammas (K, N).

    By default the likelihood is the bare power law
    (Psi + sum gamma_i^2 r_i^2)^(-(nu+N)/2); ``include_constant`` adds the
    normalizer of the variance-marginalized Gaussian likelihood.
    """
    prob = as_problem(data)
    theta, single = _batch(theta, prob.dim)
    g = np.asarray(gammas, dtype=float).reshape(theta.shape[0], prob.n_obs)
    if np.any((g < 0.0) | (g > 1.0)) or np.any(np.isnan(g)):
        raise DomainError("fidelity values must lie in [0, 1]")
    r = prob.residuals(theta)
    tg = fid_prior.prior()
    with np.errstate(divide="ignore"):
        lg = np.log(g)
    out = np.atleast_1d(prior.logpdf(theta))
    out = out + np.sum(tg.logpdf(g) + obs_dim * lg, axis=1)
    n = prob.n_obs
    q = iw.psi + np.sum((g * r) ** 2, axis=1)
    out = out - 0.5 * (iw.nu + n) * np.log(q)
    if include_constant:
        out = out + npf_log_normalizer(iw, n)
    return _unbatch(out, single)


# --------------------------------------------------------------------------
# logit-GP fidelity field
# --------------------------------------------------------------------------


def gp_kernel_matrix(points, cfg: GPFidelityConfig) -> np.ndarray:
    """Squared-exponential Gram matrix plus diagonal jitter; checked to factorize."""
    x = np.atleast_1d(np.asarray(points, dtype=float))
    if x.size == 0:
        raise DomainError("kernel matrix needs at least one point")
    x = x.reshape(x.shape[0], -1)
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    K = cfg.sigma_tau**2 * np.exp(-0.5 * d2 / cfg.lengthscale_l**2)
    K[np.diag_indices_from(K)] += cfg.effective_jitter
    cholesky_lower(K)
    return K


@dataclass
class LogitGPTarget:
    """Pre-factorized pieces of the (x0, z) joint density."""

    prior: GaussianPrior
    problem: LinearProblem
    cfg: GPFidelityConfig
    obs_dim: int = 1
    kernel: np.ndarray = field(init=False, repr=False)
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.kernel = gp_kernel_matrix(self.problem.locations, self.cfg)
        self.chol = cholesky_lower(self.kernel)
        self._mean = np.full(self.problem.n_obs, self.cfg.mean_m)

    def gp_logpdf(self, z):
        return mvn_logpdf_chol(np.asarray(z, dtype=float), self._mean, self.chol)

    def loglik(self, x0, z):
        """sum_i [d/2 ln tau_i - tau_i m_i] with tau = T^{-1}(z)."""
        x0 = np.asarray(x0, dtype=float).reshape(-1, self.problem.dim)
        z = np.asarray(z, dtype=float).reshape(x0.shape[0], self.problem.n_obs)
        m = _mismatch(self.problem, x0)
        out = np.sum(0.5 * self.obs_dim * log_sigmoid(z) - sigmoid(z) * m, axis=1)
        return out

    def logpdf(self, x0, z):
        x0 = np.asarray(x0, dtype=float)
        single = np.ndim(z) == 1
        out = np.atleast_1d(self.prior.logpdf(x0.reshape(-1, self.problem.dim)))
        out = out + np.atleast_1d(self.gp_logpdf(z)) + self.loglik(x0, z)
        return _unbatch(out, single)


def logitgp_joint_logpdf(prior_x0: GaussianPrior, data, cfg: GPFidelityConfig, x0, z,
                         operator: str = "euler", obs_dim: int = 1):
    """Joint density over (x0, z), z the transformed fidelity field (no Jacobian)."""
    return LogitGPTarget(prior_x0, as_problem(data, operator), cfg, obs_dim).logpdf(x0, z)
