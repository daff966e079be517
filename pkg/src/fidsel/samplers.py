"""MCMC kernels: random-walk Metropolis and Metropolis-within-Gibbs variants.

Randomness for each adaptation batch is drawn up front in numpy (Gaussian
increments already scaled, then log-uniforms for the accept tests), and a
batch kernel consumes it.  Kernels exist in a numba version and a numpy twin
that read the same arrays, so the backend changes speed, not the stream.

Proposal scales adapt only during burn-in, once per batch:
``scale *= exp(gain / sqrt(k) * (acc_k - target))`` for the k-th batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import _accel
from . import rng as rngmod
from ._accel import jit
from .datasets import format_value, write_header
from .errors import DomainError, SetupError
from .posteriors import (
    FidelityHyper,
    GaussianPrior,
    GPFidelityConfig,
    InvGammaHyper,
    LogitGPTarget,
    as_problem,
    gp_kernel_matrix,
    npf_joint_logpdf,
)
from .special import (
    LOG_2PI,
    _log_gammainc_pair_np,
    _log_gammainc_pair_scalar,
    cholesky_lower,
    log_lower_incomplete_gamma,
    logit,
    sigmoid,
    truncated_gamma_from_uniforms,
    truncated_gamma_mean,
)


@dataclass(frozen=True)
class AdaptConfig:
    target_accept: float = 0.234
    batch: int = 100
    gain: float = 1.0
    burn_in: int = 20_000

    def __post_init__(self):
        if not 0.0 < self.target_accept < 1.0:
            raise DomainError("target_accept must lie in (0, 1)")
        if self.batch < 1:
            raise DomainError("adaptation batch must be at least 1")
        if not self.gain > 0:
            raise DomainError("adaptation gain must be positive")
        if self.burn_in < 0:
            raise DomainError("burn_in must be non-negative")


NO_ADAPT = AdaptConfig(burn_in=0)


@dataclass
class Chain:
    """Thinned post-burn-in states with per-block acceptance statistics."""

    states: np.ndarray
    log_densities: np.ndarray
    accept_counts: dict
    seed: int | None
    tuning: dict
    names: list
    thin: int = 1
    burn_in: int = 0
    scale_trace: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    batch_accept: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.states) != len(self.log_densities):
            raise DomainError("states and log_densities must have equal length")

    def __len__(self):
        return len(self.log_densities)

    def acceptance(self, block: str) -> float:
        acc, prop = self.accept_counts[block]
        return acc / prop if prop else 0.0

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.names.index(name)]

    def columns(self, prefix: str) -> np.ndarray:
        idx = [i for i, n in enumerate(self.names) if n == prefix or n.startswith(prefix + "_")]
        return self.states[:, idx]

    def mean(self) -> np.ndarray:
        return self.states.mean(axis=0)

    def save(self, path, meta: dict | None = None):
        header = dict(meta or {})
        header.update(seed=self.seed if self.seed is not None else "none", thin=self.thin, burn_in=self.burn_in)
        for block, scale in self.tuning.items():
            header[f"scale_{block}"] = scale
            header[f"accept_{block}"] = self.acceptance(block)
        with open(path, "w") as fh:
            write_header(fh, header)
            fh.write(",".join(["iter", "logpi", *self.names]) + "\n")
            for k, (lp, row) in enumerate(zip(self.log_densities, self.states)):
                it = self.burn_in + k * self.thin
                fh.write(",".join([str(it), format_value(float(lp)), *(format_value(float(v)) for v in row)]) + "\n")
        return path


def _as_rng(rng, name):
    if isinstance(rng, np.random.Generator):
        return rng, None
    seed = int(rng)
    return rngmod.stream(seed, name), seed


# --------------------------------------------------------------------------
# shared numba helpers
# --------------------------------------------------------------------------


@jit
def _softplus(z):
    return max(z, 0.0) + math.log1p(math.exp(-abs(z)))


@jit
def _gauss_nb(theta, mu0, P0, c0):
    p = theta.size
    q = 0.0
    for i in range(p):
        di = theta[i] - mu0[i]
        for j in range(p):
            q += di * P0[i, j] * (theta[j] - mu0[j])
    return c0 - 0.5 * q


def _gauss_np(theta, mu0, P0, c0):
    d = theta - mu0
    return c0 - 0.5 * (d @ P0 @ d)


@jit
def _resid_nb(theta, A, y, n):
    r = y[n]
    for j in range(theta.size):
        r -= A[n, j] * theta[j]
    return r


# --------------------------------------------------------------------------
# fidelity marginal target
# --------------------------------------------------------------------------


@jit
def _fid_target_nb(theta, A, y, hiv, mu0, P0, c0, a, beta, lga):
    out = _gauss_nb(theta, mu0, P0, c0)
    for n in range(y.size):
        r = _resid_nb(theta, A, y, n)
        rate = beta + r * r * hiv
        lp, _ = _log_gammainc_pair_scalar(a, rate)
        out += lga + lp - a * math.log(rate)
    return out


def _fid_target_np(theta, A, y, hiv, mu0, P0, c0, a, beta, lga):
    out = _gauss_np(theta, mu0, P0, c0)
    if y.size:
        r = y - A @ theta
        rate = beta + r * r * hiv
        lp, _ = _log_gammainc_pair_np(np.full_like(rate, a), rate)
        out += np.sum(lga + lp - a * np.log(rate))
    return out


@jit
def _fid_batch_nb(theta, lp, incr, logu, A, y, hiv, mu0, P0, c0, a, beta, lga):
    B, p = incr.shape
    traj = np.empty((B, p))
    tlp = np.empty(B)
    cur = theta.copy()
    prop = np.empty(p)
    acc = 0
    for t in range(B):
        for j in range(p):
            prop[j] = cur[j] + incr[t, j]
        lpp = _fid_target_nb(prop, A, y, hiv, mu0, P0, c0, a, beta, lga)
        if logu[t] < lpp - lp:
            cur[:] = prop
            lp = lpp
            acc += 1
        traj[t] = cur
        tlp[t] = lp
    return traj, tlp, acc


def _fid_batch_np(theta, lp, incr, logu, A, y, hiv, mu0, P0, c0, a, beta, lga):
    B, p = incr.shape
    traj = np.empty((B, p))
    tlp = np.empty(B)
    cur = theta.copy()
    acc = 0
    for t in range(B):
        prop = cur + incr[t]
        lpp = _fid_target_np(prop, A, y, hiv, mu0, P0, c0, a, beta, lga)
        if logu[t] < lpp - lp:
            cur, lp = prop, lpp
            acc += 1
        traj[t] = cur
        tlp[t] = lp
    return traj, tlp, acc


# --------------------------------------------------------------------------
# non-product-form target, state (theta, z) with gamma = 1 / (1 + e^z)
# --------------------------------------------------------------------------


@jit
def _npf_sumsq_nb(theta, lg, A, y):
    s = 0.0
    for n in range(y.size):
        r = _resid_nb(theta, A, y, n)
        s += math.exp(2.0 * lg[n]) * r * r
    return s


@jit
def _npf_batch_nb(theta, z, dth, dz, logu1, logu2, A, y, mu0, P0, c0, ga, gb, gconst, nu, psi):
    B, p = dth.shape
    N = z.size
    power = 0.5 * (nu + N)
    traj_t = np.empty((B, p))
    traj_z = np.empty((B, N))
    tlp = np.empty(B)
    cur_t = theta.copy()
    cur_z = z.copy()
    lg = np.empty(N)
    for n in range(N):
        lg[n] = -_softplus(cur_z[n])
    pg = gconst
    jac = 0.0
    for n in range(N):
        pg += (ga - 1.0) * lg[n] - gb * math.exp(lg[n])
        jac += lg[n] - _softplus(-cur_z[n])
    pt = _gauss_nb(cur_t, mu0, P0, c0)
    pl = -power * math.log(psi + _npf_sumsq_nb(cur_t, lg, A, y))
    prop_t = np.empty(p)
    prop_z = np.empty(N)
    plg = np.empty(N)
    acc1 = 0
    acc2 = 0
    for t in range(B):
        for j in range(p):
            prop_t[j] = cur_t[j] + dth[t, j]
        ppt = _gauss_nb(prop_t, mu0, P0, c0)
        ppl = -power * math.log(psi + _npf_sumsq_nb(prop_t, lg, A, y))
        if logu1[t] < (ppt + ppl) - (pt + pl):
            cur_t[:] = prop_t
            pt = ppt
            pl = ppl
            acc1 += 1
        ppg = gconst
        pjac = 0.0
        for n in range(N):
            prop_z[n] = cur_z[n] + dz[t, n]
            plg[n] = -_softplus(prop_z[n])
            ppg += (ga - 1.0) * plg[n] - gb * math.exp(plg[n])
            pjac += plg[n] - _softplus(-prop_z[n])
        ppl = -power * math.log(psi + _npf_sumsq_nb(cur_t, plg, A, y))
        if logu2[t] < (ppg + ppl + pjac) - (pg + pl + jac):
            cur_z[:] = prop_z
            lg[:] = plg
            pg = ppg
            pl = ppl
            jac = pjac
            acc2 += 1
        traj_t[t] = cur_t
        traj_z[t] = cur_z
        tlp[t] = pt + pg + pl
    return traj_t, traj_z, tlp, acc1, acc2


def _softplus_np(z):
    return np.logaddexp(0.0, z)


def _npf_batch_np(theta, z, dth, dz, logu1, logu2, A, y, mu0, P0, c0, ga, gb, gconst, nu, psi):
    B, p = dth.shape
    N = z.size
    power = 0.5 * (nu + N)
    traj_t = np.empty((B, p))
    traj_z = np.empty((B, N))
    tlp = np.empty(B)
    cur_t, cur_z = theta.copy(), z.copy()

    def parts(zz):
        lg = -_softplus_np(zz)
        return lg, gconst + np.sum((ga - 1.0) * lg - gb * np.exp(lg)), np.sum(lg - _softplus_np(-zz))

    def like(th, lg):
        r = y - A @ th
        return -power * math.log(psi + np.sum(np.exp(2.0 * lg) * r * r))

    lg, pg, jac = parts(cur_z)
    pt = _gauss_np(cur_t, mu0, P0, c0)
    pl = like(cur_t, lg)
    acc1 = acc2 = 0
    for t in range(B):
        prop_t = cur_t + dth[t]
        ppt = _gauss_np(prop_t, mu0, P0, c0)
        ppl = like(prop_t, lg)
        if logu1[t] < (ppt + ppl) - (pt + pl):
            cur_t, pt, pl = prop_t, ppt, ppl
            acc1 += 1
        prop_z = cur_z + dz[t]
        plg, ppg, pjac = parts(prop_z)
        ppl = like(cur_t, plg)
        if logu2[t] < (ppg + ppl + pjac) - (pg + pl + jac):
            cur_z, lg, pg, pl, jac = prop_z, plg, ppg, ppl, pjac
            acc2 += 1
        traj_t[t] = cur_t
        traj_z[t] = cur_z
        tlp[t] = pt + pg + pl
    return traj_t, traj_z, tlp, acc1, acc2


# --------------------------------------------------------------------------
# logit-GP target, state (x0, z) with tau = 1 / (1 + e^z)
# --------------------------------------------------------------------------


@jit
def _gp_quad_nb(z, m, L):
    n = z.size
    u = np.empty(n)
    q = 0.0
    for i in range(n):
        s = z[i] - m
        for j in range(i):
            s -= L[i, j] * u[j]
        u[i] = s / L[i, i]
        q += u[i] * u[i]
    return q


@jit
def _gp_lik_nb(x, z, A, y, hiv, half_d):
    out = 0.0
    for n in range(y.size):
        r = _resid_nb(x, A, y, n)
        lt = -_softplus(z[n])
        out += half_d * lt - math.exp(lt) * (r * r * hiv)
    return out


@jit
def _gp_batch_nb(x0, z, dx, dz, logu1, logu2, A, y, hiv, half_d, mu0, P0, c0, m, L, cgp, use_lik):
    B, p = dx.shape
    N = z.size
    traj_x = np.empty((B, p))
    traj_z = np.empty((B, N))
    tlp = np.empty(B)
    cur_x = x0.copy()
    cur_z = z.copy()
    px = _gauss_nb(cur_x, mu0, P0, c0)
    pg = cgp - 0.5 * _gp_quad_nb(cur_z, m, L)
    pl = _gp_lik_nb(cur_x, cur_z, A, y, hiv, half_d) if use_lik else 0.0
    prop_x = np.empty(p)
    prop_z = np.empty(N)
    acc1 = 0
    acc2 = 0
    for t in range(B):
        for j in range(p):
            prop_x[j] = cur_x[j] + dx[t, j]
        ppx = _gauss_nb(prop_x, mu0, P0, c0)
        ppl = _gp_lik_nb(prop_x, cur_z, A, y, hiv, half_d) if use_lik else 0.0
        if logu1[t] < (ppx + ppl) - (px + pl):
            cur_x[:] = prop_x
            px = ppx
            pl = ppl
            acc1 += 1
        for n in range(N):
            prop_z[n] = cur_z[n] + dz[t, n]
        ppg = cgp - 0.5 * _gp_quad_nb(prop_z, m, L)
        ppl = _gp_lik_nb(cur_x, prop_z, A, y, hiv, half_d) if use_lik else 0.0
        if logu2[t] < (ppg + ppl) - (pg + pl):
            cur_z[:] = prop_z
            pg = ppg
            pl = ppl
            acc2 += 1
        traj_x[t] = cur_x
        traj_z[t] = cur_z
        tlp[t] = px + pg + pl
    return traj_x, traj_z, tlp, acc1, acc2


def _gp_batch_np(x0, z, dx, dz, logu1, logu2, A, y, hiv, half_d, mu0, P0, c0, m, L, cgp, use_lik):
    B, p = dx.shape
    N = z.size
    traj_x = np.empty((B, p))
    traj_z = np.empty((B, N))
    tlp = np.empty(B)

    def gp(zz):
        u = solve_triangular(L, zz - m, lower=True)
        return cgp - 0.5 * (u @ u)

    def lik(xx, zz):
        if not use_lik:
            return 0.0
        r = y - A @ xx
        lt = -_softplus_np(zz)
        return float(np.sum(half_d * lt - np.exp(lt) * (r * r * hiv)))

    cur_x, cur_z = x0.copy(), z.copy()
    px, pg, pl = _gauss_np(cur_x, mu0, P0, c0), gp(cur_z), lik(cur_x, cur_z)
    acc1 = acc2 = 0
    for t in range(B):
        prop_x = cur_x + dx[t]
        ppx, ppl = _gauss_np(prop_x, mu0, P0, c0), lik(prop_x, cur_z)
        if logu1[t] < (ppx + ppl) - (px + pl):
            cur_x, px, pl = prop_x, ppx, ppl
            acc1 += 1
        prop_z = cur_z + dz[t]
        ppg, ppl = gp(prop_z), lik(cur_x, prop_z)
        if logu2[t] < (ppg + ppl) - (pg + pl):
            cur_z, pg, pl = prop_z, ppg, ppl
            acc2 += 1
        traj_x[t] = cur_x
        traj_z[t] = cur_z
        tlp[t] = px + pg + pl
    return traj_x, traj_z, tlp, acc1, acc2


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------


def _prior_parts(prior: GaussianPrior):
    prec = prior.precision
    c0 = -0.5 * (prior.dim * LOG_2PI + 2.0 * np.sum(np.log(np.diag(prior.chol))))
    return prior.mean.copy(), np.ascontiguousarray(prec), c0


def _check_scales(scales):
    scales = np.asarray(scales, dtype=float).ravel()
    if np.any(~(scales > 0)) or not np.all(np.isfinite(scales)):
        raise SetupError("proposal scales must be positive and finite")
    return scales


class _Driver:
    """Batch loop shared by all samplers: adaptation, thinning, recording."""

    def __init__(self, steps, scales, adapt: AdaptConfig | None, thin):
        if steps < 1:
            raise SetupError("steps must be at least 1")
        if thin < 1:
            raise SetupError("thin must be at least 1")
        self.adapt = adapt or NO_ADAPT
        self.steps, self.thin = int(steps), int(thin)
        self.burn_in = self.adapt.burn_in
        self.scales = _check_scales(scales).copy()
        self.nb = self.scales.size
        self.acc = np.zeros(self.nb, dtype=np.int64)
        self.prop = 0
        self.scale_trace, self.batch_accept = [], []
        self.k = 0

    def batches(self):
        it, total = 0, self.burn_in + self.steps
        while it < total:
            size = min(self.adapt.batch, total - it)
            if it < self.burn_in:
                size = min(size, self.burn_in - it)
            yield it, size
            it += size

    def keep_mask(self, it, size):
        idx = np.arange(it, it + size) - self.burn_in
        return (idx >= 0) & (idx % self.thin == 0), idx >= 0

    def update(self, it, size, accepts):
        accepts = np.asarray(accepts, dtype=np.int64)
        rate = accepts / size
        if it < self.burn_in:
            self.k += 1
            step = self.adapt.gain / math.sqrt(self.k)
            self.scales = self.scales * np.exp(step * (rate - self.adapt.target_accept))
        else:
            self.acc += accepts
            self.prop += size
        self.scale_trace.append(self.scales.copy())
        self.batch_accept.append(rate)

    def finish(self, states, lps, names, blocks, seed, extras):
        states = np.vstack(states) if states else np.empty((0, len(names)))
        lps = np.concatenate(lps) if lps else np.empty(0)
        return Chain(
            states=states,
            log_densities=lps,
            accept_counts={b: (int(self.acc[i]), int(self.prop)) for i, b in enumerate(blocks)},
            seed=seed,
            tuning={b: float(self.scales[i]) for i, b in enumerate(blocks)},
            names=list(names),
            thin=self.thin,
            burn_in=self.burn_in,
            scale_trace=np.array(self.scale_trace),
            batch_accept=np.array(self.batch_accept),
            extras=extras,
        )


def _names(prefix, k):
    return [prefix] if k == 1 else [f"{prefix}_{i + 1}" for i in range(k)]


def _param_names(dim):
    return ["a", "b"] if dim == 2 else _names("x0", dim) if dim == 1 else _names("theta", dim)


# --------------------------------------------------------------------------
# public samplers
# --------------------------------------------------------------------------


def rwm(target, init, steps, scale, rng, adapt: AdaptConfig | None = None, thin: int = 1,
        proposal_chol=None, names=None) -> Chain:
    """Random-walk Metropolis on a Python log-density callable.

    Proposals are ``x + scale * L w`` with ``L`` the optional proposal
    Cholesky factor (identity by default).
    """
    gen, seed = _as_rng(rng, "rwm")
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    lp = float(target(x))
    if not np.isfinite(lp):
        raise SetupError("target is not finite at the initial point")
    p = x.size
    L = np.eye(p) if proposal_chol is None else np.atleast_2d(np.asarray(proposal_chol, dtype=float))
    drv = _Driver(steps, [scale], adapt, thin)
    states, lps = [], []
    for it, size in drv.batches():
        incr = drv.scales[0] * (gen.standard_normal((size, p)) @ L.T)
        logu = np.log(gen.random(size))
        traj, tlp, acc = np.empty((size, p)), np.empty(size), 0
        for t in range(size):
            prop = x + incr[t]
            lpp = float(target(prop))
            if logu[t] < lpp - lp:
                x, lp = prop, lpp
                acc += 1
            traj[t] = x
            tlp[t] = lp
        rec, _ = drv.keep_mask(it, size)
        states.append(traj[rec])
        lps.append(tlp[rec])
        drv.update(it, size, [acc])
    return drv.finish(states, lps, names or _names("x", p), ["x"], seed, {})


def mwg_fidelity(data, prior: GaussianPrior, hyper: FidelityHyper, init_theta, steps, scale, rng,
                 adapt: AdaptConfig | None = None, thin: int = 1, proposal_chol=None,
                 obs_dim: int = 1, operator: str = "exact") -> Chain:
    """Metropolis-within-Gibbs on (theta, tau) with tau integrated out of the theta move.

    theta takes a random-walk step against the fidelity marginal; tau is
    then drawn exactly from its truncated-gamma conditional.  Draws are made
    for every recorded state; the running fidelity means in
    ``extras["fidelity_mean"]`` average the analytic conditional means over
    every post-burn-in iteration.
    """
    prob = as_problem(data, operator)
    gen, seed = _as_rng(rng, "mwg_fidelity")
    theta = np.atleast_1d(np.asarray(init_theta, dtype=float)).copy()
    p, N = prob.dim, prob.n_obs
    mu0, P0, c0 = _prior_parts(prior)
    a = hyper.alpha + 0.5 * obs_dim
    hiv = 0.5 / prob.noise_var
    args = (prob.A, prob.y, hiv, mu0, P0, c0, a, hyper.beta, math.lgamma(a))
    target = _fid_target_nb if _accel.USE_NUMBA else _fid_target_np
    batch = _fid_batch_nb if _accel.USE_NUMBA else _fid_batch_np
    lp = float(target(theta, *args))
    if not np.isfinite(lp):
        raise SetupError("fidelity posterior is not finite at the initial point")
    L = np.eye(p) if proposal_chol is None else np.atleast_2d(np.asarray(proposal_chol, dtype=float))
    drv = _Driver(steps, [scale], adapt, thin)
    states, lps = [], []
    rb_sum, rb_n = np.zeros(N), 0
    for it, size in drv.batches():
        incr = drv.scales[0] * (gen.standard_normal((size, p)) @ L.T)
        logu = np.log(gen.random(size))
        traj, tlp, acc = batch(theta, lp, np.ascontiguousarray(incr), logu, *args)
        theta, lp = traj[-1].copy(), float(tlp[-1])
        rec, post = drv.keep_mask(it, size)
        if np.any(post) and N:
            rb_sum += _rb_sum(traj[post], prob, a, hyper.beta)
            rb_n += int(post.sum())
        if np.any(rec):
            th_rec = traj[rec]
            u = 1.0 - gen.random((th_rec.shape[0], N))
            if N:
                rates = hyper.beta + hiv * prob.residuals(th_rec) ** 2
                tau = truncated_gamma_from_uniforms(a, rates, u).reshape(th_rec.shape[0], N)
            else:
                tau = np.empty((th_rec.shape[0], 0))
            states.append(np.hstack([th_rec, tau]))
            lps.append(tlp[rec])
        drv.update(it, size, [acc])
    extras = {"fidelity_mean": rb_sum / max(rb_n, 1)}
    names = _param_names(p) + _names("tau", N)
    return drv.finish(states, lps, names, ["theta"], seed, extras)


def _rb_sum(traj, prob, a, beta):
    """Sum over iterations of the analytic tau means, evaluating each distinct state once."""
    change = np.ones(traj.shape[0], dtype=bool)
    change[1:] = np.any(traj[1:] != traj[:-1], axis=1)
    idx = np.flatnonzero(change)
    counts = np.diff(np.append(idx, traj.shape[0]))
    rates = beta + 0.5 * prob.residuals(traj[idx]) ** 2 / prob.noise_var
    means = np.asarray(truncated_gamma_mean(a, rates)).reshape(idx.size, -1)
    return counts @ means


def mwg_npf(data, prior: GaussianPrior, fid_prior: FidelityHyper, iw: InvGammaHyper, init, steps, scales, rng,
            adapt: AdaptConfig | None = None, thin: int = 1, proposal_chol=None, obs_dim: int = 1) -> Chain:
    """MwG for the non-product-form joint over (theta, gamma).

    ``init`` is ``(theta, gamma)``; ``scales`` is ``(theta_scale, beta)`` where
    the gamma block proposes ``T^{-1}(T(gamma) + beta w)`` jointly for all i
    and the accept ratio carries the product of ``gamma - gamma^2`` terms.
    """
    prob = as_problem(data)
    gen, seed = _as_rng(rng, "mwg_npf")
    theta = np.atleast_1d(np.asarray(init[0], dtype=float)).copy()
    gam = np.asarray(init[1], dtype=float).reshape(prob.n_obs)
    if np.any((gam <= 0.0) | (gam >= 1.0)):
        raise SetupError("initial fidelities must lie strictly inside (0, 1)")
    z = np.asarray(logit(gam), dtype=float).reshape(prob.n_obs)
    p, N = prob.dim, prob.n_obs
    mu0, P0, c0 = _prior_parts(prior)
    ga = fid_prior.alpha + obs_dim
    gconst = N * (fid_prior.alpha * math.log(fid_prior.beta) - log_lower_incomplete_gamma(fid_prior.alpha, fid_prior.beta))
    args = (prob.A, prob.y, mu0, P0, c0, ga, fid_prior.beta, gconst, iw.nu, iw.psi)
    if not np.isfinite(npf_joint_logpdf(prior, prob, fid_prior, iw, theta, gam, obs_dim=obs_dim)):
        raise SetupError("non-product-form posterior is not finite at the initial point")
    batch = _npf_batch_nb if _accel.USE_NUMBA else _npf_batch_np
    L = np.eye(p) if proposal_chol is None else np.atleast_2d(np.asarray(proposal_chol, dtype=float))
    drv = _Driver(steps, scales, adapt, thin)
    if drv.nb != 2:
        raise SetupError("mwg_npf needs two scales (theta, gamma)")
    states, lps = [], []
    g_sum, g_n = np.zeros(N), 0
    for it, size in drv.batches():
        dth = drv.scales[0] * (gen.standard_normal((size, p)) @ L.T)
        dz = drv.scales[1] * gen.standard_normal((size, N))
        logu1 = np.log(gen.random(size))
        logu2 = np.log(gen.random(size))
        tt, tz, tlp, a1, a2 = batch(theta, z, np.ascontiguousarray(dth), dz, logu1, logu2, *args)
        theta, z = tt[-1].copy(), tz[-1].copy()
        rec, post = drv.keep_mask(it, size)
        gam_traj = sigmoid(tz)
        g_sum += gam_traj[post].sum(axis=0)
        g_n += int(post.sum())
        states.append(np.hstack([tt[rec], gam_traj[rec]]))
        lps.append(tlp[rec])
        drv.update(it, size, [a1, a2])
    names = _param_names(p) + _names("gamma", N)
    return drv.finish(states, lps, names, ["theta", "gamma"], seed, {"fidelity_mean": g_sum / max(g_n, 1)})


def mwg_logitgp(data, prior: GaussianPrior, cfg: GPFidelityConfig, init, steps, adapt: AdaptConfig | None, rng,
                scales=(1.0, 0.1), thin: int = 1, likelihood: bool = True, operator: str = "euler",
                obs_dim: int = 1) -> Chain:
    """Adaptive MwG over (x0, z) for the logit-GP fidelity field.

    Block one moves x0 with scale beta_X; block two moves the whole field z
    with covariance beta_gamma^2 Sigma_tau.  ``likelihood=False`` samples the
    prior only (used to validate the z moves).
    """
    prob = as_problem(data, operator)
    gen, seed = _as_rng(rng, "mwg_logitgp")
    x0 = np.atleast_1d(np.asarray(init[0], dtype=float)).copy()
    p, N = prob.dim, prob.n_obs
    z = np.full(N, cfg.mean_m) if init[1] is None else np.asarray(init[1], dtype=float).reshape(N).copy()
    K = gp_kernel_matrix(prob.locations, cfg)
    Lk = cholesky_lower(K)
    cgp = -0.5 * (N * LOG_2PI + 2.0 * np.sum(np.log(np.diag(Lk))))
    mu0, P0, c0 = _prior_parts(prior)
    args = (prob.A, prob.y, 0.5 / prob.noise_var, 0.5 * obs_dim, mu0, P0, c0, float(cfg.mean_m), Lk, cgp, bool(likelihood))
    tgt = LogitGPTarget(prior, prob, cfg, obs_dim)
    lp0 = tgt.logpdf(x0, z) if likelihood else prior.logpdf(x0) + tgt.gp_logpdf(z)
    if not np.isfinite(lp0):
        raise SetupError("logit-GP posterior is not finite at the initial point")
    batch = _gp_batch_nb if _accel.USE_NUMBA else _gp_batch_np
    drv = _Driver(steps, scales, adapt, thin)
    if drv.nb != 2:
        raise SetupError("mwg_logitgp needs two scales (x0, z)")
    states, lps = [], []
    t_sum, t_n = np.zeros(N), 0
    for it, size in drv.batches():
        dx = drv.scales[0] * gen.standard_normal((size, p))
        dz = drv.scales[1] * (gen.standard_normal((size, N)) @ Lk.T)
        logu1 = np.log(gen.random(size))
        logu2 = np.log(gen.random(size))
        tx, tz, tlp, a1, a2 = batch(x0, z, dx, np.ascontiguousarray(dz), logu1, logu2, *args)
        x0, z = tx[-1].copy(), tz[-1].copy()
        rec, post = drv.keep_mask(it, size)
        t_sum += (sigmoid(tz[post])).sum(axis=0)
        t_n += int(post.sum())
        states.append(np.hstack([tx[rec], tz[rec]]))
        lps.append(tlp[rec])
        drv.update(it, size, [a1, a2])
    names = _param_names(p) + _names("z", N)
    extras = {"fidelity_mean": t_sum / max(t_n, 1), "kernel": K}
    return drv.finish(states, lps, names, ["x0", "z"], seed, extras)
