import itertools
import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate, stats

from fidsel.datasets import gen_example1, gen_example2, gen_example3, gen_ode_data
from fidsel.errors import CapacityError, DomainError, NumericError
from fidsel.models import LinearProblem, design_matrix
from fidsel.posteriors import (
    BetaHyper,
    FidelityHyper,
    GaussianPrior,
    GPFidelityConfig,
    InvGammaHyper,
    LogitGPTarget,
    PModelPosterior,
    SubsetMask,
    as_problem,
    fidelity_conditional,
    fidelity_joint_logpdf,
    fidelity_loglik_terms,
    fidelity_marginal_logpdf,
    gaussian_loglik,
    gp_kernel_matrix,
    linreg_conjugate,
    logitgp_joint_logpdf,
    npf_joint_logpdf,
    npf_log_normalizer,
    pmodel_components,
    pmodel_log_weights,
    pmodel_logpdf,
    pmodel_mixture_logpdf,
    standard_logpdf,
)
from fidsel.special import sigmoid


def small_problem(n=3, noise_var=0.5, seed=0):
    g = np.random.default_rng(seed)
    xs = np.sort(g.uniform(0, 2, n))
    return LinearProblem(design_matrix(xs), 1.5 * xs - 0.5 + g.normal(0, 1, n), noise_var, xs)


# -- standard posterior -----------------------------------------------------


def test_conjugate_scalar_example():
    prob = LinearProblem(np.ones((1, 1)), np.array([2.0]), 1.0, np.array([0.0]))
    post = linreg_conjugate(GaussianPrior([0.0], [[1.0]]), prob)
    assert post.mean[0] == pytest.approx(1.0, rel=1e-14)
    assert post.cov[0, 0] == pytest.approx(0.5, rel=1e-14)


def test_conjugate_matches_normal_equations():
    prob = small_problem(8)
    prior = GaussianPrior([1.0, -1.0], [[4.0, 1.0], [1.0, 9.0]])
    post = linreg_conjugate(prior, prob)
    P = np.linalg.inv(prior.cov) + prob.A.T @ prob.A / prob.noise_var
    cov = np.linalg.inv(P)
    mean = cov @ (np.linalg.inv(prior.cov) @ prior.mean + prob.A.T @ prob.y / prob.noise_var)
    np.testing.assert_allclose(post.mean, mean, rtol=1e-12)
    np.testing.assert_allclose(post.cov, cov, rtol=1e-12)


def test_standard_logpdf_proportional_to_conjugate():
    prob = small_problem(6)
    prior = GaussianPrior.isotropic(2, 3.0)
    post = linreg_conjugate(prior, prob)
    th = np.random.default_rng(1).normal(size=(20, 2))
    diff = standard_logpdf(prior, prob, th) - post.logpdf(th)
    assert np.ptp(diff) < 1e-10


def test_gaussian_loglik_vs_scipy():
    prob = small_problem(5)
    th = np.array([0.3, -0.2])
    ref = stats.norm.logpdf(prob.y, prob.A @ th, math.sqrt(prob.noise_var)).sum()
    assert gaussian_loglik(prob, th) == pytest.approx(ref, rel=1e-13)


def test_as_problem():
    with pytest.raises(DomainError):
        as_problem([1, 2])
    ode = gen_ode_data(seed=0)
    assert as_problem(ode, "euler").name == "ode-euler"


# -- p-model ----------------------------------------------------------------


@pytest.mark.parametrize("n", [0, 1, 5, 10, 20])
def test_pmodel_weights_sum_to_one(n):
    lw = pmodel_log_weights(n, BetaHyper(2.0, 50.0))
    counts = np.array([math.comb(n, k) for k in range(n + 1)], dtype=float)
    assert math.fsum(counts * np.exp(lw)) == pytest.approx(1.0, rel=1e-13)


def test_pmodel_no_data_is_prior():
    prior = GaussianPrior.isotropic(2, 2.0)
    prob = LinearProblem(np.zeros((0, 2)), np.zeros(0), 1.0, np.zeros(0))
    comps = list(pmodel_components(prior, prob, BetaHyper()))
    assert len(comps) == 1
    th = np.array([0.4, -1.0])
    assert pmodel_mixture_logpdf(comps, th) == pytest.approx(prior.logpdf(th), rel=1e-14)


def test_pmodel_single_observation_mixture():
    prior = GaussianPrior.isotropic(2, 2.0)
    prob = small_problem(1)
    hyper = BetaHyper(2.0, 50.0)
    post = linreg_conjugate(prior, prob)
    th = np.random.default_rng(2).normal(size=(7, 2))
    ref = np.log(50 / 52 * np.exp(prior.logpdf(th)) + 2 / 52 * np.exp(post.logpdf(th)))
    np.testing.assert_allclose(PModelPosterior(prior, prob, hyper).logpdf(th), ref, rtol=1e-12)


def test_pmodel_all_selected_limit():
    # alpha >> beta puts essentially all weight on the full subset
    prior = GaussianPrior.isotropic(2, 2.0)
    prob = small_problem(4)
    th = np.array([0.1, 0.2])
    got = pmodel_logpdf(prior, prob, BetaHyper(1e12, 1.0), th)
    assert got == pytest.approx(linreg_conjugate(prior, prob).logpdf(th), rel=1e-9)


def test_pmodel_two_observation_brute_force(backend):
    prior = GaussianPrior.isotropic(2, 3.0)
    prob = small_problem(2)
    hyper = BetaHyper(2.0, 5.0)
    th = np.random.default_rng(3).normal(size=(5, 2))
    p, q = 2 / 7, 5 / 7
    ref = np.zeros(5)
    for bits in itertools.product([0, 1], repeat=2):
        mask = np.array(bits, dtype=bool)
        w = p ** mask.sum() * q ** (2 - mask.sum())
        ref += w * np.exp(linreg_conjugate(prior, prob, mask).logpdf(th))
    np.testing.assert_allclose(PModelPosterior(prior, prob, hyper).logpdf(th), np.log(ref), rtol=1e-12)


@pytest.mark.parametrize("low_bits", [0, 3, 10])
def test_pmodel_fast_matches_enumeration(backend, low_bits):
    prior = GaussianPrior.isotropic(2, 5.0)
    ds = gen_example3(seed=0).subset(np.arange(0, 21, 3))
    hyper = BetaHyper(2.0, 50.0)
    th = np.random.default_rng(4).uniform(-5, 5, (30, 2))
    slow = pmodel_mixture_logpdf(pmodel_components(prior, ds, hyper), th)
    fast = PModelPosterior(prior, ds, hyper, low_bits=low_bits).logpdf(th)
    np.testing.assert_allclose(fast, slow, rtol=1e-11)


def test_pmodel_backends_agree():
    from fidsel import _accel

    prior = GaussianPrior.isotropic(2)
    pm = PModelPosterior(prior, gen_example3(seed=2), BetaHyper())
    th = np.random.default_rng(5).uniform(-6, 6, (40, 2))
    saved = _accel.USE_NUMBA
    try:
        _accel.USE_NUMBA = True
        a = pm.logpdf(th)
        _accel.USE_NUMBA = False
        b = pm.logpdf(th)
    finally:
        _accel.USE_NUMBA = saved
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_pmodel_component_peaks_are_component_means():
    prior = GaussianPrior.isotropic(2, 5.0)
    ds = gen_example3(seed=0).subset(np.arange(0, 21, 4))
    hyper = BetaHyper(2.0, 50.0)
    mus, heights = PModelPosterior(prior, ds, hyper).component_peaks(top=3)
    comps = list(pmodel_components(prior, ds, hyper))
    peaks = sorted((c.log_weight + c.logpdf(c.mean), tuple(c.mean)) for c in comps)[::-1][:3]
    np.testing.assert_allclose(heights, [p[0] for p in peaks], rtol=1e-10)
    np.testing.assert_allclose(mus, [p[1] for p in peaks], rtol=1e-9, atol=1e-12)


def test_pmodel_capacity_and_dimension():
    prior = GaussianPrior.isotropic(2)
    xs = np.linspace(0, 1, 25)
    big = LinearProblem(design_matrix(xs), xs, 1.0, xs)
    with pytest.raises(CapacityError):
        PModelPosterior(prior, big, BetaHyper())
    with pytest.raises(CapacityError):
        next(pmodel_components(prior, big, BetaHyper()))
    with pytest.raises(DomainError):
        PModelPosterior(GaussianPrior.isotropic(1), as_problem(gen_ode_data(seed=0).subset([0])), BetaHyper())


def test_subset_mask():
    m = SubsetMask.from_index(5, 4)
    assert m.bits == (1, 0, 1, 0) and m.n_selected == 2
    with pytest.raises(DomainError):
        SubsetMask((0, 2))


def test_hyper_validation():
    for bad in (lambda: BetaHyper(0.0, 1.0), lambda: FidelityHyper(1.0, -1.0), lambda: InvGammaHyper(math.nan, 1.0),
                lambda: GPFidelityConfig(1.0, 0.0, 0.5), lambda: GPFidelityConfig(jitter=-1.0)):
        with pytest.raises(DomainError):
            bad()


# -- fidelity posterior -----------------------------------------------------


@pytest.mark.parametrize("alpha,beta,m,d", [(2.0, 2.0, 0.0, 1), (2.0, 2.0, 3.7, 1), (0.7, 0.1, 40.0, 1),
                                            (5.0, 1.0, 1e-3, 3), (1.0, 1.0, 500.0, 1)])
def test_fidelity_terms_vs_quadrature(alpha, beta, m, d):
    a = alpha + 0.5 * d
    ref = integrate.quad(lambda t: t ** (a - 1) * math.exp(-t * (beta + m)), 0, 1, epsabs=0, epsrel=1e-13)[0]
    got = fidelity_loglik_terms(np.array([m]), FidelityHyper(alpha, beta), d)[0]
    assert got == pytest.approx(math.log(ref), rel=1e-11, abs=1e-12)


def test_fidelity_terms_deep_tail_vs_mpmath():
    m = 1e6
    a = mp.mpf("2.5")
    lam = 2 + mp.mpf(m)
    ref = mp.log(mp.gammainc(a, 0, lam)) - a * mp.log(lam)
    got = fidelity_loglik_terms(np.array([m]), FidelityHyper(2.0, 2.0))[0]
    assert got == pytest.approx(float(ref), rel=1e-12)


def test_fidelity_terms_decrease_with_mismatch():
    m = np.linspace(0, 200, 401)
    t = fidelity_loglik_terms(m, FidelityHyper(2.0, 2.0))
    assert np.all(np.diff(t) < 0)


def test_fidelity_large_alpha_gaussian_limit():
    # Gamma(alpha, alpha) truncated to [0,1] collapses onto tau = 1
    hyper = FidelityHyper(1e5, 1e5)
    m = np.array([0.0, 0.3, 1.2])
    t = fidelity_loglik_terms(m, hyper)
    np.testing.assert_allclose(t - t[0], -m, rtol=4e-3)


def test_fidelity_joint_integrates_to_marginal():
    prob = small_problem(2, noise_var=0.3)
    prior = GaussianPrior.isotropic(2, 2.0)
    hyper = FidelityHyper(2.0, 2.0)
    th = np.array([1.2, -0.3])
    val = integrate.dblquad(lambda t2, t1: math.exp(fidelity_joint_logpdf(prior, prob, hyper, th, [t1, t2])),
                            0, 1, 0, 1, epsabs=0, epsrel=1e-11)[0]
    assert math.log(val) == pytest.approx(fidelity_marginal_logpdf(prior, prob, hyper, th), rel=1e-9)
    assert fidelity_joint_logpdf(prior, prob, hyper, th, [0.5, 1.2]) == -math.inf


def test_fidelity_marginal_batched_and_no_data():
    ds = gen_example2(seed=0)
    prior = GaussianPrior.isotropic(2)
    hyper = FidelityHyper()
    th = np.random.default_rng(6).normal([10, 50], 1.0, (6, 2))
    batch = fidelity_marginal_logpdf(prior, ds, hyper, th)
    one = [fidelity_marginal_logpdf(prior, ds, hyper, t) for t in th]
    np.testing.assert_allclose(batch, one, rtol=1e-14)
    empty = LinearProblem(np.zeros((0, 2)), np.zeros(0), 1.0, np.zeros(0))
    assert fidelity_marginal_logpdf(prior, empty, hyper, th[0]) == pytest.approx(prior.logpdf(th[0]))


def test_fidelity_conditional_params():
    prob = small_problem(3, noise_var=0.5)
    th = np.array([0.5, 0.5])
    c = fidelity_conditional(th, prob, FidelityHyper(2.0, 3.0), 1)
    r = prob.y[1] - prob.A[1] @ th
    assert c.shape == 2.5
    assert c.rate == pytest.approx(3.0 + r * r / (2 * 0.5), rel=1e-14)
    assert fidelity_conditional(th, prob, FidelityHyper(2.0, 3.0), 1, obs_dim=4).shape == 4.0
    with pytest.raises(DomainError):
        fidelity_conditional(th, prob, FidelityHyper(), 3)


# -- non-product-form posterior -----------------------------------------------


def npf_oracle(prior, prob, fid, iw, theta, g):
    """ln of prior x fidelity prior x Gaussian likelihood with variance integrated by mpmath."""
    r = prob.y - prob.A @ theta
    a, b = mp.mpf(iw.nu) / 2, mp.mpf(iw.psi) / 2

    def integrand(s2):
        lik = mp.mpf(1)
        for gi, ri in zip(g, r):
            lik *= gi / mp.sqrt(2 * mp.pi * s2) * mp.exp(-(gi * ri) ** 2 / (2 * s2))
        ig = b**a / mp.gamma(a) * s2 ** (-a - 1) * mp.exp(-b / s2)
        return lik * ig

    val = mp.quad(integrand, [0, 1e-4, 1e-2, 0.1, 1, 10, mp.inf])
    tg = fid.prior()
    return float(mp.log(val)) + prior.logpdf(theta) + float(np.sum(tg.logpdf(np.asarray(g))))


@pytest.mark.parametrize("nu,psi", [(100.0, 0.98), (3.0, 0.5)])
def test_npf_constant_vs_variance_integral(nu, psi):
    mp.mp.dps = 30
    prob = small_problem(3, noise_var=1.0)
    prior = GaussianPrior.isotropic(2, 2.0)
    fid, iw = FidelityHyper(2.0, 2.0), InvGammaHyper(nu, psi)
    th, g = np.array([1.0, -0.2]), np.array([0.9, 0.4, 0.7])
    got = npf_joint_logpdf(prior, prob, fid, iw, th, g, include_constant=True)
    assert got == pytest.approx(npf_oracle(prior, prob, fid, iw, th, g), rel=1e-10)
    bare = npf_joint_logpdf(prior, prob, fid, iw, th, g)
    assert got - bare == pytest.approx(npf_log_normalizer(iw, 3), rel=1e-13)


def test_npf_power_law_in_psi():
    prob = small_problem(3)
    prior, fid = GaussianPrior.isotropic(2), FidelityHyper()
    th = np.array([1.0, 0.0])
    # negligible fidelities: the likelihood is psi^(-(nu+N)/2) times terms free of psi
    g = np.full(3, 1e-300)
    base = npf_joint_logpdf(prior, prob, fid, InvGammaHyper(10.0, 1.0), th, g)
    dbl = npf_joint_logpdf(prior, prob, fid, InvGammaHyper(10.0, 2.0), th, g)
    assert dbl - base == pytest.approx(-0.5 * 13 * math.log(2.0), rel=1e-12)


def test_npf_permutation_invariant():
    prob = small_problem(5)
    prior, fid, iw = GaussianPrior.isotropic(2), FidelityHyper(), InvGammaHyper()
    th = np.array([1.0, 0.5])
    g = np.array([0.1, 0.5, 0.9, 1.0, 0.3])
    perm = np.array([3, 0, 4, 2, 1])
    swapped = LinearProblem(prob.A[perm], prob.y[perm], prob.noise_var, prob.locations[perm])
    a = npf_joint_logpdf(prior, prob, fid, iw, th, g)
    b = npf_joint_logpdf(prior, swapped, fid, iw, th, g[perm])
    assert a == pytest.approx(b, rel=1e-13)


def test_npf_batched_and_domain():
    prob = small_problem(4)
    prior, fid, iw = GaussianPrior.isotropic(2), FidelityHyper(), InvGammaHyper()
    g = np.random.default_rng(7)
    th, gam = g.normal(size=(3, 2)), g.uniform(size=(3, 4))
    batch = npf_joint_logpdf(prior, prob, fid, iw, th, gam)
    np.testing.assert_allclose(batch, [npf_joint_logpdf(prior, prob, fid, iw, t, c) for t, c in zip(th, gam)],
                               rtol=1e-14)
    with pytest.raises(DomainError):
        npf_joint_logpdf(prior, prob, fid, iw, th[0], [0.5, 0.5, 1.5, 0.5])
    with pytest.raises(DomainError):
        npf_joint_logpdf(prior, prob, fid, iw, th[0], [0.5, math.nan, 0.5, 0.5])
    assert npf_joint_logpdf(prior, prob, fid, iw, th[0], [0.5, 0.0, 0.5, 0.5]) == -math.inf


# -- logit-GP field -----------------------------------------------------------


def test_gp_kernel_examples():
    cfg = GPFidelityConfig(1.0, 2.0, 0.5, jitter=0.0)
    K = gp_kernel_matrix([0.0, 0.5, 3.0], cfg)
    assert K[0, 0] == 4.0
    assert K[0, 1] == pytest.approx(4.0 * math.exp(-0.5), rel=1e-15)
    assert K[1, 2] == pytest.approx(4.0 * math.exp(-0.5 * 25), rel=1e-14)
    np.testing.assert_array_equal(K, K.T)
    assert gp_kernel_matrix([0.0], GPFidelityConfig(sigma_tau=2.0))[0, 0] == pytest.approx(4.0 * (1 + 1e-10))
    with pytest.raises(NumericError):
        gp_kernel_matrix([1.0, 1.0], cfg)
    with pytest.raises(DomainError):
        gp_kernel_matrix([], cfg)


def test_gp_prior_mean_fidelity():
    assert sigmoid(GPFidelityConfig().mean_m) == pytest.approx(1 / (1 + math.e), rel=1e-15)
    assert 0.26 < sigmoid(1.0) < 0.28


def test_logitgp_single_observation_reassembly():
    ds = gen_ode_data(seed=0).subset([2])
    prior = GaussianPrior([5.0], [[4.0]])
    cfg = GPFidelityConfig(1.0, 1.5, 0.5)
    x0, z = 4.9, -0.3
    prob = as_problem(ds, "euler")
    r = ds.ys[0] - prob.A[0, 0] * x0
    tau = 1 / (1 + math.exp(z))
    K = 1.5**2 * (1 + 1e-10)
    ref = (stats.norm.logpdf(x0, 5.0, 2.0) + stats.norm.logpdf(z, 1.0, math.sqrt(K))
           + 0.5 * math.log(tau) - tau * r * r / (2 * ds.noise_var))
    got = logitgp_joint_logpdf(prior, ds, cfg, [x0], [z])
    assert got == pytest.approx(ref, rel=1e-12)


def test_logitgp_target_batched():
    ds = gen_ode_data(seed=0).subset(np.arange(10))
    prior = GaussianPrior([5.0], [[100.0]])
    tgt = LogitGPTarget(prior, as_problem(ds, "exact"), GPFidelityConfig())
    g = np.random.default_rng(8)
    x0, z = g.normal(5, 0.1, (4, 1)), g.normal(1, 1, (4, 10))
    batch = tgt.logpdf(x0, z)
    np.testing.assert_allclose(batch, [tgt.logpdf(a, b) for a, b in zip(x0, z)], rtol=1e-13)
    ref = stats.multivariate_normal(np.ones(10), tgt.kernel).logpdf(z[0])
    assert tgt.gp_logpdf(z[0]) == pytest.approx(ref, rel=1e-9)


def test_example1_standard_posterior_is_biased():
    ds = gen_example1(seed=0)
    post = linreg_conjugate(GaussianPrior.isotropic(2), ds)
    assert post.mean[0] > 50.0
