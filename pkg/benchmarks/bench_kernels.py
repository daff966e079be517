"""Time the compiled kernels against their pure-numpy twins.

Each case runs once per backend (after a warm-up call that absorbs JIT
compilation) and checks that both backends return the same numbers.

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --repeat 5 --steps 50000
"""

import argparse
import time

import numpy as np

from fidsel import _accel, datasets, rng
from fidsel.posteriors import (
    BetaHyper,
    FidelityHyper,
    GaussianPrior,
    GPFidelityConfig,
    InvGammaHyper,
    PModelPosterior,
    as_problem,
    linreg_conjugate,
)
from fidsel.samplers import NO_ADAPT, mwg_fidelity, mwg_logitgp, mwg_npf
from fidsel.special import inverse_log_regularized_lower, log_gammainc_pair, truncated_gamma_from_uniforms


def build_cases(steps: int):
    g = np.random.default_rng(0)
    a = g.uniform(0.5, 30.0, 20000)
    x = g.uniform(0.01, 80.0, 20000)
    u = g.uniform(1e-12, 1.0, 20000)
    prior = GaussianPrior.isotropic(2)
    ex1 = as_problem(datasets.gen_example1(seed=0))
    ex3 = datasets.gen_example3(seed=0)
    pm = PModelPosterior(prior, ex3, BetaHyper(2.0, 50.0))
    grid = np.column_stack([g.uniform(-6, 6, 300), g.uniform(-6, 6, 300)])
    hyper = FidelityHyper(2.0, 2.0)
    theta0 = linreg_conjugate(prior, ex1).mean
    ode = datasets.gen_ode_data(seed=0)
    ode_prob = as_problem(ode, "euler")
    prior1 = GaussianPrior.isotropic(1)
    gp = GPFidelityConfig(1.0, 1.0, 0.5)
    z0 = np.zeros(len(ode))
    x0 = linreg_conjugate(prior1, ode_prob).mean

    return {
        "log_gammainc_pair (20k)": lambda: np.concatenate(log_gammainc_pair(a, x)),
        "inverse_log_regularized_lower (20k)": lambda: inverse_log_regularized_lower(a, np.log(u)),
        "truncated_gamma_from_uniforms (20k)": lambda: truncated_gamma_from_uniforms(a, x, u),
        "pmodel logpdf, N=21 (300 points)": lambda: pm.logpdf(grid),
        f"mwg_fidelity example1 ({steps} steps)": lambda: mwg_fidelity(
            ex1, prior, hyper, theta0, steps, 0.05, rng.stream(0, "bench"), adapt=NO_ADAPT).states,
        f"mwg_npf example1 ({steps} steps)": lambda: mwg_npf(
            ex1, prior, hyper, InvGammaHyper(100.0, 0.98), (theta0, np.full(len(ex1.y), 0.5)), steps,
            (0.05, 0.5), rng.stream(0, "bench"), adapt=NO_ADAPT).states,
        f"mwg_logitgp ode euler ({steps} steps)": lambda: mwg_logitgp(
            ode_prob, prior1, gp, (x0, z0), steps, NO_ADAPT, rng.stream(0, "bench"), scales=(1e-12, 0.1)).states,
    }


def timed(fn, repeat: int):
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--steps", type=int, default=20000)
    args = p.parse_args(argv)
    if not _accel.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    cases = build_cases(args.steps)
    print(f"{'kernel':44s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s}  same")
    saved = _accel.USE_NUMBA
    try:
        for name, fn in cases.items():
            _accel.USE_NUMBA = True
            fn()  # compile
            t_nb, r_nb = timed(fn, args.repeat)
            _accel.USE_NUMBA = False
            t_np, r_np = timed(fn, args.repeat)
            same = np.allclose(np.asarray(r_nb, dtype=float), np.asarray(r_np, dtype=float), rtol=1e-9, atol=0.0,
                               equal_nan=True)
            print(f"{name:44s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x  {'yes' if same else 'NO'}")
    finally:
        _accel.USE_NUMBA = saved


if __name__ == "__main__":
    main()
