"""End-to-end experiment runs: regression examples, ODE inverse problem, curves.

Every run is a pure function of its :class:`~fidsel.config.ExperimentConfig`:
datasets, optimizer restarts and chains draw from named streams keyed by
the config seed, and all files are written in a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .config import GENERATORS, ExperimentConfig
from .datasets import OdeDataset, RegressionDataset, save_dataset
from .errors import DomainError, EmptySelectionError, NumericError
from .optim import MapResult, cluster_basins, laplace_log_mass, map_estimate
from .output import (
    FidelityProfile,
    PosteriorGrid,
    heatmap_svg,
    lines_svg,
    write_csv,
    write_grid,
    write_profiles,
    write_summary,
)
from .posteriors import (
    GaussianPrior,
    LogitGPTarget,
    PModelPosterior,
    as_problem,
    fidelity_loglik_terms,
    fidelity_marginal_logpdf,
    linreg_conjugate,
    npf_joint_logpdf,
    standard_logpdf,
)
from .samplers import AdaptConfig, Chain, mwg_fidelity, mwg_logitgp, mwg_npf
from .special import TruncatedGammaParams, cholesky_lower, sigmoid

METHODS = ("standard", "pmodel", "fidelity", "npf")
SELECTION_METHODS = METHODS[1:]
BASIN_RADIUS = 0.5
# basins lower than this fraction of the best peak are not reported as modes
BASIN_REL_HEIGHT = 0.05
WELL_FIT_SIGMAS = 3.0
GRID_SDS = 6.0


def make_dataset(cfg: ExperimentConfig):
    gen = GENERATORS.get(cfg.experiment)
    if gen is None:
        raise DomainError(f"experiment {cfg.experiment!r} has no dataset")
    return gen(seed=cfg.seed, **cfg.data)


# --------------------------------------------------------------------------
# regression: MAP search
# --------------------------------------------------------------------------


def pair_line_starts(ds: RegressionDataset, gap: int = 5) -> np.ndarray:
    """Lines through observation pairs ``gap`` apart; each fits some subset exactly."""
    xs, ys = ds.xs, ds.ys
    out = []
    for i in range(len(xs) - gap):
        j = i + gap
        a = (ys[j] - ys[i]) / (xs[j] - xs[i])
        out.append([a, ys[i] - a * xs[i]])
    return np.array(out).reshape(-1, 2)


def npf_target(prior, prob, hyper, iw):
    """Batched joint NPF log-density over (theta, z) with gamma = T^{-1}(z)."""
    p = prob.dim

    def f(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return npf_joint_logpdf(prior, prob, hyper, iw, X[:, :p], sigmoid(X[:, p:]))

    return f


def npf_conditional_start(target, theta, n_obs):
    """(theta, z) with z at its conditional mode given theta."""
    theta = np.asarray(theta, dtype=float)

    def inner(Z):
        Z = np.atleast_2d(Z)
        return target(np.hstack([np.broadcast_to(theta, (Z.shape[0], theta.size)), Z]))

    r = map_estimate(None, n_obs, 0, None, extra_starts=np.zeros((1, n_obs)), batch_target=inner)
    return np.concatenate([theta, r.x])


@dataclass
class RegressionMaps:
    standard: np.ndarray
    standard_value: float
    results: dict  # method -> MapResult (npf in (theta, z) coordinates)
    basins: dict  # method -> list[Basin] in theta space

    def best(self, method) -> np.ndarray:
        if method == "standard":
            return self.standard
        return self.results[method].x[:2]


def method_basins(result: MapResult, radius=BASIN_RADIUS, rel_height=BASIN_REL_HEIGHT):
    return cluster_basins(result.terminals[:, :2], result.terminal_values, radius, rel_height)


def regression_maps(ds: RegressionDataset, cfg: ExperimentConfig, methods=SELECTION_METHODS) -> RegressionMaps:
    """Restarted BFGS on every selection posterior from a shared set of starts.

    Starts are ``cfg.restarts`` prior draws plus lines through observation
    pairs; the NPF starts put z at its conditional mode given each theta.
    """
    prior = cfg.theta_prior()
    prob = as_problem(ds)
    conj = linreg_conjugate(prior, prob)
    gen = rngmod.stream(cfg.seed, "map:starts")
    starts = np.vstack([pair_line_starts(ds), prior.sample(gen, cfg.restarts)])
    hyper = cfg.fidelity_hyper()
    results = {}
    if "pmodel" in methods:
        pm = PModelPosterior(prior, prob, cfg.beta_hyper())
        peaks, _ = pm.component_peaks(8)
        results["pmodel"] = map_estimate(None, 2, 0, None, extra_starts=np.vstack([peaks, starts]),
                                         batch_target=pm.logpdf)
    if "fidelity" in methods:
        results["fidelity"] = map_estimate(
            None, 2, 0, None, extra_starts=starts,
            batch_target=lambda X: fidelity_marginal_logpdf(prior, prob, hyper, X))
    if "npf" in methods:
        f = npf_target(prior, prob, hyper, cfg.invgamma_hyper())
        full = np.array([npf_conditional_start(f, s, prob.n_obs) for s in starts])
        results["npf"] = map_estimate(None, 2 + prob.n_obs, 0, None, extra_starts=full, batch_target=f)
    basins = {m: method_basins(r) for m, r in results.items()}
    return RegressionMaps(conj.mean.copy(), float(standard_logpdf(prior, prob, conj.mean)), results, basins)


def regime_peak_ratio(basins, regime_a=(4.0, -4.0), regime_b=(-4.0, 4.0)):
    """Density ratio of the basin nearest ``regime_a`` to the one nearest ``regime_b``."""
    if len(basins) < 2:
        return math.nan
    ca = min(basins, key=lambda b: np.linalg.norm(b.center - regime_a))
    cb = min(basins, key=lambda b: np.linalg.norm(b.center - regime_b))
    if ca is cb:
        return math.nan
    return math.exp(ca.value - cb.value)


# --------------------------------------------------------------------------
# regression: grids and chains
# --------------------------------------------------------------------------


def well_fit_posterior(prior, prob, theta, sigmas=WELL_FIT_SIGMAS):
    """Conjugate posterior on the observations within ``sigmas`` noise sds of theta."""
    keep = np.abs(prob.residuals(np.asarray(theta, dtype=float))) <= sigmas * math.sqrt(prob.noise_var)
    return linreg_conjugate(prior, prob, mask=keep)


def _axes(centers, sd, n, override_a=None, override_b=None):
    centers = np.atleast_2d(centers)
    lo = centers.min(axis=0) - GRID_SDS * sd
    hi = centers.max(axis=0) + GRID_SDS * sd
    a = np.linspace(*(override_a or (lo[0], hi[0])), n)
    b = np.linspace(*(override_b or (lo[1], hi[1])), n)
    return a, b


def _mesh(a, b):
    A, B = np.meshgrid(a, b, indexing="ij")
    return np.column_stack([A.ravel(), B.ravel()])


def evaluate_grid(batch_logpdf, a, b, normalized: bool, chunk: int = 4096) -> PosteriorGrid:
    pts = _mesh(a, b)
    vals = np.concatenate([np.atleast_1d(batch_logpdf(pts[i:i + chunk])) for i in range(0, len(pts), chunk)])
    vals = vals.reshape(a.size, b.size)
    offset = 0.0
    if not normalized:
        offset = float(vals.max())
        vals = vals - offset
    return PosteriorGrid(a, b, vals, normalized, offset)


def histogram_grid(samples, a_range, b_range, bins) -> PosteriorGrid:
    """Log of a normalized 2-D histogram; empty cells get half a count."""
    H, ea, eb = np.histogram2d(samples[:, 0], samples[:, 1], bins=bins, range=[a_range, b_range])
    area = (ea[1] - ea[0]) * (eb[1] - eb[0])
    n = max(samples.shape[0], 1)
    floor = 0.5 / (n * area)
    dens = np.maximum(H / (n * area), floor)
    grid = PosteriorGrid(0.5 * (ea[1:] + ea[:-1]), 0.5 * (eb[1:] + eb[:-1]), np.log(dens), False, 0.0)
    grid.meta.update(kind="histogram", empty_floor=float(np.log(floor)), samples=n)
    return grid


def _theta_chol(prior, prob, theta):
    return cholesky_lower(well_fit_posterior(prior, prob, theta).cov)


@dataclass
class RegressionResult:
    dataset: RegressionDataset
    maps: RegressionMaps
    grids: dict
    chains: dict
    profiles: list
    summary: dict
    files: list = field(default_factory=list)


def regression_chains(ds, cfg: ExperimentConfig, maps: RegressionMaps) -> dict:
    prior = cfg.theta_prior()
    prob = as_problem(ds)
    adapt = AdaptConfig(burn_in=cfg.effective_burn_in)
    hyper = cfg.fidelity_hyper()
    th_f = maps.results["fidelity"].x
    chains = {"fidelity": mwg_fidelity(prob, prior, hyper, th_f, cfg.steps, 1.0,
                                       rngmod.stream(cfg.seed, "chain:fidelity"), adapt=adapt,
                                       thin=cfg.thin, proposal_chol=_theta_chol(prior, prob, th_f))}
    x_n = maps.results["npf"].x
    gam = np.clip(sigmoid(x_n[2:]), 1e-6, 1.0 - 1e-6)
    chains["npf"] = mwg_npf(prob, prior, hyper, cfg.invgamma_hyper(), (x_n[:2], gam), cfg.steps, (1.0, 0.5),
                            rngmod.stream(cfg.seed, "chain:npf"), adapt=adapt, thin=cfg.thin,
                            proposal_chol=_theta_chol(prior, prob, x_n[:2]))
    for ch in chains.values():
        ch.seed = cfg.seed
    return chains


def fidelity_references(hyper, obs_dim: int = 1):
    """(prior mean, largest attainable posterior mean) of one fidelity parameter."""
    prior_mean = TruncatedGammaParams(hyper.alpha, hyper.beta).mean()
    max_mean = TruncatedGammaParams(hyper.alpha + 0.5 * obs_dim, hyper.beta).mean()
    return prior_mean, max_mean


def run_regression_experiment(cfg: ExperimentConfig, out_dir=None) -> RegressionResult:
    """Standard, p-model, fidelity and NPF posteriors for one regression example."""
    ds = make_dataset(cfg)
    prior = cfg.theta_prior()
    prob = as_problem(ds)
    maps = regression_maps(ds, cfg)
    conj = linreg_conjugate(prior, prob)

    grids = {}
    a, b = _axes(conj.mean, conj.sd, cfg.grid_n, cfg.grid_a, cfg.grid_b)
    grids["standard"] = evaluate_grid(lambda X: standard_logpdf(prior, prob, X), a, b, normalized=True)

    centers = {m: np.array([bs.center for bs in maps.basins[m]]) for m in SELECTION_METHODS}
    sds = {m: np.max([well_fit_posterior(prior, prob, c).sd for c in centers[m]], axis=0)
           for m in SELECTION_METHODS}
    pm = PModelPosterior(prior, prob, cfg.beta_hyper())
    a, b = _axes(centers["pmodel"], sds["pmodel"], cfg.grid_n, cfg.grid_a, cfg.grid_b)
    grids["pmodel"] = evaluate_grid(pm.logpdf, a, b, normalized=True)
    hyper = cfg.fidelity_hyper()
    a, b = _axes(centers["fidelity"], sds["fidelity"], cfg.grid_n, cfg.grid_a, cfg.grid_b)
    grids["fidelity"] = evaluate_grid(lambda X: fidelity_marginal_logpdf(prior, prob, hyper, X), a, b,
                                      normalized=False)

    chains = regression_chains(ds, cfg, maps)
    a, b = _axes(centers["npf"], sds["npf"], 2, cfg.grid_a, cfg.grid_b)
    grids["npf"] = histogram_grid(chains["npf"].states[:, :2], (a[0], a[-1]), (b[0], b[-1]), cfg.hist_bins)

    prior_mean, max_mean = fidelity_references(hyper)
    profiles = [
        FidelityProfile(ds.xs, np.clip(chains["fidelity"].extras["fidelity_mean"], 0.0, 1.0), prior_mean, max_mean,
                        "fidelity"),
        FidelityProfile(ds.xs, np.clip(chains["npf"].extras["fidelity_mean"], 0.0, 1.0), prior_mean, max_mean,
                        "npf"),
    ]

    summary = {"experiment": cfg.experiment, "seed": cfg.seed, "n_obs": len(ds)}
    summary["standard_a"], summary["standard_b"] = (float(v) for v in maps.standard)
    for m in SELECTION_METHODS:
        x = maps.best(m)
        summary[f"{m}_a"], summary[f"{m}_b"] = float(x[0]), float(x[1])
        summary[f"{m}_basins"] = len(maps.basins[m])
        if cfg.experiment == "example3":
            summary[f"{m}_peak_ratio"] = regime_peak_ratio(maps.basins[m])
    for name, ch in chains.items():
        for block in ch.tuning:
            summary[f"{name}_accept_{block}"] = ch.acceptance(block)
    res = RegressionResult(ds, maps, grids, chains, profiles, summary)
    if out_dir is not None:
        res.files = _write_regression(res, cfg, Path(out_dir))
    return res


def _map_rows(maps: RegressionMaps):
    rows = [("standard", 1, maps.standard[0], maps.standard[1], maps.standard_value, 1)]
    for m in SELECTION_METHODS:
        for k, bs in enumerate(maps.basins[m], 1):
            rows.append((m, k, bs.center[0], bs.center[1], bs.value, bs.count))
    return rows


def _write_regression(res: RegressionResult, cfg: ExperimentConfig, out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    meta = cfg.to_meta()
    files = [save_dataset(res.dataset, out / "dataset.csv")]
    for name, grid in res.grids.items():
        files.append(write_grid(out / f"grid_{name}.csv", grid, meta))
    for name, ch in res.chains.items():
        files.append(ch.save(out / f"chain_{name}.csv", meta))
    files.append(write_csv(out / "map_table.csv", ["method", "rank", "a", "b", "logpdf", "count"],
                           _map_rows(res.maps), meta))
    files.append(write_profiles(out / "fidelity_profile.csv", res.profiles, meta))
    files.append(write_summary(out / "summary.txt", res.summary))
    if cfg.svg:
        for name, grid in res.grids.items():
            files.append(heatmap_svg(out / f"grid_{name}.svg", grid, f"{cfg.experiment}: {name}"))
        files.append(lines_svg(out / "fidelity_profile.svg", res.dataset.xs,
                               {p.label: p.means for p in res.profiles}, "fidelity means", "x", "mean",
                               {"prior mean": res.profiles[0].prior_mean}, points=True))
    return files


# --------------------------------------------------------------------------
# ODE with independent fidelity priors
# --------------------------------------------------------------------------


@dataclass
class Mode:
    x: np.ndarray
    value: float
    log_mass: float
    sd: np.ndarray


def fidelity_modes(prior: GaussianPrior, prob, hyper, obs_dim: int = 1) -> list:
    """Local maxima of the 1-parameter fidelity marginal, ranked by Laplace mass.

    With an inexact operator the posterior is a comb of narrow spikes, one
    wherever a single observation is matched exactly, so every y_i / g_i is
    a start.  The spike holding the most mass need not be the highest one.
    """
    if prob.dim != 1:
        raise DomainError("fidelity_modes handles one-parameter problems")
    f = lambda X: fidelity_marginal_logpdf(prior, prob, hyper, X, obs_dim)  # noqa: E731
    conj = linreg_conjugate(prior, prob)
    g = prob.A[:, 0]
    nz = g != 0
    sig = math.sqrt(prob.noise_var)
    starts = [(prob.y[i] / g[i], sig / abs(g[i])) for i in np.flatnonzero(nz)]
    starts.append((float(conj.mean[0]), float(conj.sd[0])))
    found = []
    for x, w in starts:
        # re-run BFGS in units of the local width until the point stops moving
        for _ in range(4):
            r = map_estimate(None, 1, 0, None, extra_starts=[[x]], batch_target=f, center=[x], scale=[w])
            lm, cov = laplace_log_mass(f, r.x, r.value, w)
            if cov is None:
                break
            moved = abs(r.x[0] - x)
            x, w = float(r.x[0]), math.sqrt(cov[0, 0])
            if moved < w:
                break
        if cov is None:
            continue
        lm, cov = laplace_log_mass(f, r.x, r.value, w)
        if cov is not None:
            found.append(Mode(r.x.copy(), r.value, lm, np.sqrt(np.diag(cov))))
    if not found:
        raise NumericError("no local maximum with negative curvature was found")
    found.sort(key=lambda m: (-m.log_mass, -m.value))
    modes: list[Mode] = []
    for m in found:
        if not any(abs(m.x[0] - k.x[0]) < 3.0 * max(k.sd[0], m.sd[0]) for k in modes):
            modes.append(m)
    return modes


def mixture_mean(modes) -> float:
    """Posterior mean of the Laplace mixture over all modes (weights by mass)."""
    lm = np.array([m.log_mass for m in modes])
    w = np.exp(lm - lm.max())
    return float(np.sum(w * np.array([m.x[0] for m in modes])) / w.sum())


@dataclass
class OdeRun:
    operator: str
    standard_mean: float
    standard_var: float
    chain: Chain
    modes: list
    profile: FidelityProfile

    @property
    def x0(self) -> np.ndarray:
        return self.chain.states[:, 0]

    @property
    def mean(self) -> float:
        return float(self.x0.mean())

    @property
    def var(self) -> float:
        return float(self.x0.var())


def _ode_thin(cfg):
    return cfg.thin * 10


def ode_selection_run(ds: OdeDataset, cfg: ExperimentConfig, operator: str) -> OdeRun:
    prior = cfg.theta_prior()
    prob = as_problem(ds, operator)
    hyper = cfg.fidelity_hyper()
    conj = linreg_conjugate(prior, prob)
    modes = fidelity_modes(prior, prob, hyper)
    best = modes[0]
    chain = mwg_fidelity(prob, prior, hyper, best.x, cfg.steps, float(best.sd[0]),
                         rngmod.stream(cfg.seed, f"chain:fidelity:{operator}"),
                         adapt=AdaptConfig(burn_in=cfg.effective_burn_in), thin=_ode_thin(cfg))
    chain.seed = cfg.seed
    prior_mean, max_mean = fidelity_references(hyper)
    profile = FidelityProfile(ds.obs_times, np.clip(chain.extras["fidelity_mean"], 0.0, 1.0), prior_mean, max_mean,
                              f"independent-{operator}")
    return OdeRun(operator, float(conj.mean[0]), float(conj.cov[0, 0]), chain, modes, profile)


def _x0_histogram(x, bins):
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        hi = lo + max(abs(lo) * 1e-15, 1e-300)
    H, e = np.histogram(x, bins=bins, range=(lo, hi))
    dens = H / (x.size * (e[1] - e[0]))
    return 0.5 * (e[1:] + e[:-1]), dens


def _gauss_curve(mean, var, n):
    sd = math.sqrt(var)
    x = mean + sd * np.linspace(-GRID_SDS, GRID_SDS, n)
    return x, np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))


@dataclass
class OdeResult:
    dataset: OdeDataset
    runs: dict
    summary: dict
    extra: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


def run_ode_experiment(cfg: ExperimentConfig, out_dir=None) -> OdeResult:
    """Exact and Euler operators, each with and without data selection."""
    ds = make_dataset(cfg)
    runs = {op: ode_selection_run(ds, cfg, op) for op in ("exact", "euler")}
    summary = {"experiment": cfg.experiment, "seed": cfg.seed, "n_obs": len(ds)}
    for op, r in runs.items():
        summary[f"{op}_standard_mean"] = r.standard_mean
        summary[f"{op}_standard_var"] = r.standard_var
        summary[f"{op}_selection_mean"] = r.mean
        summary[f"{op}_selection_var"] = r.var
        summary[f"{op}_var_ratio"] = r.var / r.standard_var
        summary[f"{op}_start_mode"] = float(r.modes[0].x[0])
        summary[f"{op}_modes"] = len(r.modes)
        summary[f"{op}_mixture_mean"] = mixture_mean(r.modes)
        summary[f"{op}_accept"] = r.chain.acceptance("theta")
    res = OdeResult(ds, runs, summary)
    if out_dir is not None:
        res.files = _write_ode(res, cfg, Path(out_dir))
    return res


def _write_ode_common(res, cfg, out: Path, runs: dict, tag: str) -> list:
    meta = cfg.to_meta()
    files = []
    for op, r in runs.items():
        files.append(r.chain.save(out / f"chain_{tag}_{op}.csv", meta))
        xc, dens = _x0_histogram(r.x0, cfg.hist_bins)
        files.append(write_csv(out / f"posterior_x0_{tag}_{op}.csv", ["x0", "density"], zip(xc, dens), meta))
        if cfg.svg:
            files.append(lines_svg(out / f"posterior_x0_{tag}_{op}.svg", xc, {tag: dens},
                                   f"x0 posterior, {op} operator", "x0", "density"))
    return files


def _write_ode(res: OdeResult, cfg: ExperimentConfig, out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    meta = cfg.to_meta()
    files = [save_dataset(res.dataset, out / "dataset.csv")]
    files += _write_ode_common(res, cfg, out, res.runs, "fidelity")
    for op, r in res.runs.items():
        xs, dens = _gauss_curve(r.standard_mean, r.standard_var, cfg.grid_n)
        files.append(write_csv(out / f"posterior_x0_standard_{op}.csv", ["x0", "density"], zip(xs, dens), meta))
    files.append(write_profiles(out / "fidelity_profile.csv", [r.profile for r in res.runs.values()], meta))
    files.append(write_summary(out / "summary.txt", res.summary))
    if cfg.svg:
        p = [r.profile for r in res.runs.values()]
        files.append(lines_svg(out / "fidelity_profile.svg", res.dataset.obs_times, {q.label: q.means for q in p},
                               "fidelity means", "t", "mean",
                               {"prior mean": p[0].prior_mean, "max mean": p[0].max_mean}, points=True))
    return files


# --------------------------------------------------------------------------
# ODE with the logit-GP fidelity field, and the threshold workflow
# --------------------------------------------------------------------------


def threshold_truncate(profile: FidelityProfile, dataset, threshold: float):
    """Keep the observations whose fidelity mean exceeds ``threshold``.

    Observations are matched to the profile by location, so truncating an
    already truncated dataset with the same profile changes nothing.
    """
    if not 0.0 <= threshold < 1.0:
        raise DomainError("threshold must lie in [0, 1)")
    locs = np.asarray(dataset.locations, dtype=float)
    pos = {float(v): i for i, v in enumerate(profile.locations)}
    try:
        idx = np.array([pos[float(v)] for v in locs], dtype=np.int64)
    except KeyError as exc:
        raise DomainError(f"location {exc.args[0]!r} is missing from the fidelity profile") from None
    keep = profile.means[idx] > threshold if idx.size else np.zeros(0, dtype=bool)
    if not np.any(keep):
        raise EmptySelectionError(f"no observation has fidelity mean above {threshold}")
    out = dataset.subset(keep)
    out.meta = dict(out.meta, threshold=float(threshold), kept=int(keep.sum()))
    return out


def gp_conditional_z(target: LogitGPTarget, x0) -> np.ndarray:
    """Mode of the GP field given x0 (BFGS from the prior mean)."""
    n = target.problem.n_obs
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    m = target.cfg.mean_m

    def f(Z):
        Z = np.atleast_2d(Z)
        return target.logpdf(np.repeat(x0.reshape(1, -1), Z.shape[0], axis=0), Z)

    # the likelihood alone puts tau_i near 1 / (2 m_i); start there, clipped to the prior mean
    mis = 0.5 * target.problem.residuals(x0.reshape(1, -1))[0] ** 2 / target.problem.noise_var
    with np.errstate(divide="ignore"):
        z0 = np.maximum(m, np.log(np.maximum(2.0 * mis, 1e-300)))
    r = map_estimate(None, n, 0, None, extra_starts=np.vstack([z0, np.full(n, m)]), batch_target=f)
    return r.x


def gp_selection_run(ds: OdeDataset, cfg: ExperimentConfig, operator: str, stream: str) -> OdeRun:
    prior = cfg.theta_prior()
    prob = as_problem(ds, operator)
    gp = cfg.gp_config()
    conj = linreg_conjugate(prior, prob)
    tgt = LogitGPTarget(prior, prob, gp)
    x0 = conj.mean
    z0 = gp_conditional_z(tgt, x0)
    chain = mwg_logitgp(prob, prior, gp, (x0, z0), cfg.steps, AdaptConfig(burn_in=cfg.effective_burn_in),
                        rngmod.stream(cfg.seed, stream), scales=(float(conj.sd[0]), 0.1), thin=_ode_thin(cfg),
                        operator=operator)
    chain.seed = cfg.seed
    hyper = cfg.fidelity_hyper()
    profile = FidelityProfile(ds.obs_times, np.clip(chain.extras["fidelity_mean"], 0.0, 1.0),
                              float(sigmoid(gp.mean_m)), fidelity_references(hyper)[1], f"gp-{operator}")
    return OdeRun(operator, float(conj.mean[0]), float(conj.cov[0, 0]), chain, [], profile)


def run_ode_gp_experiment(cfg: ExperimentConfig, out_dir=None) -> OdeResult:
    """Logit-GP fidelity runs for both operators plus the threshold comparison.

    For each threshold the Euler-operator dataset is truncated to the
    observations whose GP fidelity mean exceeds it, and the posterior on the
    truncated data is recomputed with and without selection.  The gap between
    the two means is reported in units of the no-selection posterior sd.
    """
    ds = make_dataset(cfg)
    runs = {op: gp_selection_run(ds, cfg, op, f"chain:gp:{op}") for op in ("exact", "euler")}
    summary = {"experiment": cfg.experiment, "seed": cfg.seed, "n_obs": len(ds)}
    for op, r in runs.items():
        summary[f"{op}_standard_mean"] = r.standard_mean
        summary[f"{op}_standard_var"] = r.standard_var
        summary[f"{op}_selection_mean"] = r.mean
        summary[f"{op}_selection_var"] = r.var
        summary[f"{op}_accept_x0"] = r.chain.acceptance("x0")
        summary[f"{op}_accept_z"] = r.chain.acceptance("z")
    profile = runs["euler"].profile
    truncated = {}
    prior = cfg.theta_prior()
    for thr in cfg.thresholds:
        key = f"{thr:g}"
        try:
            sub = threshold_truncate(profile, ds, thr)
        except EmptySelectionError:
            summary[f"threshold_{key}_kept"] = 0
            continue
        conj = linreg_conjugate(prior, as_problem(sub, "euler"))
        run = gp_selection_run(sub, cfg, "euler", f"chain:gp:threshold:{key}")
        sd = math.sqrt(conj.cov[0, 0])
        summary[f"threshold_{key}_kept"] = len(sub)
        summary[f"threshold_{key}_last_time"] = float(sub.obs_times.max())
        summary[f"threshold_{key}_standard_mean"] = float(conj.mean[0])
        summary[f"threshold_{key}_standard_sd"] = sd
        summary[f"threshold_{key}_selection_mean"] = run.mean
        summary[f"threshold_{key}_selection_sd"] = math.sqrt(run.var)
        summary[f"threshold_{key}_gap_sd"] = abs(run.mean - float(conj.mean[0])) / sd
        truncated[key] = (sub, run)
    res = OdeResult(ds, runs, summary, {"truncated": truncated})
    if out_dir is not None:
        res.files = _write_ode_gp(res, cfg, Path(out_dir))
    return res


def _write_ode_gp(res: OdeResult, cfg: ExperimentConfig, out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    meta = cfg.to_meta()
    files = [save_dataset(res.dataset, out / "dataset.csv")]
    files += _write_ode_common(res, cfg, out, res.runs, "gp")
    files.append(write_profiles(out / "fidelity_profile.csv", [r.profile for r in res.runs.values()], meta))
    for key, (sub, run) in res.extra["truncated"].items():
        files.append(save_dataset(sub, out / f"dataset_threshold_{key}.csv"))
        files.append(run.chain.save(out / f"chain_gp_threshold_{key}.csv", meta))
    files.append(write_summary(out / "summary.txt", res.summary))
    if cfg.svg:
        p = [r.profile for r in res.runs.values()]
        files.append(lines_svg(out / "fidelity_profile.svg", res.dataset.obs_times, {q.label: q.means for q in p},
                               "logit-GP fidelity means", "t", "mean",
                               {f"threshold {t:g}": t for t in cfg.thresholds}))
    return files


# --------------------------------------------------------------------------
# likelihood and path curves
# --------------------------------------------------------------------------


def fidelity_likelihood_curves(alphas, beta, mismatch, obs_dim: int = 1) -> dict:
    """Single-observation likelihoods vs whitened mismatch, each 1 at zero."""
    from .posteriors import FidelityHyper

    s = np.asarray(mismatch, dtype=float)
    m = 0.5 * s * s
    out = {"gaussian": np.exp(-m)}
    for a in alphas:
        h = FidelityHyper(float(a), float(beta))
        terms = fidelity_loglik_terms(m, h, obs_dim)
        out[f"alpha_{a:g}"] = np.exp(terms - fidelity_loglik_terms(0.0, h, obs_dim))
    return out


def fidelity_prior_curves(alphas, beta, tau) -> dict:
    tau = np.asarray(tau, dtype=float)
    return {f"alpha_{a:g}": np.exp(TruncatedGammaParams(float(a), float(beta)).logpdf(tau)) for a in alphas}


def path_curves(theta, mean0, var0, y, noise_var, levels) -> dict:
    """p-path and fidelity path between a leave-one-out Gaussian and its update by y.

    The p-path mixes the two endpoint densities; the fidelity path tempers the
    likelihood of y by tau, which moves a Gaussian between the endpoints.
    """
    theta = np.asarray(theta, dtype=float)

    def npdf(mu, var):
        return np.exp(-0.5 * (theta - mu) ** 2 / var) / math.sqrt(2.0 * math.pi * var)

    loo = npdf(mean0, var0)
    prec1 = 1.0 / var0 + 1.0 / noise_var
    full = npdf((mean0 / var0 + y / noise_var) / prec1, 1.0 / prec1)
    out = {}
    for p in levels:
        out[f"p_{p:g}"] = p * full + (1.0 - p) * loo
    for t in levels:
        prec = 1.0 / var0 + t / noise_var
        out[f"tau_{t:g}"] = npdf((mean0 / var0 + t * y / noise_var) / prec, 1.0 / prec)
    return out


@dataclass
class CurvesResult:
    likelihood: dict
    prior: dict
    paths: dict
    files: list = field(default_factory=list)


def emit_curves(cfg: ExperimentConfig, out_dir=None) -> CurvesResult:
    s = np.linspace(0.0, cfg.mismatch_max, cfg.grid_n)
    lik = fidelity_likelihood_curves(cfg.curve_alphas, cfg.fid_beta, s)
    tau = np.linspace(0.0, 1.0, cfg.grid_n)
    pri = fidelity_prior_curves(cfg.curve_alphas, cfg.fid_beta, tau)
    prec1 = 1.0 / cfg.path_var + 1.0 / cfg.path_noise_var
    mu1 = (cfg.path_mean / cfg.path_var + cfg.path_y / cfg.path_noise_var) / prec1
    lo = min(cfg.path_mean - 4.0 * math.sqrt(cfg.path_var), mu1 - 4.0 / math.sqrt(prec1))
    hi = max(cfg.path_mean + 4.0 * math.sqrt(cfg.path_var), mu1 + 4.0 / math.sqrt(prec1))
    theta = np.linspace(lo, hi, cfg.grid_n)
    paths = path_curves(theta, cfg.path_mean, cfg.path_var, cfg.path_y, cfg.path_noise_var, cfg.path_levels)
    res = CurvesResult({"mismatch": s, **lik}, {"tau": tau, **pri}, {"theta": theta, **paths})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = cfg.to_meta()
        for name, table in (("fidelity_likelihood", res.likelihood), ("fidelity_prior", res.prior),
                            ("paths", res.paths)):
            cols = list(table)
            res.files.append(write_csv(out / f"{name}.csv", cols, zip(*table.values()), meta))
            if cfg.svg:
                x = table[cols[0]]
                res.files.append(lines_svg(out / f"{name}.svg", x, {k: table[k] for k in cols[1:]}, name,
                                           cols[0], "value"))
    return res


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Dispatch on ``cfg.experiment``; ``out_dir`` defaults to ``cfg.output_dir``."""
    out_dir = cfg.output_dir if out_dir is None else out_dir
    if cfg.experiment in ("example1", "example2", "example3"):
        return run_regression_experiment(cfg, out_dir)
    if cfg.experiment == "ode":
        return run_ode_experiment(cfg, out_dir)
    if cfg.experiment == "ode_gp":
        return run_ode_gp_experiment(cfg, out_dir)
    return emit_curves(cfg, out_dir)
