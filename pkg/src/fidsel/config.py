"""Experiment configuration: a flat ``key = value`` record with validated defaults.

Dataset generator arguments are given with a ``data.`` prefix, e.g.
``data.noise_var = 0.01``; everything else maps onto a field of
:class:`ExperimentConfig`.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field, fields

from . import datasets
from .datasets import format_value, parse_value
from .errors import ConfigError, DomainError
from .posteriors import BetaHyper, FidelityHyper, GaussianPrior, GPFidelityConfig, InvGammaHyper

EXPERIMENTS = ("example1", "example2", "example3", "ode", "ode_gp", "curves")

GENERATORS = {
    "example1": datasets.gen_example1,
    "example2": datasets.gen_example2,
    "example3": datasets.gen_example3,
    "ode": datasets.gen_ode_data,
    "ode_gp": datasets.gen_ode_data,
}

_TUPLE_FIELDS = {"grid_a", "grid_b", "thresholds", "curve_alphas", "path_levels"}


@dataclass
class ExperimentConfig:
    experiment: str = "example1"
    seed: int = 0
    output_dir: str = "runs"
    data: dict = field(default_factory=dict)
    # priors
    prior_sd: float = 100.0
    p_alpha: float = 2.0
    p_beta: float = 50.0
    fid_alpha: float = 2.0
    fid_beta: float = 2.0
    iw_nu: float = 100.0
    iw_psi: float = 0.98
    gp_mean: float = 1.0
    gp_sigma: float = 1.0
    gp_lengthscale: float = 0.5
    gp_jitter: float | None = None
    # grids and histograms
    grid_n: int = 201
    grid_a: tuple | None = None
    grid_b: tuple | None = None
    hist_bins: int = 80
    # samplers and optimizer
    steps: int = 200_000
    burn_in: int | None = None
    thin: int = 10
    restarts: int = 20
    # ODE threshold workflow
    thresholds: tuple = (0.3, 0.25)
    # curve emitter
    curve_alphas: tuple = (1.0, 2.0, 5.0, 10.0, 50.0)
    mismatch_max: float = 8.0
    path_mean: float = 0.0
    path_var: float = 1.0
    path_y: float = 4.0
    path_noise_var: float = 1.0
    path_levels: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    svg: bool = True

    def __post_init__(self):
        self.validate()

    # -- derived records -------------------------------------------------

    @property
    def is_ode(self) -> bool:
        return self.experiment in ("ode", "ode_gp")

    @property
    def effective_burn_in(self) -> int:
        if self.burn_in is not None:
            return self.burn_in
        return 50_000 if self.is_ode else 20_000

    def theta_prior(self) -> GaussianPrior:
        return GaussianPrior.isotropic(1 if self.is_ode else 2, self.prior_sd)

    def beta_hyper(self) -> BetaHyper:
        return BetaHyper(self.p_alpha, self.p_beta)

    def fidelity_hyper(self) -> FidelityHyper:
        return FidelityHyper(self.fid_alpha, self.fid_beta)

    def invgamma_hyper(self) -> InvGammaHyper:
        return InvGammaHyper(self.iw_nu, self.iw_psi)

    def gp_config(self) -> GPFidelityConfig:
        return GPFidelityConfig(self.gp_mean, self.gp_sigma, self.gp_lengthscale, self.gp_jitter)

    # -- validation ------------------------------------------------------

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}",
                              "experiment")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("must be a non-negative integer", "seed")
        for name in ("grid_n", "hist_bins"):
            if int(getattr(self, name)) < 2:
                raise ConfigError("resolution must be at least 2", name)
        for name in ("steps", "thin", "restarts"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be at least 1", name)
        if self.burn_in is not None and self.burn_in < 0:
            raise ConfigError("must be non-negative", "burn_in")
        for name in ("grid_a", "grid_b"):
            rng = getattr(self, name)
            if rng is not None and (len(rng) != 2 or not rng[0] < rng[1]):
                raise ConfigError("range must be two increasing numbers", name)
        for t in self.thresholds:
            if not 0.0 <= t < 1.0:
                raise ConfigError("thresholds must lie in [0, 1)", "thresholds")
        for p in self.path_levels:
            if not 0.0 <= p <= 1.0:
                raise ConfigError("path levels must lie in [0, 1]", "path_levels")
        if not self.mismatch_max > 0:
            raise ConfigError("must be positive", "mismatch_max")
        for name in ("path_var", "path_noise_var"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", name)
        checks = [
            ("prior_sd", lambda: self.theta_prior()),
            ("p_alpha", lambda: self.beta_hyper()),
            ("fid_alpha", lambda: self.fidelity_hyper()),
            ("iw_nu", lambda: self.invgamma_hyper()),
            ("gp_sigma", lambda: self.gp_config()),
        ]
        if any(a <= 0 for a in self.curve_alphas):
            raise ConfigError("curve alphas must be positive", "curve_alphas")
        for name, build in checks:
            try:
                build()
            except DomainError as exc:
                raise ConfigError(str(exc), name) from None
        self._check_data()

    def _check_data(self):
        gen = GENERATORS.get(self.experiment)
        if gen is None:
            if self.data:
                raise ConfigError("this experiment takes no dataset parameters", "data")
            return
        allowed = set(inspect.signature(gen).parameters) - {"seed"}
        for key in self.data:
            if key not in allowed:
                raise ConfigError(f"unknown dataset parameter; expected one of {sorted(allowed)}", f"data.{key}")

    # -- (de)serialization -----------------------------------------------

    def to_meta(self) -> dict:
        """Flat, ordered header dictionary for output files."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "data":
                for k in sorted(v):
                    out[f"data.{k}"] = v[k]
            elif isinstance(v, tuple):
                out[f.name] = " ".join(format_value(float(x)) for x in v)
            elif v is None:
                out[f.name] = "none"
            else:
                out[f.name] = v
        return out

    def dump(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.to_meta().items())


def _coerce(name: str, raw, default):
    if isinstance(raw, str):
        raw = raw.strip()
        if raw.lower() in ("none", ""):
            return None
    if name in _TUPLE_FIELDS:
        parts = raw.replace(",", " ").split() if isinstance(raw, str) else list(raw)
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"expected a list of numbers, got {raw!r}", name) from None
    value = parse_value(raw) if isinstance(raw, str) else raw
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true or false, got {raw!r}", name)
        return value
    if isinstance(default, int) or name == "burn_in":
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"expected an integer, got {raw!r}", name)
        return value
    if isinstance(default, float) or name == "gp_jitter":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {raw!r}", name)
        return float(value)
    return value if isinstance(value, str) else str(raw)


def config_from_mapping(values: dict) -> ExperimentConfig:
    """Build a config from string or typed values; unknown keys are errors."""
    defaults = {f.name: f.default for f in fields(ExperimentConfig) if f.name != "data"}
    kwargs, data = {}, {}
    for key, raw in values.items():
        key = key.strip()
        if key.startswith("data."):
            val = parse_value(raw) if isinstance(raw, str) else raw
            data[key[5:]] = val
            continue
        if key not in defaults:
            raise ConfigError("unknown configuration key", key)
        kwargs[key] = _coerce(key, raw, defaults[key])
    return ExperimentConfig(data=data, **kwargs)


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value", key.strip() or None)
        values[key.strip()] = val.strip()
    return config_from_mapping(values)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config_text(fh.read())
