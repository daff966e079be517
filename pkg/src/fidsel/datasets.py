"""Synthetic data for the regression and ODE experiments, plus file I/O.

Files are plain text: ``# key=value`` header lines followed by a CSV table
``x,y,label``.  Floats are written with ``repr`` (shortest round-trip form),
so save/load is bit exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import DomainError
from .models import ode_exact


@dataclass
class RegressionDataset:
    xs: np.ndarray
    ys: np.ndarray
    assumed_noise_var: float
    labels: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if self.xs.shape != self.ys.shape:
            raise DomainError("xs and ys must have equal length")
        if self.xs.size > 1 and np.any(np.diff(self.xs) <= 0):
            raise DomainError("xs must be strictly increasing")
        if not self.assumed_noise_var > 0:
            raise DomainError("assumed noise variance must be positive")
        if self.labels is not None and len(self.labels) != self.xs.size:
            raise DomainError("one label per observation required")

    def __len__(self):
        return self.xs.size

    @property
    def locations(self):
        return self.xs

    def subset(self, keep) -> "RegressionDataset":
        idx = _indices(keep)
        labels = None if self.labels is None else [self.labels[i] for i in idx]
        return RegressionDataset(self.xs[idx], self.ys[idx], self.assumed_noise_var, labels, dict(self.meta))


def _indices(keep):
    keep = np.asarray(keep)
    return np.flatnonzero(keep) if keep.dtype == bool else keep.astype(np.int64)


@dataclass
class OdeDataset:
    lam: float
    obs_times: np.ndarray
    ys: np.ndarray
    noise_var: float
    euler_dt: float
    steps_per_obs: int
    meta: dict = field(default_factory=dict)
    obs_index: np.ndarray | None = None

    def __post_init__(self):
        self.obs_times = np.asarray(self.obs_times, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if self.obs_times.shape != self.ys.shape:
            raise DomainError("obs_times and ys must have equal length")
        if not self.noise_var > 0 or not self.euler_dt > 0:
            raise DomainError("noise variance and Euler step must be positive")
        if self.steps_per_obs < 1:
            raise DomainError("steps_per_obs must be a positive integer")
        if self.obs_index is None:
            self.obs_index = np.arange(1, self.obs_times.size + 1)
        self.obs_index = np.asarray(self.obs_index, dtype=np.int64)
        dt_obs = self.steps_per_obs * self.euler_dt
        if not np.allclose(self.obs_times, self.obs_index * dt_obs, rtol=1e-9, atol=1e-12):
            raise DomainError("observation times must equal i * steps_per_obs * euler_dt")

    def __len__(self):
        return self.ys.size

    @property
    def locations(self):
        return self.obs_times

    def subset(self, keep) -> "OdeDataset":
        idx = _indices(keep)
        return OdeDataset(
            self.lam, self.obs_times[idx], self.ys[idx], self.noise_var, self.euler_dt,
            self.steps_per_obs, dict(self.meta), self.obs_index[idx],
        )


def _belief(var, fallback):
    # the variance the inference assumes; noiseless generation keeps a usable default
    return var if var > 0 else fallback


def _noise(seed, name, n, var):
    if var == 0:
        return np.zeros(n)
    gen = rngmod.stream(seed, name)
    return rngmod.polar_normals(gen, n) * math.sqrt(var)


def example1_function(x, a=10.0, b=50.0, c=5.0):
    """Line on [0, 1), C^1-matched exponential d e^{cx} + e on [1, 2]."""
    if c == 0:
        raise DomainError("c must be non-zero")
    d = a / (c * math.exp(c))
    e = a + b - a / c
    x = np.asarray(x, dtype=float)
    return np.where(x < 1.0, a * x + b, d * np.exp(c * x) + e)


def gen_example1(a=10.0, b=50.0, c=5.0, noise_var=0.01, seed=0) -> RegressionDataset:
    if c == 0:
        raise DomainError("c must be non-zero")
    xs = np.arange(1, 21) / 10.0
    ys = example1_function(xs, a, b, c) + _noise(seed, "data:example1", xs.size, noise_var)
    labels = ["linear" if x < 1.0 else "exponential" for x in xs]
    meta = dict(kind="regression", example="example1", seed=seed, generator=rngmod.GENERATOR_NAME,
                a=a, b=b, c=c, noise_var=noise_var)
    return RegressionDataset(xs, ys, _belief(noise_var, 0.01), labels, meta)


def gen_example2(a=10.0, b=50.0, var_clean=0.01, var_corrupt=100.0**2, corrupt_from=17, seed=0) -> RegressionDataset:
    """Line with the noise variance switched to ``var_corrupt`` after index ``corrupt_from``."""
    if not 1 <= corrupt_from <= 20:
        raise DomainError("corrupt_from must lie in 1..20")
    idx = np.arange(1, 21)
    xs = idx / 10.0
    z = _noise(seed, "data:example2", xs.size, 1.0)
    sd = np.where(idx <= corrupt_from, math.sqrt(var_clean), math.sqrt(var_corrupt))
    ys = a * xs + b + sd * z
    labels = ["clean" if i <= corrupt_from else "corrupt" for i in idx]
    meta = dict(kind="regression", example="example2", seed=seed, generator=rngmod.GENERATOR_NAME,
                a=a, b=b, var_clean=var_clean, var_corrupt=var_corrupt, corrupt_from=corrupt_from)
    return RegressionDataset(xs, ys, _belief(var_clean, 0.01), labels, meta)


def gen_example3(a1=4.0, b1=-4.0, a2=-4.0, b2=4.0, noise_var=0.01, seed=0) -> RegressionDataset:
    """Continuous piecewise line on 21 points x = 0, 0.1, ..., 2."""
    if not math.isclose(a1 + b1, a2 + b2, rel_tol=1e-12, abs_tol=1e-12):
        raise DomainError("piecewise lines must meet at x = 1 (a1 + b1 == a2 + b2)")
    xs = np.arange(0, 21) / 10.0
    f = np.where(xs <= 1.0, a1 * xs + b1, a2 * xs + b2)
    ys = f + _noise(seed, "data:example3", xs.size, noise_var)
    labels = ["regime1" if x <= 1.0 else "regime2" for x in xs]
    meta = dict(kind="regression", example="example3", seed=seed, generator=rngmod.GENERATOR_NAME,
                a1=a1, b1=b1, a2=a2, b2=b2, noise_var=noise_var,
                index_set="i=0..20 (21 points, following the stated count of 21 data points)")
    return RegressionDataset(xs, ys, _belief(noise_var, 0.01), labels, meta)


def gen_ode_data(x0=5.0, lam=1.0, noise_var=1.0, n_obs=60, dt_obs=0.5, seed=0,
                 euler_dt=1e-3) -> OdeDataset:
    """Noisy observations of the exact solution at t_i = i dt_obs."""
    if n_obs < 1:
        raise DomainError("n_obs must be at least 1")
    steps = int(round(dt_obs / euler_dt))
    if not math.isclose(steps * euler_dt, dt_obs, rel_tol=1e-9):
        raise DomainError("dt_obs must be an integer multiple of euler_dt")
    idx = np.arange(1, n_obs + 1)
    t = idx * dt_obs
    ys = ode_exact(x0, lam, t) + _noise(seed, "data:ode", n_obs, noise_var)
    meta = dict(kind="ode", seed=seed, generator=rngmod.GENERATOR_NAME, x0=x0, lam=lam,
                noise_var=noise_var, dt_obs=dt_obs, euler_dt=euler_dt, steps_per_obs=steps)
    return OdeDataset(lam, t, ys, _belief(noise_var, 1.0), euler_dt, steps, meta, idx)


# --------------------------------------------------------------------------
# text format
# --------------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def parse_value(s: str):
    s = s.strip()
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def write_header(fh, meta: dict):
    for k, v in meta.items():
        fh.write(f"# {k}={format_value(v)}\n")


def read_table(path):
    """Return (header dict, column names, list of row string lists)."""
    meta, names, rows = {}, None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = parse_value(val)
            elif names is None:
                names = line.split(",")
            else:
                rows.append(line.split(","))
    return meta, names, rows


def save_dataset(ds, path):
    path = Path(path)
    with open(path, "w") as fh:
        if isinstance(ds, OdeDataset):
            meta = dict(ds.meta)
            meta.update(kind="ode", lam=ds.lam, noise_var=ds.noise_var, euler_dt=ds.euler_dt,
                        steps_per_obs=ds.steps_per_obs)
            write_header(fh, meta)
            fh.write("x,y,label\n")
            for i, t, y in zip(ds.obs_index, ds.obs_times, ds.ys):
                fh.write(f"{repr(float(t))},{repr(float(y))},obs{int(i)}\n")
        else:
            meta = dict(ds.meta)
            meta.update(kind="regression", assumed_noise_var=ds.assumed_noise_var)
            write_header(fh, meta)
            fh.write("x,y,label\n")
            labels = ds.labels or [""] * len(ds)
            for x, y, lab in zip(ds.xs, ds.ys, labels):
                fh.write(f"{repr(float(x))},{repr(float(y))},{lab}\n")
    return path


def load_dataset(path):
    meta, names, rows = read_table(path)
    xs = np.array([float(r[0]) for r in rows])
    ys = np.array([float(r[1]) for r in rows])
    labels = [r[2] if len(r) > 2 else "" for r in rows]
    if meta.get("kind") == "ode":
        idx = np.array([int(lab[3:]) for lab in labels]) if all(l.startswith("obs") for l in labels) else None
        return OdeDataset(float(meta["lam"]), xs, ys, float(meta["noise_var"]), float(meta["euler_dt"]),
                          int(meta["steps_per_obs"]), meta, idx)
    return RegressionDataset(xs, ys, float(meta["assumed_noise_var"]),
                             labels if any(labels) else None, meta)
