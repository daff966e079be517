"""Forward operators.

Every model in this package is linear in its unknowns, so each one reduces to
a :class:`LinearProblem` ``y = A theta + eta``; the posteriors only ever see
that form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class LinearModelParams:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise DomainError("linear model parameters must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b])


@dataclass(frozen=True)
class OdeModelParams:
    x0: float

    def __post_init__(self):
        if not math.isfinite(self.x0):
            raise DomainError("initial condition must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x0])


def design_row(x: float) -> np.ndarray:
    """Row ``[x, 1]`` of the regression design matrix."""
    return np.array([float(x), 1.0])


def design_matrix(xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    return np.column_stack([xs, np.ones_like(xs)])


def linear_predict(params: LinearModelParams, x):
    return params.a * np.asarray(x, dtype=float) + params.b


def ode_exact(x0: float, lam: float, t):
    """Exact solution ``x0 exp(lam t)`` of dX/dt = lam X."""
    return x0 * np.exp(lam * np.asarray(t, dtype=float))


def euler_growth(lam: float, dt: float, k_steps):
    """(1 + lam dt)^k through exp(k log1p(lam dt))."""
    if dt <= 0:
        raise DomainError("Euler step must be positive")
    k = np.asarray(k_steps)
    if np.any(k < 0):
        raise DomainError("step count must be non-negative")
    return np.exp(k * math.log1p(lam * dt))


def ode_euler(x0: float, lam: float, dt: float, k_steps):
    """Forward Euler after ``k_steps`` steps: x0 (1 + lam dt)^k."""
    return x0 * euler_growth(lam, dt, k_steps)


@dataclass
class LinearProblem:
    """``y = A theta + eta`` with iid N(0, noise_var) noise.

    ``locations`` are the observation coordinates (x for regression, t for the
    ODE); they feed the GP kernel and the output tables.
    """

    A: np.ndarray
    y: np.ndarray
    noise_var: float
    locations: np.ndarray
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.ascontiguousarray(np.atleast_2d(np.asarray(self.A, dtype=float)))
        self.y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        self.locations = np.asarray(self.locations, dtype=float)
        if self.A.shape[0] != self.y.shape[0]:
            if self.y.size == 0:
                self.A = self.A.reshape(0, self.A.shape[-1] if self.A.ndim == 2 else 1)
            else:
                raise DomainError("design and responses disagree in length")
        if not self.noise_var > 0:
            raise DomainError("noise variance must be positive")

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def residuals(self, theta) -> np.ndarray:
        """y - A theta; ``theta`` may be a batch of shape (K, p)."""
        theta = np.asarray(theta, dtype=float)
        return self.y - theta @ self.A.T

    def subset(self, keep) -> "LinearProblem":
        keep = np.asarray(keep)
        return LinearProblem(self.A[keep], self.y[keep], self.noise_var, self.locations[keep], self.name, dict(self.meta))


def regression_problem(ds) -> LinearProblem:
    return LinearProblem(design_matrix(ds.xs), ds.ys, ds.assumed_noise_var, ds.xs, name="regression")


def ode_problem(ds, operator: str = "exact") -> LinearProblem:
    """Observation operator of the ODE inverse problem as a one-column design.

    ``operator`` is ``"exact"`` (x0 e^{lam t_i}) or ``"euler"``
    (x0 (1 + lam dt)^{i n}).
    """
    idx = np.asarray(ds.obs_index)
    if operator == "exact":
        g = ode_exact(1.0, ds.lam, ds.obs_times)
    elif operator in ("euler", "approx"):
        g = euler_growth(ds.lam, ds.euler_dt, idx * ds.steps_per_obs)
    else:
        raise DomainError(f"unknown operator {operator!r}")
    return LinearProblem(g[:, None], ds.ys, ds.noise_var, ds.obs_times, name=f"ode-{operator}")
