"""Restarted quasi-Newton MAP search and basin clustering of its terminal points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import DomainError, OptimizationError

GTOL = 1e-6
MAXITER = 500
FD_REL_STEP = 1e-6


@dataclass
class MapResult:
    x: np.ndarray
    value: float
    terminals: np.ndarray
    terminal_values: np.ndarray
    starts: np.ndarray
    converged: np.ndarray

    def basins(self, radius: float = 0.5, rel_height: float | None = None):
        return cluster_basins(self.terminals, self.terminal_values, radius, rel_height)


def _fd_objective(target, batch_target, center, scale):
    """Negated target in scaled coordinates u, with central-difference gradient.

    x = center + scale * u; the step is 1e-6 (1 + |u_j|) per coordinate.  When
    a batched target is available the 2 dim + 1 evaluations go in one call.
    """

    def evaluate(points):
        xs = center + scale * points
        if batch_target is not None:
            return np.asarray(batch_target(xs), dtype=float)
        return np.array([float(target(x)) for x in xs])

    def fun(u):
        dim = u.size
        h = FD_REL_STEP * (1.0 + np.abs(u))
        pts = np.empty((2 * dim + 1, dim))
        pts[0] = u
        for j in range(dim):
            pts[1 + 2 * j] = u
            pts[2 + 2 * j] = u
            pts[1 + 2 * j, j] += h[j]
            pts[2 + 2 * j, j] -= h[j]
        vals = evaluate(pts)
        if not np.isfinite(vals[0]):
            return np.inf, np.zeros(dim)
        grad = np.empty(dim)
        for j in range(dim):
            grad[j] = (vals[1 + 2 * j] - vals[2 + 2 * j]) / (2.0 * h[j])
        if not np.all(np.isfinite(grad)):
            grad = np.zeros(dim)
        return -vals[0], -grad

    return fun


def map_estimate(target, dim: int, restarts: int, rng, prior_sampler=None, extra_starts=None,
                 batch_target=None, scale=None, center=None) -> MapResult:
    """Maximize ``target`` by BFGS from ``restarts`` prior draws plus any extra starts.

    ``prior_sampler(rng, n)`` supplies the random starts.  ``scale``/``center``
    define the coordinates BFGS works in (x = center + scale * u), which keeps
    the finite-difference step meaningful for very narrow posteriors.
    Returns the best of all terminal and start points.
    """
    if restarts < 1 and extra_starts is None:
        raise DomainError("map_estimate needs at least one start")
    scale = np.ones(dim) if scale is None else np.broadcast_to(np.asarray(scale, dtype=float), (dim,)).copy()
    center = np.zeros(dim) if center is None else np.broadcast_to(np.asarray(center, dtype=float), (dim,)).copy()
    if np.any(~(scale > 0)):
        raise DomainError("optimizer scale must be positive")
    starts = []
    if extra_starts is not None:
        starts.extend(np.atleast_2d(np.asarray(extra_starts, dtype=float)))
    if restarts > 0:
        if prior_sampler is None:
            raise DomainError("random restarts need a prior sampler")
        starts.extend(np.atleast_2d(prior_sampler(rng, restarts)))
    starts = np.array(starts, dtype=float).reshape(-1, dim)
    fun = _fd_objective(target, batch_target, center, scale)

    terminals, tvals, conv, svals = [], [], [], []
    for x0 in starts:
        u0 = (x0 - center) / scale
        f0, _ = fun(u0)
        svals.append(-f0)
        if not np.isfinite(f0):
            terminals.append(x0)
            tvals.append(-np.inf)
            conv.append(False)
            continue
        res = minimize(fun, u0, jac=True, method="BFGS", options={"gtol": GTOL, "maxiter": MAXITER, "norm": np.inf})
        terminals.append(center + scale * res.x)
        tvals.append(-float(res.fun) if np.isfinite(res.fun) else -np.inf)
        conv.append(bool(res.success))
    terminals = np.array(terminals)
    tvals = np.array(tvals)
    svals = np.array(svals)
    if not np.any(np.isfinite(tvals)):
        j = int(np.argmax(svals)) if svals.size else 0
        best = starts[j] if starts.size else None
        raise OptimizationError("every restart failed", best_x=best, best_value=float(svals[j]) if svals.size else None)
    i = int(np.argmax(tvals))
    x, val = terminals[i], tvals[i]
    j = int(np.argmax(svals))
    if svals[j] > val:
        x, val = starts[j], svals[j]
    return MapResult(x.copy(), float(val), terminals, tvals, starts, np.array(conv))


@dataclass
class Basin:
    center: np.ndarray
    value: float
    count: int


def cluster_basins(points, values, radius: float = 0.5, rel_height: float | None = None):
    """Group terminal points into basins of radius ``radius`` around the best member.

    Points are visited from highest to lowest value; each joins the first
    basin whose center is within ``radius``, otherwise it opens a new basin.
    With ``rel_height`` set, basins whose peak density is below
    ``rel_height`` times the global peak are dropped.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    order = np.argsort(-values, kind="stable")
    basins: list[Basin] = []
    for k in order:
        if not np.isfinite(values[k]):
            continue
        for b in basins:
            if np.linalg.norm(points[k] - b.center) < radius:
                b.count += 1
                break
        else:
            basins.append(Basin(points[k].copy(), float(values[k]), 1))
    if rel_height is not None and basins:
        cut = basins[0].value + np.log(rel_height)
        basins = [b for b in basins if b.value >= cut]
    return basins


def fd_hessian(batch_target, x, scale) -> np.ndarray:
    """Central-difference Hessian of a batched target at ``x``.

    Steps are 1e-3 of ``scale`` per coordinate, so ``scale`` should be of the
    order of the local posterior width.
    """
    x = np.asarray(x, dtype=float).ravel()
    dim = x.size
    h = 1e-3 * np.broadcast_to(np.asarray(scale, dtype=float), (dim,))
    pts = [x]
    for i in range(dim):
        for j in range(i, dim):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                p = x.copy()
                p[i] += si * h[i]
                p[j] += sj * h[j]
                pts.append(p)
    vals = np.asarray(batch_target(np.array(pts)), dtype=float)
    H = np.empty((dim, dim))
    k = 1
    for i in range(dim):
        for j in range(i, dim):
            pp, pm, mp, mm = vals[k:k + 4]
            k += 4
            H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4.0 * h[i] * h[j])
    return H


def laplace_log_mass(batch_target, x, value, scale):
    """Log of the Gaussian-approximation mass of the mode at ``x``.

    Returns ``(log_mass, cov)``; ``log_mass`` is -inf when the curvature is
    not negative definite.
    """
    H = fd_hessian(batch_target, x, scale)
    try:
        L = np.linalg.cholesky(-H)
    except np.linalg.LinAlgError:
        return -np.inf, None
    dim = H.shape[0]
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    cov = np.linalg.inv(-H)
    return float(value + 0.5 * dim * np.log(2.0 * np.pi) - 0.5 * logdet), cov
