"""CSV and SVG writers for experiment artifacts.

CSV files start with ``# key=value`` header lines (config, seed, offsets)
followed by one header row.  Floats use the shortest round-trip repr so a
rerun with the same config produces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .datasets import format_value, write_header
from .errors import DomainError


@dataclass
class PosteriorGrid:
    """Log-density values on a rectangular (a, b) grid; ``values[i, j]`` is at (a_i, b_j)."""

    a: np.ndarray
    b: np.ndarray
    values: np.ndarray
    normalized: bool
    offset: float = 0.0
    log_scale: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.a.size, self.b.size):
            raise DomainError("grid values do not match the axis resolutions")
        if self.a.size < 2 or self.b.size < 2:
            raise DomainError("grid needs at least two points per axis")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("grid values must be finite")

    def integral(self) -> float:
        """Trapezoid integral of exp(values) (only meaningful when normalized)."""
        dens = np.exp(self.values + self.offset)
        return float(np.trapezoid(np.trapezoid(dens, self.b, axis=1), self.a))

    def argmax(self) -> np.ndarray:
        i, j = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return np.array([self.a[i], self.b[j]])


@dataclass
class FidelityProfile:
    """Posterior fidelity means per observation with the two reference levels."""

    locations: np.ndarray
    means: np.ndarray
    prior_mean: float
    max_mean: float
    label: str = ""

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        if self.locations.shape != self.means.shape:
            raise DomainError("one fidelity mean per location required")
        if np.any((self.means < 0.0) | (self.means > 1.0)):
            raise DomainError("fidelity means must lie in [0, 1]")


def _fmt(v) -> str:
    return format_value(float(v)) if isinstance(v, (float, np.floating)) else format_value(v)


def write_csv(path, columns: list, rows, meta: dict | None = None):
    path = Path(path)
    with open(path, "w") as fh:
        write_header(fh, meta or {})
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def write_grid(path, grid: PosteriorGrid, meta: dict | None = None):
    header = dict(meta or {})
    header.update(grid.meta)
    header.update(normalized=grid.normalized, offset=float(grid.offset), log_scale=grid.log_scale,
                  n_a=grid.a.size, n_b=grid.b.size)
    rows = ((a, b, grid.values[i, j]) for i, a in enumerate(grid.a) for j, b in enumerate(grid.b))
    return write_csv(path, ["a", "b", "logpdf"], rows, header)


def write_profiles(path, profiles: list, meta: dict | None = None):
    rows = []
    for p in profiles:
        for loc, m in zip(p.locations, p.means):
            rows.append((p.label, loc, m, p.prior_mean, p.max_mean))
    return write_csv(path, ["method", "location", "mean", "prior_mean", "max_mean"], rows, meta)


def read_profile(path, label: str | None = None) -> FidelityProfile:
    from .datasets import read_table

    _, names, rows = read_table(path)
    col = {n: i for i, n in enumerate(names)}
    if label is None and rows:
        label = rows[0][col["method"]]
    sel = [r for r in rows if r[col["method"]] == label]
    if not sel:
        raise DomainError(f"no fidelity profile labelled {label!r} in {path}")
    return FidelityProfile(
        [float(r[col["location"]]) for r in sel],
        [float(r[col["mean"]]) for r in sel],
        float(sel[0][col["prior_mean"]]),
        float(sel[0][col["max_mean"]]),
        label,
    )


def write_summary(path, summary: dict):
    with open(path, "w") as fh:
        for k, v in summary.items():
            fh.write(f"{k}={_fmt(v)}\n")
    return Path(path)


def read_summary(path) -> dict:
    from .datasets import parse_value

    out = {}
    with open(path) as fh:
        for line in fh:
            k, _, v = line.rstrip("\n").partition("=")
            if k:
                out[k] = parse_value(v)
    return out


# --------------------------------------------------------------------------
# SVG
# --------------------------------------------------------------------------

_W, _H, _M = 480, 360, 48
_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


def _ramp(t):
    # dark blue -> teal -> yellow
    t = float(np.clip(t, 0.0, 1.0))
    stops = np.array([[13, 8, 135], [33, 145, 140], [253, 231, 37]], dtype=float)
    x = t * 2.0
    k = min(int(x), 1)
    c = stops[k] + (stops[k + 1] - stops[k]) * (x - k)
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def _frame(title, xlabel, ylabel, xlim, ylim):
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" font-family="sans-serif" font-size="11">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{_W / 2}" y="{_H - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="12" y="{_H / 2}" text-anchor="middle" transform="rotate(-90 12 {_H / 2})">{escape(ylabel)}</text>',
        f'<rect x="{_M}" y="{_M / 2}" width="{_W - 1.5 * _M}" height="{_H - 1.5 * _M}" fill="none" stroke="black"/>',
    ]
    for v, anchor in ((xlim[0], "start"), (xlim[1], "end")):
        x = _M if anchor == "start" else _W - _M / 2
        parts.append(f'<text x="{x}" y="{_H - _M / 2 + 12}" text-anchor="{anchor}">{v:.4g}</text>')
    for v, y in ((ylim[0], _H - _M), (ylim[1], _M / 2 + 10)):
        parts.append(f'<text x="{_M - 4}" y="{y}" text-anchor="end">{v:.4g}</text>')
    return parts


def _scaler(lo, hi, plo, phi):
    span = hi - lo if hi > lo else 1.0
    return lambda v: plo + (np.asarray(v, dtype=float) - lo) / span * (phi - plo)


def heatmap_svg(path, grid: PosteriorGrid, title="", max_cells: int = 100):
    """Heatmap of a grid, subsampled to at most ``max_cells`` per axis."""
    ia = np.linspace(0, grid.a.size - 1, min(max_cells, grid.a.size)).round().astype(int)
    ib = np.linspace(0, grid.b.size - 1, min(max_cells, grid.b.size)).round().astype(int)
    vals = grid.values[np.ix_(ia, ib)]
    if not grid.log_scale:
        vals = np.exp(vals - vals.max())
    lo, hi = float(vals.min()), float(vals.max())
    xlim, ylim = (grid.a[0], grid.a[-1]), (grid.b[0], grid.b[-1])
    parts = _frame(title, "a", "b", xlim, ylim)
    sx = _scaler(*xlim, _M, _W - _M / 2)
    sy = _scaler(*ylim, _H - _M, _M / 2)
    cw = (_W - 1.5 * _M) / len(ia)
    ch = (_H - 1.5 * _M) / len(ib)
    for p, i in enumerate(ia):
        for q, j in enumerate(ib):
            t = (vals[p, q] - lo) / (hi - lo) if hi > lo else 1.0
            x = float(sx(grid.a[i])) - cw / 2
            y = float(sy(grid.b[j])) - ch / 2
            parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw + 0.3:.2f}" height="{ch + 0.3:.2f}" '
                         f'fill="{_ramp(t)}"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
    return Path(path)


def lines_svg(path, x, series: dict, title="", xlabel="", ylabel="", hlines: dict | None = None, points=False):
    """Line (or marker) plot of several named series over a shared x."""
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(v, dtype=float) for v in series.values()]
    extra = list((hlines or {}).values())
    allv = np.concatenate([y[np.isfinite(y)] for y in ys] + [np.array(extra, dtype=float)])
    xlim = (float(x.min()), float(x.max()))
    ylim = (float(allv.min()), float(allv.max()))
    if ylim[0] == ylim[1]:
        ylim = (ylim[0] - 1.0, ylim[1] + 1.0)
    parts = _frame(title, xlabel, ylabel, xlim, ylim)
    sx = _scaler(*xlim, _M, _W - _M / 2)
    sy = _scaler(*ylim, _H - _M, _M / 2)
    for k, (name, y) in enumerate(series.items()):
        color = _PALETTE[k % len(_PALETTE)]
        px, py = sx(x), sy(np.asarray(y, dtype=float))
        if points:
            for u, v in zip(px, py):
                parts.append(f'<circle cx="{u:.2f}" cy="{v:.2f}" r="2" fill="{color}"/>')
        else:
            pts = " ".join(f"{u:.2f},{v:.2f}" for u, v in zip(px, py) if np.isfinite(v))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{_W - _M / 2 - 4}" y="{_M / 2 + 14 * (k + 1)}" text-anchor="end" '
                     f'fill="{color}">{escape(str(name))}</text>')
    for k, (name, v) in enumerate((hlines or {}).items()):
        y = float(sy(v))
        parts.append(f'<line x1="{_M}" x2="{_W - _M / 2}" y1="{y:.2f}" y2="{y:.2f}" stroke="gray" '
                     f'stroke-dasharray="4 3"/>')
        parts.append(f'<text x="{_M + 4}" y="{y - 3:.2f}" fill="gray">{escape(str(name))}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
    return Path(path)
