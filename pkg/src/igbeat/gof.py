"""Time-rescaling goodness of fit: CDF transform, KS distance, KS-plot output."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import igdist
from .igdist import IGTrajectory

KS_COEFF_5PCT = 1.36


def ks_bound(n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return KS_COEFF_5PCT / math.sqrt(n)


def rescale(traj: IGTrajectory) -> np.ndarray:
    """u_i = F_IG(x_{i+1} | mu_i, sigma_i); i.i.d. U(0, 1) when the model is right."""
    return np.atleast_1d(igdist.cdf(traj.targets, traj.params))


@dataclass
class KSReport:
    u: np.ndarray
    quantiles: np.ndarray  # (i - 0.5) / n
    u_sorted: np.ndarray
    ksd: float
    bound: float
    lag1_autocorr: float

    @property
    def n(self) -> int:
        return self.u.size

    @property
    def passed(self) -> bool:
        return self.ksd < self.bound

    @property
    def sorted_pairs(self) -> np.ndarray:
        return np.column_stack([self.quantiles, self.u_sorted])

    @property
    def worst_index(self) -> int:
        return int(np.argmax(np.abs(self.u_sorted - self.quantiles)))


def lag1_autocorrelation(u: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    if u.size < 3:
        return float("nan")
    c = u - u.mean()
    denom = float(np.dot(c, c))
    return float(np.dot(c[:-1], c[1:]) / denom) if denom > 0 else float("nan")


def ks_distance(u) -> KSReport:
    """Max |u_(i) - (i - 0.5)/n| over the sorted rescaled samples."""
    u = np.asarray(u, dtype=np.float64).ravel()
    n = u.size
    if n == 0:
        raise ValueError("ks_distance needs at least one sample")
    if np.any((u < 0) | (u > 1)) or not np.all(np.isfinite(u)):
        raise ValueError("rescaled samples must lie in [0, 1]")
    s = np.sort(u)
    q = (np.arange(1, n + 1) - 0.5) / n
    ksd = float(np.max(np.abs(s - q)))
    return KSReport(u, q, s, ksd, ks_bound(n), lag1_autocorrelation(u))


def evaluate_trajectory(traj: IGTrajectory) -> KSReport:
    return ks_distance(rescale(traj))


# ---------------------------------------------------------------- KS plot


def ks_plot_rows(report: KSReport) -> list[tuple[float, float, float, float]]:
    """``(q, u, lower_band, upper_band)`` with the band clipped to [0, 1]."""
    lo = np.clip(report.quantiles - report.bound, 0.0, 1.0)
    hi = np.clip(report.quantiles + report.bound, 0.0, 1.0)
    return list(zip(report.quantiles.tolist(), report.u_sorted.tolist(), lo.tolist(), hi.tolist()))


def ks_plot_csv(report: KSReport, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["q", "u", "lower_band", "upper_band"])
    for row in ks_plot_rows(report):
        w.writerow([repr(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, newline="\n")
    return text


def ks_plot_svg(report: KSReport, path=None, title: str = "", size: int = 320) -> str:
    """Identity line, the +/- bound band and the sorted samples.

    A failing report also gets a red marker on the point of largest deviation.
    """
    pad = 40
    span = size - 2 * pad

    def px(q, u):
        return pad + q * span, size - pad - u * span

    band_hi = [px(0, report.bound), px(1 - report.bound, 1), px(1, 1)]
    band_lo = [px(1, 1 - report.bound), px(report.bound, 0), px(0, 0)]
    band = " ".join(f"{x:.2f},{y:.2f}" for x, y in band_hi + band_lo)
    curve = " ".join(f"{x:.2f},{y:.2f}" for x, y in (px(q, u) for q, u in zip(report.quantiles, report.u_sorted)))
    x0, y0 = px(0, 0)
    x1, y1 = px(1, 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="white" stroke="black"/>',
        f'<polygon class="band" points="{band}" fill="#dde6f5" stroke="none"/>',
        f'<line class="identity" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="gray" stroke-dasharray="4 3"/>',
        f'<polyline class="ks-curve" points="{curve}" fill="none" stroke="#1f4fa0" stroke-width="1.5"/>',
    ]
    if not report.passed:
        i = report.worst_index
        cx, cy = px(report.quantiles[i], report.u_sorted[i])
        parts.append(f'<circle class="max-deviation" cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="red"/>')
    label = f"KSD={report.ksd:.3f} bound={report.bound:.3f} {'pass' if report.passed else 'fail'}"
    parts.append(f'<text x="{pad}" y="{pad - 10}" font-size="11" font-family="sans-serif">{title} {label}</text>')
    parts.append(f'<text x="{size / 2}" y="{size - 10}" font-size="11" text-anchor="middle">uniform quantile</text>')
    parts.append("</svg>")
    text = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
