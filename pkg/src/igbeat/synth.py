"""Synthetic R-R series and ECG with known ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import igdist
from .igdist import IGParams, IGTrajectory
from .preprocess import EcgRecord, RRSeries

MU_MIN = 0.3
SIGMA_RANGE = (math.exp(-4.5), math.exp(0.75))


@dataclass
class ParamTrajectory:
    """Prescribed IG parameters as a function of elapsed time (s).

    kind:
      ``constant``       mu, sigma fixed
      ``sinusoidal``     mu(t) = mu + amplitude * sin(2 pi t / period + phase)
      ``regime_switch``  (mu, sigma) jump at the times in ``switch_times``
                         to successive entries of ``regimes``
    """

    kind: str = "constant"
    mu: float = 0.8
    sigma: float = 0.05
    amplitude: float = 0.0
    period: float = 4.0
    phase: float = 0.0
    switch_times: tuple[float, ...] = ()
    regimes: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoidal", "regime_switch"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "sinusoidal" and self.period <= 0:
            raise ValueError("period must be positive")
        if self.kind == "regime_switch" and len(self.regimes) != len(self.switch_times):
            raise ValueError("need one regime per switch time")
        if self.kind == "regime_switch" and list(self.switch_times) != sorted(self.switch_times):
            raise ValueError("switch times must be increasing")
        mus = [self.mu - abs(self.amplitude) if self.kind == "sinusoidal" else self.mu]
        sigmas = [self.sigma]
        for m, s in self.regimes:
            mus.append(m)
            sigmas.append(s)
        if min(mus) <= MU_MIN:
            raise ValueError(f"mean must stay above {MU_MIN} s")
        if min(sigmas) < SIGMA_RANGE[0] or max(sigmas) > SIGMA_RANGE[1]:
            raise ValueError(f"sigma must stay within [{SIGMA_RANGE[0]:.4f}, {SIGMA_RANGE[1]:.4f}] s")

    def at(self, t: float) -> tuple[float, float]:
        if self.kind == "constant":
            return self.mu, self.sigma
        if self.kind == "sinusoidal":
            return self.mu + self.amplitude * math.sin(2 * math.pi * t / self.period + self.phase), self.sigma
        k = int(np.searchsorted(self.switch_times, t, side="right"))
        return (self.mu, self.sigma) if k == 0 else self.regimes[k - 1]


def generate_rr(traj: ParamTrajectory, n_beats: int, rng: np.random.Generator) -> tuple[RRSeries, IGTrajectory]:
    """Sample ``n_beats`` R peaks; returns the series and the generating parameters.

    The parameters for the interval after peak ``r_i`` are read off the
    trajectory at time ``r_i``, and the first interval is drawn from the
    parameters at t=0. ``IGTrajectory`` aligns step ``i`` with interval
    ``i + 1`` so it matches a model's one-step-ahead output on the series.
    """
    if n_beats < 2:
        raise ValueError("n_beats must be >= 2")
    n = n_beats - 1
    mu = np.empty(n)
    sigma = np.empty(n)
    rr = np.empty(n)
    z = rng.standard_normal(n)
    u = rng.uniform(size=n)
    t = 0.0
    for i in range(n):
        # the trajectory validated its range, so the scalar transform needs no checks
        m, s = traj.at(t)
        mu[i], sigma[i] = m, s
        phi = m * z[i] * z[i] / (2.0 * m**3 / (s * s))
        root = m / (1.0 + phi + math.sqrt(phi * (phi + 2.0)))
        rr[i] = root if u[i] <= m / (m + root) else m * m / root
        t += rr[i]
    series = RRSeries.from_intervals(rr)
    truth = IGTrajectory(IGParams(mu[1:], sigma[1:]), rr[1:]) if n > 1 else None
    return series, truth


def subject_trajectory(rng: np.random.Generator, kind: str = "sinusoidal") -> ParamTrajectory:
    """Random per-subject parameters in a physiological range."""
    mu = rng.uniform(0.7, 1.0)
    sigma = rng.uniform(0.03, 0.06)
    if kind == "constant":
        return ParamTrajectory("constant", mu=mu, sigma=sigma)
    return ParamTrajectory(
        "sinusoidal",
        mu=mu,
        sigma=sigma,
        amplitude=rng.uniform(0.03, 0.06),
        period=rng.uniform(3.5, 4.5),
        phase=rng.uniform(0, 2 * math.pi),
    )


def _bumps(t: np.ndarray, centres: np.ndarray, width: float, amp: float) -> np.ndarray:
    out = np.zeros_like(t)
    reach = 5 * width
    for c in centres:
        lo, hi = np.searchsorted(t, [c - reach, c + reach])
        out[lo:hi] += amp * np.exp(-0.5 * ((t[lo:hi] - c) / width) ** 2)
    return out


def generate_ecg(
    peak_times,
    fs: float,
    snr_db: float | None,
    rng: np.random.Generator,
    duration: float | None = None,
    record_id: str = "synthetic",
) -> EcgRecord:
    """Gaussian R waves (1 mV, ~20 ms wide) with small P and T waves plus white noise.

    ``snr_db=None`` gives a noise-free record. Noise power is set relative to
    the mean power of the clean waveform; with no peaks, unit-variance
    noise scaled by ``10**(-snr_db/20)`` is returned.
    """
    peaks = np.asarray(peak_times, dtype=np.float64)
    if peaks.size and np.any(np.diff(peaks) <= 0):
        raise ValueError("peak times must be strictly increasing")
    if fs < 100:
        raise ValueError("fs must be >= 100 Hz")
    if duration is None:
        duration = (peaks[-1] + 1.0) if peaks.size else 10.0
    t = np.arange(int(round(duration * fs))) / fs
    clean = (
        _bumps(t, peaks, 0.010, 1.0)
        + _bumps(t, peaks - 0.16, 0.025, 0.12)
        + _bumps(t, peaks + 0.25, 0.040, 0.25)
    )
    if snr_db is None:
        return EcgRecord(clean, fs, record_id)
    power = np.mean(clean**2) if peaks.size else 1.0
    noise = rng.standard_normal(t.size) * math.sqrt(power * 10 ** (-snr_db / 10))
    return EcgRecord(clean + noise, fs, record_id)
