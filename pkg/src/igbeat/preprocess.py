"""ECG to clean R-R series: Pan-Tompkins detection, validity filter, PCHIP repair."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

log = logging.getLogger(__name__)

RR_MIN = 0.3
RR_MAX = 2.0


@dataclass
class EcgRecord:
    samples: np.ndarray  # physical units (mV)
    fs: float
    record_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.fs <= 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D array")

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs


@dataclass
class RRSeries:
    peak_times: np.ndarray
    intervals: np.ndarray
    valid_mask: np.ndarray  # False where the original interval was outside [RR_MIN, RR_MAX]

    def __post_init__(self):
        self.peak_times = np.asarray(self.peak_times, dtype=np.float64)
        self.intervals = np.asarray(self.intervals, dtype=np.float64)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.intervals.size != self.peak_times.size - 1 or self.valid_mask.size != self.intervals.size:
            raise ValueError("need len(intervals) == len(valid_mask) == len(peak_times) - 1")
        if np.any(np.diff(self.peak_times) <= 0):
            raise ValueError("peak times must be strictly increasing")

    @classmethod
    def from_intervals(cls, intervals, start: float = 0.0, valid_mask=None) -> "RRSeries":
        intervals = np.asarray(intervals, dtype=np.float64)
        peaks = start + np.concatenate([[0.0], np.cumsum(intervals)])
        if valid_mask is None:
            valid_mask = np.ones(intervals.size, dtype=bool)
        return cls(peaks, intervals, valid_mask)

    def __len__(self):
        return self.intervals.size

    def head(self, n: int) -> "RRSeries":
        """First ``n`` intervals."""
        return RRSeries(self.peak_times[:n + 1], self.intervals[:n], self.valid_mask[:n])

    def to_csv(self, path=None) -> str:
        """Rows per interval: ``beat_index, peak_time_s, rr_s, was_interpolated``.

        ``peak_time_s`` is the R peak that closes the interval.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["beat_index", "peak_time_s", "rr_s", "was_interpolated"])
        for i, (t, rr, ok) in enumerate(zip(self.peak_times[1:], self.intervals, self.valid_mask)):
            w.writerow([i, repr(float(t)), repr(float(rr)), int(not ok)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, newline="\n")
        return text

    @classmethod
    def from_csv(cls, path) -> "RRSeries":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no rows")
        t = np.array([float(r["peak_time_s"]) for r in rows])
        rr = np.array([float(r["rr_s"]) for r in rows])
        interp = np.array([r["was_interpolated"].strip() not in ("0", "") for r in rows])
        peaks = np.concatenate([[t[0] - rr[0]], t])
        return cls(peaks, rr, ~interp)


# ---------------------------------------------------------------- PCHIP


def pchip_slopes(xk: np.ndarray, yk: np.ndarray) -> np.ndarray:
    """Fritsch-Carlson derivatives at the knots.

    Interior: weighted harmonic mean of adjacent secants when they share a
    sign, zero otherwise. Ends: three-point estimate, limited to preserve
    shape.
    """
    h = np.diff(xk)
    delta = np.diff(yk) / h
    n = xk.size
    m = np.zeros(n)
    if n == 2:
        m[:] = delta[0]
        return m
    for k in range(1, n - 1):
        d0, d1 = delta[k - 1], delta[k]
        if d0 * d1 <= 0:
            continue
        w1 = 2 * h[k] + h[k - 1]
        w2 = h[k] + 2 * h[k - 1]
        m[k] = (w1 + w2) / (w1 / d0 + w2 / d1)
    m[0] = _end_slope(h[0], h[1], delta[0], delta[1])
    m[-1] = _end_slope(h[-1], h[-2], delta[-1], delta[-2])
    return m


def _end_slope(h0, h1, d0, d1):
    m = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1)
    if np.sign(m) != np.sign(d0):
        return 0.0
    if np.sign(d0) != np.sign(d1) and abs(m) > abs(3 * d0):
        return 3 * d0
    return m


def pchip_eval(knot_x, knot_y, query) -> np.ndarray:
    """Evaluate the monotone cubic Hermite interpolant through the knots.

    Queries outside the knot range are clamped to the end values.
    """
    xk = np.asarray(knot_x, dtype=np.float64)
    yk = np.asarray(knot_y, dtype=np.float64)
    if xk.size < 2 or xk.size != yk.size:
        raise ValueError("need at least two knots with matching x and y")
    if np.any(np.diff(xk) == 0):
        raise ValueError("duplicate knot indices")
    if np.any(np.diff(xk) < 0):
        raise ValueError("knot indices must be strictly increasing")
    m = pchip_slopes(xk, yk)
    q = np.clip(np.asarray(query, dtype=np.float64), xk[0], xk[-1])
    k = np.clip(np.searchsorted(xk, q, side="right") - 1, 0, xk.size - 2)
    h = xk[k + 1] - xk[k]
    t = (q - xk[k]) / h
    t2, t3 = t * t, t * t * t
    return (
        (2 * t3 - 3 * t2 + 1) * yk[k]
        + (t3 - 2 * t2 + t) * h * m[k]
        + (-2 * t3 + 3 * t2) * yk[k + 1]
        + (t3 - t2) * h * m[k + 1]
    )


# ---------------------------------------------------------------- cleaning


def repair_intervals(intervals, lo: float = RR_MIN, hi: float = RR_MAX) -> tuple[np.ndarray, np.ndarray]:
    """Replace out-of-range intervals by PCHIP over the valid ones (vs beat index).

    Returns ``(repaired, valid_mask)``. Invalid runs at either end take the
    nearest valid value; interior replacements are re-clipped to ``[lo, hi]``.
    """
    rr = np.asarray(intervals, dtype=np.float64)
    valid = (rr >= lo) & (rr <= hi)
    if valid.sum() < 2:
        raise ValueError(f"need at least 2 valid intervals, got {int(valid.sum())}")
    if valid.all():
        return rr.copy(), valid
    idx = np.arange(rr.size)
    out = rr.copy()
    bad = idx[~valid]
    out[bad] = pchip_eval(idx[valid], rr[valid], bad)
    out = np.clip(out, lo, hi)
    log.debug("interpolated %d of %d intervals", bad.size, rr.size)
    return out, valid


def clean_intervals(peak_times) -> RRSeries:
    """Intervals from R-peak times with invalid ones repaired.

    Peak times are rebuilt from the first peak and the repaired intervals so
    that ``intervals == diff(peak_times)`` keeps holding.
    """
    peaks = np.asarray(peak_times, dtype=np.float64)
    if peaks.size < 3:
        raise ValueError(f"need at least 3 peaks, got {peaks.size}")
    if np.any(np.diff(peaks) <= 0):
        raise ValueError("peak times must be strictly increasing")
    rr, valid = repair_intervals(np.diff(peaks))
    return RRSeries.from_intervals(rr, start=peaks[0], valid_mask=valid)


# ---------------------------------------------------------------- Pan-Tompkins


@dataclass
class PanTompkinsConfig:
    band: tuple[float, float] = (5.0, 15.0)
    filter_order: int = 2
    integration_window: float = 0.150
    refractory: float = 0.200
    t_wave_window: float = 0.360
    searchback_factor: float = 1.66
    refine_window: float = 0.075
    learning_period: float = 4.0


def _bandpass(x: np.ndarray, fs: float, cfg: PanTompkinsConfig) -> np.ndarray:
    lo, hi = cfg.band
    nyq = 0.5 * fs
    # cascaded low-pass then high-pass, zero phase
    b, a = signal.butter(cfg.filter_order, hi / nyq, btype="low")
    y = signal.filtfilt(b, a, x)
    b, a = signal.butter(cfg.filter_order, lo / nyq, btype="high")
    return signal.filtfilt(b, a, y)


def _derivative(x: np.ndarray, fs: float) -> np.ndarray:
    # five-point derivative (1/8T)(-x[n-2] - 2x[n-1] + 2x[n+1] + x[n+2]), centred
    kernel = np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * fs / 8.0
    return np.convolve(x, kernel, mode="same")


def pan_tompkins_stages(x: np.ndarray, fs: float, cfg: PanTompkinsConfig | None = None):
    """Return ``(bandpassed, integrated)`` signals."""
    cfg = cfg or PanTompkinsConfig()
    filtered = _bandpass(x, fs, cfg)
    squared = _derivative(filtered, fs) ** 2
    width = max(1, int(round(cfg.integration_window * fs)))
    integrated = np.convolve(squared, np.ones(width) / width, mode="same")
    return filtered, integrated


def detect_rpeaks(ecg: EcgRecord, cfg: PanTompkinsConfig | None = None) -> np.ndarray:
    """R-peak times (s) by Pan-Tompkins with dual adaptive thresholds and search-back."""
    cfg = cfg or PanTompkinsConfig()
    fs = float(ecg.fs)
    if fs < 100:
        raise ValueError(f"sample rate {fs} Hz too low; need >= 100 Hz")
    if ecg.duration < 2.0:
        raise ValueError(f"record {ecg.record_id!r} shorter than 2 s")
    x = np.nan_to_num(ecg.samples - np.nanmedian(ecg.samples))
    filtered, integrated = pan_tompkins_stages(x, fs, cfg)
    if not np.any(integrated > 0) or np.max(integrated) <= 1e-12 * max(1.0, np.max(np.abs(x))):
        return np.array([])

    refractory = int(round(cfg.refractory * fs))
    half = int(round(cfg.refine_window * fs))
    cand, _ = signal.find_peaks(integrated, distance=max(1, refractory))
    if cand.size == 0:
        return np.array([])
    abs_filt = np.abs(filtered)

    def filt_peak(i):
        lo_, hi_ = max(0, i - half), min(filtered.size, i + half + 1)
        return lo_ + int(np.argmax(filtered[lo_:hi_]))

    # threshold initialisation from the learning period
    learn = int(cfg.learning_period * fs)
    spki = 0.25 * np.max(integrated[:learn])
    npki = 0.5 * np.mean(integrated[:learn])
    spkf = 0.25 * np.max(abs_filt[:learn])
    npkf = 0.5 * np.mean(abs_filt[:learn])

    def thresholds():
        ti1 = npki + 0.25 * (spki - npki)
        tf1 = npkf + 0.25 * (spkf - npkf)
        return ti1, 0.5 * ti1, tf1, 0.5 * tf1

    qrs: list[int] = []
    rr_recent: list[int] = []
    last_slope = None

    def slope_at(i):
        # steepest band-passed slope around the candidate's filtered peak
        c = filt_peak(i)
        lo_, hi_ = max(0, c - half), min(filtered.size, c + half + 1)
        return np.max(np.abs(np.diff(filtered[lo_:hi_]))) if hi_ - lo_ > 1 else 0.0

    def accept(i, searchback=False):
        nonlocal spki, spkf, last_slope
        fpk = filt_peak(i)
        if searchback:
            spki = 0.25 * integrated[i] + 0.75 * spki
            spkf = 0.25 * abs_filt[fpk] + 0.75 * spkf
        else:
            spki = 0.125 * integrated[i] + 0.875 * spki
            spkf = 0.125 * abs_filt[fpk] + 0.875 * spkf
        if qrs:
            rr_recent.append(i - qrs[-1])
            del rr_recent[:-8]
        qrs.append(i)
        last_slope = slope_at(i)

    pending_noise: list[int] = []
    for i in cand:
        ti1, ti2, tf1, tf2 = thresholds()
        fpk = filt_peak(i)
        if qrs and i - qrs[-1] < refractory:
            continue
        # search-back over missed beats
        if len(rr_recent) >= 2 and qrs:
            rr_avg = np.mean(rr_recent)
            if i - qrs[-1] > cfg.searchback_factor * rr_avg:
                window = [j for j in pending_noise if j - qrs[-1] >= refractory and i - j >= refractory]
                window = [j for j in window if integrated[j] > ti2 and abs_filt[filt_peak(j)] > tf2]
                if window:
                    accept(max(window, key=lambda j: integrated[j]), searchback=True)
                    ti1, ti2, tf1, tf2 = thresholds()
        if integrated[i] > ti1 and abs_filt[fpk] > tf1:
            if qrs and i - qrs[-1] < cfg.t_wave_window * fs and last_slope is not None:
                if slope_at(i) < 0.5 * last_slope:
                    npki = 0.125 * integrated[i] + 0.875 * npki
                    npkf = 0.125 * abs_filt[fpk] + 0.875 * npkf
                    continue
            accept(i)
            pending_noise.clear()
        else:
            npki = 0.125 * integrated[i] + 0.875 * npki
            npkf = 0.125 * abs_filt[fpk] + 0.875 * npkf
            pending_noise.append(i)

    # refine to the band-passed maximum
    refined = sorted({filt_peak(i) for i in qrs})
    out: list[int] = []
    for i in refined:
        if out and i - out[-1] < refractory:
            if filtered[i] > filtered[out[-1]]:
                out[-1] = i
            continue
        out.append(i)
    return np.asarray(out, dtype=np.float64) / fs


def ecg_to_rr(ecg: EcgRecord, cfg: PanTompkinsConfig | None = None) -> RRSeries:
    return clean_intervals(detect_rpeaks(ecg, cfg))
