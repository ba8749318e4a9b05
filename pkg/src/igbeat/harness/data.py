"""Subject manifests, segmentation and leave-one-subject-out folds."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..ingest import read_ecg_csv, read_rpeaks_csv, read_wfdb
from ..preprocess import RRSeries, clean_intervals, detect_rpeaks

log = logging.getLogger(__name__)

RR_CSV_HEADER = ["beat_index", "peak_time_s", "rr_s", "was_interpolated"]


def segment(intervals, length: int) -> list[np.ndarray]:
    """Consecutive non-overlapping windows of exactly ``length`` intervals; the tail is dropped."""
    if length < 2:
        raise ValueError("segment length must be >= 2")
    x = np.asarray(intervals.intervals if isinstance(intervals, RRSeries) else intervals, dtype=np.float64)
    n = x.size // length
    if n == 0:
        log.warning("series of %d intervals is shorter than segment length %d", x.size, length)
    return [x[k * length:(k + 1) * length].copy() for k in range(n)]


@dataclass(frozen=True)
class Fold:
    test: str
    val: str
    train: tuple[str, ...]


def loso_folds(subjects) -> list[Fold]:
    """One fold per subject as test; validation is the next subject in sorted order."""
    ids = sorted(subjects)
    if len(set(ids)) != len(ids):
        raise ValueError("subject ids must be unique")
    if len(ids) < 3:
        raise ValueError(f"need at least 3 subjects for train/val/test, got {len(ids)}")
    folds = []
    for k, test in enumerate(ids):
        val = ids[(k + 1) % len(ids)]
        folds.append(Fold(test, val, tuple(s for s in ids if s not in (test, val))))
    return folds


# ---------------------------------------------------------------- manifests


def read_manifest(path) -> dict[str, Path]:
    """``subject_id,path`` CSV; relative paths resolve against the manifest directory."""
    path = Path(path)
    out: dict[str, Path] = {}
    with open(path, newline="") as fh:
        for n, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if n == 1 and row[0].strip() == "subject_id":
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{n}: expected subject_id,path")
            sid, rec = row[0].strip(), Path(row[1].strip())
            if sid in out:
                raise ValueError(f"{path}:{n}: duplicate subject {sid!r}")
            out[sid] = rec if rec.is_absolute() else path.parent / rec
    return out


def write_manifest(path, entries: dict[str, str]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "path"])
        for sid in sorted(entries):
            w.writerow([sid, entries[sid]])


def _csv_header(path) -> list[str]:
    with open(path, newline="") as fh:
        first = fh.readline()
    return [c.strip() for c in first.split(",")]


def load_series(path, fs: float | None = None) -> RRSeries:
    """Clean R-R series from a WFDB header, an R-R CSV, an R-peak CSV or an ECG CSV (with ``fs``)."""
    path = Path(path)
    if path.suffix == ".hea":
        return clean_intervals(detect_rpeaks(read_wfdb(path)))
    header = _csv_header(path)
    if header[: len(RR_CSV_HEADER)] == RR_CSV_HEADER:
        return RRSeries.from_csv(path)
    if fs is not None:
        return clean_intervals(detect_rpeaks(read_ecg_csv(path, fs)))
    return clean_intervals(read_rpeaks_csv(path))


def load_subjects(manifest: dict[str, Path]) -> dict[str, RRSeries]:
    return {sid: load_series(p) for sid, p in sorted(manifest.items())}
