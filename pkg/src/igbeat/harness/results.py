"""Per-fold evaluation, fold CSVs and the Tables-1/2 style summary."""

from __future__ import annotations

import csv
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..backbone import ModelParameters, forward
from ..gof import KSReport, evaluate_trajectory, ks_plot_csv, ks_plot_svg
from ..igdist import IGTrajectory

FOLD_CSV_HEADER = ["subject_id", "variant", "segment_index", "ksd", "bound", "pass"]
SUMMARY_CSV_HEADER = ["subject_id", "variant", "segment_len", "mean_ksd", "sd_ksd", "pass_fraction"]
# column order and labels used by the published tables
TABLE_COLUMNS = {"gru": "GRU", "lstm": "LSTM", "ssm-diag": "S4", "ssm-selective": "Mamba"}
OVERALL = "Overall Mean"


@dataclass
class FoldResult:
    subject_id: str
    variant: str
    segment_len: int
    reports: list[KSReport] = field(default_factory=list)
    best_val_nll: float = math.nan
    epochs_trained: int = 0

    @property
    def ksds(self) -> np.ndarray:
        return np.array([r.ksd for r in self.reports])

    @property
    def mean_ksd(self) -> float:
        return float(np.mean(self.ksds))

    @property
    def sd_ksd(self) -> float:
        return sample_sd(self.ksds)

    @property
    def pass_fraction(self) -> float:
        return float(np.mean([r.passed for r in self.reports]))


def sample_sd(values) -> float:
    """Sample standard deviation; 0 for a single value."""
    v = np.asarray(values, dtype=np.float64)
    return float(np.std(v, ddof=1)) if v.size > 1 else 0.0


def evaluate(params: ModelParameters | None, segments, subject_id: str, variant: str,
             trajectories: list[IGTrajectory] | None = None) -> FoldResult:
    """Forward, rescale and KS-test every test segment.

    ``trajectories`` bypasses the network (oracle evaluation with known
    generating parameters).
    """
    if trajectories is None:
        if not segments:
            raise ValueError("no test segments")
        trajectories = [forward(np.asarray(s), params) for s in segments]
    if not trajectories:
        raise ValueError("no test segments")
    seg_len = len(trajectories[0]) + 1
    result = FoldResult(subject_id, variant, seg_len)
    result.reports = [evaluate_trajectory(t) for t in trajectories]
    return result


def fold_csv_name(subject_id: str, variant: str, segment_len: int) -> str:
    return f"fold_{subject_id}_{variant}_test{segment_len}.csv"


def write_fold_csv(result: FoldResult, out_dir) -> Path:
    path = Path(out_dir) / fold_csv_name(result.subject_id, result.variant, result.segment_len)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FOLD_CSV_HEADER)
        for i, r in enumerate(result.reports):
            w.writerow([result.subject_id, result.variant, i, repr(r.ksd), repr(r.bound), int(r.passed)])
    return path


def write_ks_plots(result: FoldResult, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, r in enumerate(result.reports):
        stem = f"ks_{result.subject_id}_{result.variant}_test{result.segment_len}_seg{i:03d}"
        ks_plot_csv(r, out_dir / f"{stem}.csv")
        ks_plot_svg(r, out_dir / f"{stem}.svg", title=f"{result.subject_id} seg {i}")
        paths.append(out_dir / f"{stem}.svg")
    return paths


_FOLD_NAME = re.compile(r"^fold_(?P<sid>.+)_(?P<variant>gru|lstm|ssm-diag|ssm-selective)_test(?P<len>\d+)\.csv$")


@dataclass
class SubjectRow:
    subject_id: str
    variant: str
    segment_len: int
    ksds: list[float]
    passes: list[int]

    @property
    def mean_ksd(self) -> float:
        return float(np.mean(self.ksds))

    @property
    def sd_ksd(self) -> float:
        return sample_sd(self.ksds)

    @property
    def pass_fraction(self) -> float:
        return float(np.mean(self.passes))


def read_fold_csv(path, segment_len: int | None = None) -> list[SubjectRow]:
    path = Path(path)
    m = _FOLD_NAME.match(path.name)
    if segment_len is None:
        if not m:
            raise ValueError(f"{path}: cannot infer test segment length from file name; pass it explicitly")
        segment_len = int(m.group("len"))
    groups: dict[tuple[str, str], SubjectRow] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FOLD_CSV_HEADER:
            raise ValueError(f"{path}: expected columns {FOLD_CSV_HEADER}, got {reader.fieldnames}")
        for row in reader:
            key = (row["subject_id"], row["variant"])
            if key not in groups:
                groups[key] = SubjectRow(key[0], key[1], segment_len, [], [])
            groups[key].ksds.append(float(row["ksd"]))
            groups[key].passes.append(int(row["pass"]))
    return list(groups.values())


def collect_fold_csvs(paths, segment_len: int | None = None) -> list[SubjectRow]:
    files: list[Path] = []
    for p in map(Path, paths):
        files.extend(sorted(p.rglob("fold_*.csv")) if p.is_dir() else [p])
    rows = []
    for f in files:
        rows.extend(read_fold_csv(f, segment_len))
    return rows


def overall_means(rows: list[SubjectRow]) -> dict[tuple[str, int], float]:
    """Across-subject mean of subject-level mean KSD, per (variant, segment length)."""
    acc: dict[tuple[str, int], list[float]] = defaultdict(list)
    for r in rows:
        acc[(r.variant, r.segment_len)].append(r.mean_ksd)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def write_summary(rows: list[SubjectRow], path) -> Path:
    """Long-form summary with one row per (subject, variant, length) plus overall rows."""
    rows = sorted(rows, key=lambda r: (r.segment_len, r.variant, r.subject_id))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_CSV_HEADER)
        for r in rows:
            w.writerow([r.subject_id, r.variant, r.segment_len, f"{r.mean_ksd:.6f}", f"{r.sd_ksd:.6f}",
                        f"{r.pass_fraction:.6f}"])
        overall = overall_means(rows)
        for (variant, seg_len), value in sorted(overall.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            subj = [r for r in rows if r.variant == variant and r.segment_len == seg_len]
            w.writerow([OVERALL, variant, seg_len, f"{value:.6f}", f"{sample_sd([r.mean_ksd for r in subj]):.6f}",
                        f"{np.mean([r.pass_fraction for r in subj]):.6f}"])
    return Path(path)


def write_table(rows: list[SubjectRow], segment_len: int, path) -> Path:
    """Wide table: ``Subject ID, GRU, LSTM, S4, Mamba`` with ``mean [sd]`` cells and an Overall Mean row."""
    rows = [r for r in rows if r.segment_len == segment_len]
    variants = [v for v in TABLE_COLUMNS if any(r.variant == v for r in rows)]
    by_key = {(r.subject_id, r.variant): r for r in rows}
    subjects = sorted({r.subject_id for r in rows})
    overall = overall_means(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["Subject ID"] + [TABLE_COLUMNS[v] for v in variants])
        for sid in subjects:
            cells = []
            for v in variants:
                r = by_key.get((sid, v))
                cells.append(f"{r.mean_ksd:.3f} [{r.sd_ksd:.3f}]" if r else "")
            w.writerow([sid] + cells)
        w.writerow([OVERALL] + [f"{overall[(v, segment_len)]:.4f}" for v in variants])
    return Path(path)
