"""One LOSO fold end to end: segment, train, checkpoint, evaluate, write artefacts."""

from __future__ import annotations

import json
import logging
import zlib
from pathlib import Path

import numpy as np

from ..backbone import save_checkpoint
from ..preprocess import RRSeries
from .config import ExperimentConfig, echo_config
from .data import Fold, loso_folds, segment
from .results import FoldResult, evaluate, write_fold_csv, write_ks_plots
from .training import train

log = logging.getLogger(__name__)


def fold_seed(seed: int, subject_id: str) -> np.random.Generator:
    # stable across processes (str hash is salted)
    return np.random.default_rng([seed, zlib.crc32(subject_id.encode())])


def run_fold(fold: Fold, subjects: dict[str, RRSeries], cfg: ExperimentConfig, out_dir,
             max_seconds: float | None = None, plots: bool = True) -> FoldResult:
    out_dir = Path(out_dir) / f"fold_{fold.test}"
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out_dir)
    if fold.test in fold.train or fold.val in fold.train:
        raise ValueError(f"fold for {fold.test}: test/validation subject present in training set")

    train_segs = [s for sid in fold.train for s in segment(subjects[sid], cfg.train_seq_len)]
    val_segs = segment(subjects[fold.val], cfg.train_seq_len)
    test_segs = segment(subjects[fold.test], cfg.test_seq_len)
    if not train_segs or not val_segs:
        raise ValueError(f"fold {fold.test}: empty training or validation set at length {cfg.train_seq_len}")
    if not test_segs:
        raise ValueError(f"fold {fold.test}: test subject shorter than {cfg.test_seq_len} intervals")

    rng = fold_seed(cfg.seed, fold.test)
    res = train(train_segs, val_segs, cfg, rng, max_seconds=max_seconds)
    save_checkpoint(out_dir / "checkpoint.json", res.params, extra={
        "test_subject": fold.test, "val_subject": fold.val, "train_subjects": list(fold.train),
        "best_epoch": res.best_epoch, "seed": cfg.seed,
    })
    result = evaluate(res.params, test_segs, fold.test, cfg.variant)
    result.best_val_nll = res.best_val_nll
    result.epochs_trained = res.epochs_trained

    fold_log = {
        "test_subject": fold.test,
        "val_subject": fold.val,
        "train_subjects": list(fold.train),
        "n_train_segments": len(train_segs),
        "n_val_segments": len(val_segs),
        "n_test_segments": len(test_segs),
        "best_epoch": res.best_epoch,
        "best_val_nll": res.best_val_nll,
        "epochs_trained": res.epochs_trained,
        "stop_reason": res.stop_reason,
        "history": res.history,
        "test_ksd": result.ksds.tolist(),
    }
    (out_dir / "train_log.json").write_text(json.dumps(fold_log, indent=1))
    write_fold_csv(result, out_dir)
    if plots:
        write_ks_plots(result, out_dir / "ks_plots")
    log.info("fold %s: mean KSD %.4f over %d segments", fold.test, result.mean_ksd, len(result.reports))
    return result


def run_loso(subjects: dict[str, RRSeries], cfg: ExperimentConfig, out_dir, only: list[str] | None = None,
             max_seconds: float | None = None) -> list[FoldResult]:
    folds = loso_folds(subjects)
    if only:
        unknown = set(only) - set(subjects)
        if unknown:
            raise ValueError(f"unknown subjects {sorted(unknown)}")
        folds = [f for f in folds if f.test in only]
    echo_config(cfg, out_dir)
    return [run_fold(f, subjects, cfg, out_dir, max_seconds=max_seconds) for f in folds]
