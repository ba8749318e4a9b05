"""Command line entry point: preprocess, synth, train, evaluate, report."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .. import synth as synthmod
from ..backbone import VARIANTS, load_checkpoint
from ..igdist import IGParams, IGTrajectory
from ..ingest import read_ecg_csv, read_wfdb, write_wfdb
from ..preprocess import clean_intervals, detect_rpeaks
from .config import TEST_LENGTHS, ExperimentConfig, echo_config, load_config
from .data import load_series, load_subjects, read_manifest, segment, write_manifest
from .results import collect_fold_csvs, evaluate, write_fold_csv, write_ks_plots, write_summary, write_table
from .runner import run_loso

log = logging.getLogger("igbeat")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--train-len", type=int, dest="train_seq_len")
    p.add_argument("--test-len", type=int, dest="test_seq_len")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--out", type=Path, dest="out_dir")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igbeat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="ECG/WFDB/R-peak file -> clean R-R CSV")
    _common(p)
    p.add_argument("--input", type=Path, required=True, help=".hea record, ECG CSV (with --fs) or R-peak CSV")
    p.add_argument("--fs", type=float, help="sample rate for single-column ECG CSV")
    p.add_argument("--rpeaks", action="store_true", help="input CSV holds R-peak times")

    p = sub.add_parser("synth", help="generate a synthetic dataset with known parameters")
    _common(p)
    p.add_argument("--subjects", type=int, default=18)
    p.add_argument("--beats", type=int, default=5000)
    p.add_argument("--kind", choices=("constant", "sinusoidal"), default="sinusoidal")
    p.add_argument("--ecg", action="store_true", help="also write 128 Hz format-212 WFDB records")

    p = sub.add_parser("train", help="train one fold or a full LOSO sweep")
    _common(p)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--fold", action="append", help="test subject to run (repeatable); default all")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--model-dim", type=int, dest="model_dim")
    p.add_argument("--state-dim", type=int, dest="state_dim")
    p.add_argument("--time-budget", type=float, help="seconds of training per fold")

    p = sub.add_parser("evaluate", help="checkpoint -> KS reports on one R-R series")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--subject", default=None)
    p.add_argument("--truth", type=Path, help="ground-truth parameter CSV (oracle evaluation, no checkpoint)")

    p = sub.add_parser("report", help="aggregate fold CSVs into summary tables")
    _common(p)
    p.add_argument("inputs", nargs="+", type=Path, help="fold CSVs or directories containing them")
    return parser


def _config(args, **extra) -> ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in
                 ("variant", "train_seq_len", "test_seq_len", "seed", "out_dir", "max_epochs", "patience",
                  "lr", "batch_size", "model_dim", "state_dim")}
    overrides.update(extra)
    overrides = {k: (str(v) if isinstance(v, Path) else v) for k, v in overrides.items()}
    return load_config(args.config, **overrides)


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    if args.input.suffix == ".hea":
        series = clean_intervals(detect_rpeaks(read_wfdb(args.input)))
    elif args.rpeaks or args.fs is None:
        series = load_series(args.input)
    else:
        series = clean_intervals(detect_rpeaks(read_ecg_csv(args.input, args.fs)))
    out = Path(cfg.out_dir)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"{args.input.stem}_rr.csv"
    series.to_csv(out)
    n_bad = int((~series.valid_mask).sum())
    print(f"{out}: {len(series)} intervals, {n_bad} interpolated")
    return 0


def write_truth_csv(traj: IGTrajectory, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "mu_s", "sigma_s", "target_s"])
        for i, (m, s, x) in enumerate(zip(traj.mu, traj.sigma, traj.targets)):
            w.writerow([i, repr(float(m)), repr(float(s)), repr(float(x))])


def read_truth_csv(path) -> IGTrajectory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    mu = np.array([float(r["mu_s"]) for r in rows])
    sigma = np.array([float(r["sigma_s"]) for r in rows])
    x = np.array([float(r["target_s"]) for r in rows])
    return IGTrajectory(IGParams(mu, sigma), x)


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    entries = {}
    for k in range(args.subjects):
        sid = f"syn{k:03d}"
        traj = synthmod.subject_trajectory(rng, args.kind)
        series, truth = synthmod.generate_rr(traj, args.beats, rng)
        series.to_csv(out / f"{sid}_rr.csv")
        write_truth_csv(truth, out / f"{sid}_truth.csv")
        entries[sid] = f"{sid}_rr.csv"
        if args.ecg:
            ecg = synthmod.generate_ecg(series.peak_times + 1.0, 128.0, 20.0, rng, record_id=sid)
            adu = np.clip(np.round(ecg.samples * 200.0), -2048, 2047).astype(int)
            write_wfdb(out, sid, adu, 128.0)
    write_manifest(out / "manifest.csv", entries)
    echo_config(cfg, out)
    print(f"wrote {args.subjects} subjects to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args, manifest=str(args.manifest) if args.manifest else None)
    manifest = read_manifest(cfg.manifest_path())
    subjects = load_subjects(manifest)
    results = run_loso(subjects, cfg, cfg.out_dir, only=args.fold, max_seconds=args.time_budget)
    for r in results:
        print(f"{r.subject_id}\t{r.variant}\tmean KSD {r.mean_ksd:.4f} [{r.sd_ksd:.4f}]\tpass {r.pass_fraction:.2f}")
    return 0


def cmd_evaluate(args) -> int:
    if args.truth is None and args.checkpoint is None:
        raise SystemExit("evaluate: need --checkpoint or --truth")
    cfg = _config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    sid = args.subject or args.input.stem.replace("_rr", "")
    if args.truth is not None:
        truth = read_truth_csv(args.truth)
        n = cfg.test_seq_len - 1
        trajs = [IGTrajectory(IGParams(truth.mu[k * cfg.test_seq_len: k * cfg.test_seq_len + n],
                                       truth.sigma[k * cfg.test_seq_len: k * cfg.test_seq_len + n]),
                              truth.targets[k * cfg.test_seq_len: k * cfg.test_seq_len + n])
                 for k in range(len(truth) // cfg.test_seq_len)]
        result = evaluate(None, [], sid, cfg.variant, trajectories=trajs)
    else:
        params, _ = load_checkpoint(args.checkpoint)
        segs = segment(load_series(args.input), cfg.test_seq_len)
        result = evaluate(params, segs, sid, params.config.variant)
    write_fold_csv(result, out)
    write_ks_plots(result, out / "ks_plots")
    print(f"{sid}\tmean KSD {result.mean_ksd:.4f} [{result.sd_ksd:.4f}]\tpass {result.pass_fraction:.2f}")
    return 0


def cmd_report(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = collect_fold_csvs(args.inputs, segment_len=args.test_seq_len)
    if not rows:
        raise SystemExit("report: no fold CSVs found")
    write_summary(rows, out / "summary.csv")
    for seg_len in sorted({r.segment_len for r in rows}):
        write_table(rows, seg_len, out / f"table_test{seg_len}.csv")
    print(f"summarised {len(rows)} subject rows into {out}")
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"igbeat {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
