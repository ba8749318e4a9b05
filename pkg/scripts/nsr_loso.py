"""Leave-one-subject-out sweep over a directory of long-term ECG records (e.g. the MIT-BIH NSR database).

Each WFDB record is converted once to a cleaned R-R CSV (cached under
``<out>/rr``); then every variant is trained and tested per fold and the
summary tables are written to ``<out>/report``. The data is not bundled:
point ``--data`` at a local copy of the records (``*.hea`` + ``*.dat``).

    python scripts/nsr_loso.py --data ~/data/nsrdb --out runs/nsr --test-lens 600 1800
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from igbeat.backbone import VARIANTS
from igbeat.harness.cli import main as cli_main
from igbeat.harness.config import ExperimentConfig, load_config
from igbeat.harness.data import load_series, read_manifest, write_manifest
from igbeat.harness.runner import run_loso

log = logging.getLogger("nsr_loso")


def build_rr_cache(data_dir: Path, out_dir: Path, max_beats: int | None) -> Path:
    """Preprocess every ``*.hea`` record once; returns the manifest path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for hea in sorted(data_dir.glob("*.hea")):
        rr_csv = out_dir / f"{hea.stem}_rr.csv"
        if not rr_csv.exists():
            series = load_series(hea)
            if max_beats:
                series = series.head(max_beats)
            series.to_csv(rr_csv)
            log.info("%s: %d intervals", hea.stem, len(series))
        entries[hea.stem] = rr_csv.name
    if not entries:
        raise FileNotFoundError(f"no *.hea records in {data_dir}")
    write_manifest(out_dir / "manifest.csv", entries)
    return out_dir / "manifest.csv"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", type=Path, required=True, help="directory of WFDB records")
    ap.add_argument("--out", type=Path, default=Path("runs/nsr"))
    ap.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    ap.add_argument("--train-len", type=int, default=600)
    ap.add_argument("--test-lens", type=int, nargs="+", default=[600, 1800])
    ap.add_argument("--max-beats", type=int, help="truncate each record (desk-scale runs)")
    ap.add_argument("--time-budget", type=float, help="seconds of training per fold")
    ap.add_argument("--config", type=Path, help="flat key=value overrides applied to every run")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if not args.data.is_dir():
        print(f"data directory {args.data} not found; this experiment needs the ECG records locally",
              file=sys.stderr)
        return 2

    manifest = build_rr_cache(args.data, args.out / "rr", args.max_beats)
    subjects = {sid: load_series(p) for sid, p in sorted(read_manifest(manifest).items())}
    base: ExperimentConfig = load_config(args.config, train_seq_len=args.train_len, manifest=str(manifest))
    for variant in args.variants:
        for test_len in args.test_lens:
            cfg = base.replace(variant=variant, test_seq_len=test_len,
                               out_dir=str(args.out / f"{variant}_train{args.train_len}_test{test_len}"))
            results = run_loso(subjects, cfg, cfg.out_dir, max_seconds=args.time_budget)
            for r in results:
                print(f"{variant}\ttest{test_len}\t{r.subject_id}\tmean KSD {r.mean_ksd:.4f} [{r.sd_ksd:.4f}]")
    return cli_main(["report", str(args.out), "--out", str(args.out / "report")])


if __name__ == "__main__":
    raise SystemExit(main())
