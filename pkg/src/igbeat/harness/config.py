"""Experiment configuration and the flat ``key=value`` config format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from ..backbone import VARIANTS, BackboneConfig

TRAIN_LENGTHS = (100, 200, 300, 600)
TEST_LENGTHS = (600, 1800)
DATA_DIR_ENV = "IGBEAT_DATA_DIR"


@dataclass
class ExperimentConfig:
    variant: str = "gru"
    train_seq_len: int = 600
    test_seq_len: int = 600
    max_epochs: int = 2000
    patience: int = 50
    lr: float = 1e-3
    lr_factor: float = 1.0  # multiply lr by this after lr_patience epochs without improvement; 1 disables
    lr_patience: int = 10
    min_lr: float = 0.0
    ema_decay: float = 0.0  # > 0 validates and returns an exponential moving average of the weights
    restore_best: bool = True  # False returns the final (averaged) weights instead of the best-validation ones
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    seed: int = 0
    model_dim: int = 64
    state_dim: int = 32
    clip_at_inference: bool = True
    gate_tmax: float = 0.0
    manifest: str = ""
    out_dir: str = "runs"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("train_seq_len", "test_seq_len", "max_epochs", "batch_size", "model_dim", "state_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.train_seq_len < 2 or self.test_seq_len < 2:
            raise ValueError("sequence lengths must be >= 2")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_factor <= 1:
            raise ValueError("lr_factor must be in (0, 1]")
        if self.lr_patience < 1:
            raise ValueError("lr_patience must be >= 1")
        if self.min_lr < 0:
            raise ValueError("min_lr must be >= 0")
        if not 0 <= self.ema_decay < 1:
            raise ValueError("ema_decay must be in [0, 1)")

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            variant=self.variant,
            model_dim=self.model_dim,
            state_dim=self.state_dim,
            clip_at_inference=self.clip_at_inference,
            gate_tmax=self.gate_tmax,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def manifest_path(self) -> Path:
        if self.manifest:
            return Path(self.manifest)
        root = os.environ.get(DATA_DIR_ENV)
        if not root:
            raise ValueError(f"no manifest given and {DATA_DIR_ENV} is not set")
        return Path(root) / "manifest.csv"


def _coerce(raw: str, typ, key: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} as {typ}") from None
    return raw.strip()


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are ignored."""
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ValueError(f"{source}:{n}: unknown config key {key!r}")
        out[key] = _coerce(value, types[key], key)
    return out


def load_config(path, **overrides) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text(), str(path)) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in fields(cfg))


def echo_config(cfg: ExperimentConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.txt"
    path.write_text(dump_config(cfg), newline="\n")
    return path
