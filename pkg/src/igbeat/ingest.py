"""Readers for WFDB records (formats 212 and 16), R-peak CSVs and raw ECG CSVs."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .preprocess import EcgRecord

SUPPORTED_FORMATS = (212, 16)
_DEFAULT_GAIN = 200.0


class WfdbError(ValueError):
    pass


@dataclass
class SignalSpec:
    file_name: str
    fmt: int
    gain: float = _DEFAULT_GAIN
    baseline: int = 0
    units: str = "mV"
    adc_zero: int = 0
    description: str = ""


@dataclass
class WfdbHeader:
    record_name: str
    n_signals: int
    fs: float
    n_samples: int | None
    signals: list[SignalSpec] = field(default_factory=list)


_RECORD_RE = re.compile(r"^(?P<name>[^\s/]+)(?P<seg>/\d+)?$")
_FS_RE = re.compile(r"^(?P<fs>[0-9.eE+-]+)(/[0-9.eE+-]+)?(\([0-9.eE+-]+\))?$")
_FMT_RE = re.compile(r"^(?P<fmt>\d+)(x\d+)?(:\d+)?(\+\d+)?$")
_GAIN_RE = re.compile(r"^(?P<gain>[0-9.eE+-]+)(\((?P<base>-?\d+)\))?(/(?P<units>\S+))?$")


def parse_header(text: str, source: str = "<header>") -> WfdbHeader:
    lines = [(n, ln.strip()) for n, ln in enumerate(text.splitlines(), 1)]
    lines = [(n, ln) for n, ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise WfdbError(f"{source}: empty header")
    lineno, record = lines[0]
    tok = record.split()
    if len(tok) < 2:
        raise WfdbError(f"{source}:{lineno}: record line needs at least name and signal count")
    m = _RECORD_RE.match(tok[0])
    if not m:
        raise WfdbError(f"{source}:{lineno}: bad record name {tok[0]!r}")
    if m.group("seg"):
        raise WfdbError(f"{source}:{lineno}: multi-segment records are not supported")
    try:
        n_sig = int(tok[1])
    except ValueError:
        raise WfdbError(f"{source}:{lineno}: bad signal count {tok[1]!r}") from None
    if n_sig < 1:
        raise WfdbError(f"{source}:{lineno}: record has no signals")
    fs = 250.0
    if len(tok) > 2:
        fm = _FS_RE.match(tok[2])
        if not fm:
            raise WfdbError(f"{source}:{lineno}: bad sampling frequency {tok[2]!r}")
        fs = float(fm.group("fs"))
    if fs <= 0:
        raise WfdbError(f"{source}:{lineno}: sampling frequency must be positive")
    n_samples = None
    if len(tok) > 3:
        try:
            n_samples = int(tok[3])
        except ValueError:
            raise WfdbError(f"{source}:{lineno}: bad sample count {tok[3]!r}") from None

    specs = []
    if len(lines) - 1 < n_sig:
        raise WfdbError(f"{source}: expected {n_sig} signal lines, found {len(lines) - 1}")
    for lineno, ln in lines[1: 1 + n_sig]:
        specs.append(_parse_signal_line(ln, f"{source}:{lineno}"))
    if len({s.file_name for s in specs}) > 1:
        raise WfdbError(f"{source}: signals spread over several files are not supported")
    if len({s.fmt for s in specs}) > 1:
        raise WfdbError(f"{source}: mixed storage formats are not supported")
    return WfdbHeader(tok[0], n_sig, fs, n_samples, specs)


def _parse_signal_line(line: str, where: str) -> SignalSpec:
    tok = line.split()
    if len(tok) < 2:
        raise WfdbError(f"{where}: signal line needs file name and format")
    fm = _FMT_RE.match(tok[1])
    if not fm:
        raise WfdbError(f"{where}: bad format field {tok[1]!r}")
    fmt = int(fm.group("fmt"))
    if fmt not in SUPPORTED_FORMATS:
        raise WfdbError(f"{where}: unsupported signal format {fmt}; supported {SUPPORTED_FORMATS}")
    if any(fm.group(i) for i in (2, 3, 4)):
        raise WfdbError(f"{where}: sample skew/offset/frame multiplicity not supported")
    spec = SignalSpec(tok[0], fmt)
    base_given = False
    if len(tok) > 2:
        gm = _GAIN_RE.match(tok[2])
        if not gm:
            raise WfdbError(f"{where}: bad gain field {tok[2]!r}")
        gain = float(gm.group("gain"))
        spec.gain = gain if gain != 0 else _DEFAULT_GAIN
        if gm.group("base") is not None:
            spec.baseline = int(gm.group("base"))
            base_given = True
        if gm.group("units"):
            spec.units = gm.group("units")
    if len(tok) > 4:
        try:
            spec.adc_zero = int(tok[4])
        except ValueError:
            raise WfdbError(f"{where}: bad ADC zero {tok[4]!r}") from None
    if not base_given:
        spec.baseline = spec.adc_zero
    if len(tok) > 8:
        spec.description = " ".join(tok[8:])
    return spec


# ---------------------------------------------------------------- format 212


def decode_212(data: bytes | np.ndarray, n_values: int | None = None) -> np.ndarray:
    """Unpack 12-bit two's-complement pairs from 3-byte groups.

    byte0 holds the low 8 bits of sample A, the low nibble of byte1 its high
    4 bits; byte2 holds the low 8 bits of sample B, the high nibble of byte1
    its high 4 bits.
    """
    raw = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data.astype(np.uint8)
    n_groups = raw.size // 3
    if n_values is None:
        n_values = 2 * n_groups
    needed = (n_values + 1) // 2
    if n_groups < needed:
        raise WfdbError(f"format 212 data truncated: need {needed * 3} bytes, have {raw.size}")
    g = raw[: needed * 3].reshape(-1, 3).astype(np.int32)
    a = g[:, 0] | ((g[:, 1] & 0x0F) << 8)
    b = g[:, 2] | ((g[:, 1] & 0xF0) << 4)
    out = np.empty(2 * needed, dtype=np.int32)
    out[0::2] = a
    out[1::2] = b
    out[out > 2047] -= 4096
    return out[:n_values]


def encode_212(values) -> bytes:
    v = np.asarray(values, dtype=np.int64)
    if np.any(v < -2048) or np.any(v > 2047):
        raise ValueError("format 212 holds 12-bit values in [-2048, 2047]")
    if v.size % 2:
        v = np.append(v, 0)
    u = (v & 0xFFF).reshape(-1, 2)
    out = np.empty((u.shape[0], 3), dtype=np.uint8)
    out[:, 0] = u[:, 0] & 0xFF
    out[:, 1] = ((u[:, 0] >> 8) & 0x0F) | ((u[:, 1] >> 4) & 0xF0)
    out[:, 2] = u[:, 1] & 0xFF
    return out.tobytes()


def decode_16(data: bytes, n_values: int | None = None) -> np.ndarray:
    if n_values is None:
        n_values = len(data) // 2
    if len(data) < 2 * n_values:
        raise WfdbError(f"format 16 data truncated: need {2 * n_values} bytes, have {len(data)}")
    return np.frombuffer(data[: 2 * n_values], dtype="<i2").astype(np.int32)


def to_physical(adu, gain: float, baseline: float) -> np.ndarray:
    if gain == 0:
        raise ValueError("gain must be non-zero")
    return (np.asarray(adu, dtype=np.float64) - baseline) / gain


def to_adu(physical, gain: float, baseline: float) -> np.ndarray:
    return np.asarray(physical, dtype=np.float64) * gain + baseline


def read_wfdb(header_path, channel: int = 0) -> EcgRecord:
    """Read one signal of a single-segment WFDB record as physical units."""
    header_path = Path(header_path)
    if header_path.suffix != ".hea":
        header_path = header_path.with_suffix(".hea")
    hdr = parse_header(header_path.read_text(), str(header_path))
    if not 0 <= channel < hdr.n_signals:
        raise WfdbError(f"channel {channel} out of range for {hdr.n_signals} signals")
    spec = hdr.signals[channel]
    data = (header_path.parent / spec.file_name).read_bytes()
    if hdr.n_samples is not None:
        n_values = hdr.n_samples * hdr.n_signals
    elif spec.fmt == 212:
        n_values = (len(data) // 3) * 2 // hdr.n_signals * hdr.n_signals
    else:
        n_values = len(data) // 2 // hdr.n_signals * hdr.n_signals
    adu = decode_212(data, n_values) if spec.fmt == 212 else decode_16(data, n_values)
    frames = adu.reshape(-1, hdr.n_signals)[:, channel].astype(np.float64)
    invalid = -2048 if spec.fmt == 212 else -32768
    frames[frames == invalid] = spec.baseline  # WFDB "no data" sentinel -> 0 mV
    return EcgRecord(to_physical(frames, spec.gain, spec.baseline), hdr.fs, hdr.record_name)


def write_wfdb(record_dir, name: str, adu, fs: float, gain: float = _DEFAULT_GAIN, baseline: int = 0,
               fmt: int = 212) -> Path:
    """Write a single-signal record (used to build test fixtures)."""
    record_dir = Path(record_dir)
    adu = np.asarray(adu, dtype=np.int64)
    dat = f"{name}.dat"
    if fmt == 212:
        payload = encode_212(adu)
    elif fmt == 16:
        payload = adu.astype("<i2").tobytes()
    else:
        raise WfdbError(f"unsupported format {fmt}")
    (record_dir / dat).write_bytes(payload)
    hea = record_dir / f"{name}.hea"
    hea.write_text(f"{name} 1 {fs:g} {adu.size}\n{dat} {fmt} {gain:g}({baseline})/mV 12 0 0 0 0 ECG\n")
    return hea


# ---------------------------------------------------------------- CSV


def _rows(path):
    with open(path, newline="") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                yield n, [c.strip() for c in line.split(",")]


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_rpeaks_csv(path) -> np.ndarray:
    """Peak times from ``time`` or ``beat_index,time`` rows; a header row is skipped."""
    times: list[float] = []
    prev_line = None
    for n, cells in _rows(path):
        if not all(_is_number(c) for c in cells):
            if times:
                raise ValueError(f"{path}:{n}: non-numeric row {cells!r}")
            continue
        t = float(cells[-1])
        if times and t <= times[-1]:
            raise ValueError(f"{path}:{n}: peak times not strictly increasing ({t} after {times[-1]} on line {prev_line})")
        times.append(t)
        prev_line = n
    return np.asarray(times)


def read_ecg_csv(path, fs: float | None = None, record_id: str | None = None) -> EcgRecord:
    """Raw ECG from ``value`` rows (needs ``fs``) or ``time_s,value`` rows (fs inferred)."""
    t: list[float] = []
    v: list[float] = []
    for n, cells in _rows(path):
        if not all(_is_number(c) for c in cells):
            if v:
                raise ValueError(f"{path}:{n}: non-numeric row {cells!r}")
            continue
        if len(cells) >= 2:
            t.append(float(cells[0]))
        v.append(float(cells[-1]))
    if fs is None:
        if len(t) < 2:
            raise ValueError(f"{path}: sample rate unknown; pass fs or include a time column")
        fs = 1.0 / float(np.median(np.diff(t)))
    return EcgRecord(np.asarray(v), float(fs), record_id or Path(path).stem)
