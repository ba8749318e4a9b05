import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igbeat.ingest import (
    WfdbError,
    decode_16,
    decode_212,
    encode_212,
    parse_header,
    read_ecg_csv,
    read_rpeaks_csv,
    read_wfdb,
    to_adu,
    to_physical,
    write_wfdb,
)


def test_212_bit_layout():
    np.testing.assert_array_equal(decode_212(bytes([0x01, 0x00, 0x00])), [1, 0])
    np.testing.assert_array_equal(decode_212(bytes([0xFF, 0x0F, 0x00])), [-1, 0])
    np.testing.assert_array_equal(decode_212(bytes([0x00, 0xF0, 0xFF])), [0, -1])
    np.testing.assert_array_equal(decode_212(bytes([0xFF, 0x07, 0x00])), [2047, 0])
    np.testing.assert_array_equal(decode_212(bytes([0x00, 0x08, 0x00])), [-2048, 0])


def test_212_reference_decoder_agrees():
    # independent bit-by-bit decoder written straight from the byte layout
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, 3 * 500, dtype=np.uint8).tobytes()
    ref = []
    for k in range(0, len(raw), 3):
        b0, b1, b2 = raw[k], raw[k + 1], raw[k + 2]
        for v in (b0 | ((b1 & 0x0F) << 8), b2 | ((b1 & 0xF0) << 4)):
            ref.append(v - 4096 if v & 0x800 else v)
    np.testing.assert_array_equal(decode_212(raw), ref)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-2048, 2047), min_size=1, max_size=101))
def test_212_roundtrip_property(values):
    np.testing.assert_array_equal(decode_212(encode_212(values), len(values)), values)


def test_212_encode_rejects_out_of_range():
    with pytest.raises(ValueError):
        encode_212([2048])


def test_16_decode():
    np.testing.assert_array_equal(decode_16(np.array([-3, 7], dtype="<i2").tobytes()), [-3, 7])


def test_truncated_signal_file():
    with pytest.raises(WfdbError):
        decode_212(bytes([1, 2]), 2)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(1, 1000), st.integers(-1024, 1024))
def test_physical_conversion_invertible(mv, gain, base):
    assert to_physical(to_adu(mv, gain, base), gain, base) == pytest.approx(mv, abs=1e-9)


NSR_STYLE = """16265 2 128 11730944
16265.dat 212 200 11 0 -70 26851 0 ECG1
16265.dat 212 200 11 0 -45 2738 0 ECG2
# Age: 32  Sex: M
"""


def test_parse_nsr_style_header():
    h = parse_header(NSR_STYLE)
    assert (h.record_name, h.n_signals, h.fs, h.n_samples) == ("16265", 2, 128.0, 11730944)
    assert h.signals[0].fmt == 212 and h.signals[0].gain == 200 and h.signals[0].baseline == 0
    assert h.signals[1].description == "ECG2"


@pytest.mark.parametrize(
    "text,line",
    [
        ("rec 1 128\nrec.dat 80 200\n", 2),
        ("rec x 128\nrec.dat 212\n", 1),
        ("rec 1 abc\nrec.dat 212\n", 1),
        ("rec/2 1 128\nrec.dat 212\n", 1),
        ("rec 1 128\nrec.dat 212 abc\n", 2),
    ],
)
def test_malformed_header_names_line(text, line):
    with pytest.raises(WfdbError, match=f":{line}:"):
        parse_header(text, "h")


def test_header_missing_signal_lines():
    with pytest.raises(WfdbError):
        parse_header("rec 2 128\nrec.dat 212\n")


@pytest.mark.parametrize("fmt", [212, 16])
def test_read_written_record(tmp_path, fmt):
    adu = np.array([0, 100, -200, 2047, -2047, 5, -2048])
    write_wfdb(tmp_path, "r1", adu, 128.0, gain=200.0, baseline=10, fmt=fmt)
    rec = read_wfdb(tmp_path / "r1.hea")
    assert rec.fs == 128.0 and rec.record_id == "r1"
    expect = (adu - 10) / 200.0
    if fmt == 212:
        expect[-1] = 0.0  # invalid-sample sentinel maps to baseline
    np.testing.assert_allclose(rec.samples, expect)


def test_rpeaks_csv(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("0.0\n0.8\n1.6\n")
    np.testing.assert_allclose(read_rpeaks_csv(p), [0.0, 0.8, 1.6])
    p.write_text("time_s\n0.0\n0.8\n")
    np.testing.assert_allclose(read_rpeaks_csv(p), [0.0, 0.8])
    p.write_text("beat_index,time_s\n0,0.5\n1,1.25\n")
    np.testing.assert_allclose(read_rpeaks_csv(p), [0.5, 1.25])
    p.write_text("1.0\n0.5\n")
    with pytest.raises(ValueError, match=":2:"):
        read_rpeaks_csv(p)


def test_ecg_csv(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("time_s,mv\n0.0,0.1\n0.004,0.2\n0.008,0.3\n")
    rec = read_ecg_csv(p)
    assert rec.fs == pytest.approx(250.0)
    np.testing.assert_allclose(rec.samples, [0.1, 0.2, 0.3])
    p.write_text("0.1\n0.2\n")
    with pytest.raises(ValueError):
        read_ecg_csv(p)
    assert read_ecg_csv(p, fs=128).fs == 128
