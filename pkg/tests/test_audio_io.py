import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qear.audio_io import (
    MalformedHeaderError,
    StereoSignal,
    TruncatedDataError,
    UnsupportedFormatError,
    read_wav,
    segment_count,
    segment_signal,
    write_wav,
)


def _random_signal(n, seed=0, fs=48_000):
    rng = np.random.default_rng(seed)
    return StereoSignal(fs, rng.uniform(-1, 1, n), rng.uniform(-1, 1, n))


def _raw_wav(tag, channels, rate, bits, payload, declared=None):
    block = channels * bits // 8
    size = len(payload) if declared is None else declared
    return struct.pack(
        "<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + size, b"WAVE", b"fmt ", 16, tag, channels,
        rate, rate * block, block, bits, b"data", size,
    ) + payload


def test_silence_24bit(tmp_path):
    p = tmp_path / "z.wav"
    write_wav(StereoSignal(48_000, np.zeros(10), np.zeros(10)), p, "24")
    raw = p.read_bytes()
    assert raw[44:] == bytes(10 * 2 * 3)
    sig = read_wav(p)
    assert len(sig) == 10
    assert np.all(sig.left == 0) and np.all(sig.right == 0)


def test_sample_rate_from_header(tmp_path):
    p = tmp_path / "a.wav"
    write_wav(_random_signal(100), p)
    assert read_wav(p).sample_rate == 48000


def test_full_scale_24bit_maps_to_max_int(tmp_path):
    p = tmp_path / "fs.wav"
    write_wav(StereoSignal(48_000, [1.0], [-1.0]), p, "24")
    frame = p.read_bytes()[44:50]
    left = int.from_bytes(frame[:3], "little", signed=True)
    right = int.from_bytes(frame[3:], "little", signed=True)
    assert left == 2 ** 23 - 1
    assert right == -(2 ** 23 - 1)


@pytest.mark.parametrize("depth, bound", [("24", 2.0 ** -23), ("16", 2.0 ** -15), ("32f", 2.0 ** -24)])
def test_round_trip_quantization_bound(tmp_path, depth, bound):
    sig = _random_signal(5000, seed=3)
    p = tmp_path / f"rt{depth}.wav"
    write_wav(sig, p, depth)
    back = read_wav(p)
    assert np.max(np.abs(back.left - sig.left)) <= bound
    assert np.max(np.abs(back.right - sig.right)) <= bound


def test_clipping_is_counted(tmp_path):
    n = write_wav(StereoSignal(48_000, [1.5, 0.0], [-2.0, 0.2]), tmp_path / "c.wav")
    assert n == 2
    back = read_wav(tmp_path / "c.wav")
    assert back.left[0] == 1.0 and back.right[0] == -1.0


def test_invalid_bit_depth(tmp_path):
    with pytest.raises(ValueError):
        write_wav(_random_signal(4), tmp_path / "x.wav", "8")


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        write_wav(_random_signal(4), tmp_path / "missing" / "x.wav")


def test_mono_is_duplicated(tmp_path):
    vals = np.array([0, 1000, -1000, 32767], dtype="<i2")
    p = tmp_path / "m.wav"
    p.write_bytes(_raw_wav(1, 1, 22_050, 16, vals.tobytes()))
    sig = read_wav(p)
    assert sig.from_mono
    assert sig.sample_rate == 22_050
    np.testing.assert_array_equal(sig.left, sig.right)
    np.testing.assert_allclose(sig.left, vals / 32767)


def test_float32_file(tmp_path):
    vals = np.array([0.25, -0.5, 0.125, 1.0], dtype="<f4")
    p = tmp_path / "f.wav"
    p.write_bytes(_raw_wav(3, 2, 48_000, 32, vals.tobytes()))
    sig = read_wav(p)
    np.testing.assert_array_equal(sig.left, [0.25, 0.125])
    np.testing.assert_array_equal(sig.right, [-0.5, 1.0])


def test_errors_are_distinct(tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"RIFX" + bytes(40))
    with pytest.raises(MalformedHeaderError):
        read_wav(bad)

    codec = tmp_path / "codec.wav"
    codec.write_bytes(_raw_wav(0x55, 2, 48_000, 16, bytes(8)))
    with pytest.raises(UnsupportedFormatError):
        read_wav(codec)

    eight = tmp_path / "eight.wav"
    eight.write_bytes(_raw_wav(1, 2, 48_000, 8, bytes(8)))
    with pytest.raises(UnsupportedFormatError):
        read_wav(eight)

    short = tmp_path / "short.wav"
    short.write_bytes(_raw_wav(1, 2, 48_000, 24, bytes(60), declared=600))
    with pytest.raises(TruncatedDataError):
        read_wav(short)

    nodata = tmp_path / "nodata.wav"
    nodata.write_bytes(_raw_wav(1, 2, 48_000, 16, b"")[:36])
    with pytest.raises(MalformedHeaderError):
        read_wav(nodata)


def test_skips_unknown_chunks(tmp_path):
    body = _raw_wav(1, 2, 48_000, 16, np.array([1, 2], "<i2").tobytes())
    # splice a LIST chunk between fmt and data
    extra = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
    raw = body[:36] + extra + body[36:]
    raw = raw[:4] + struct.pack("<I", len(raw) - 8) + raw[8:]
    p = tmp_path / "list.wav"
    p.write_bytes(raw)
    sig = read_wav(p)
    assert len(sig) == 1


def test_stereo_signal_invariants():
    with pytest.raises(ValueError):
        StereoSignal(48_000, np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        StereoSignal(0, np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        StereoSignal(48_000, [np.nan], [0.0])


def test_segment_counts_default_length():
    sig = _random_signal(3 * 31_994)
    segs = segment_signal(sig, 31_994, source_id="rec")
    assert len(segs) == 3
    assert [s.index for s in segs] == [0, 1, 2]
    assert all(s.source_id == "rec" and len(s) == 31_994 for s in segs)


def test_short_input_gives_no_segments():
    assert segment_signal(_random_signal(100), 101) == []


def test_half_hop_tiling():
    L = 64
    sig = _random_signal(2 * L, seed=5)
    segs = segment_signal(sig, L, L // 2)
    assert len(segs) == 3
    for i, s in enumerate(segs):
        np.testing.assert_array_equal(s.samples.left, sig.left[i * L // 2:i * L // 2 + L])
    # first and last segment tile the input exactly
    np.testing.assert_array_equal(
        np.concatenate([segs[0].samples.right, segs[2].samples.right]), sig.right)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(0, 400), seg=st.integers(1, 100), hop=st.integers(1, 100))
def test_segment_count_formula(n, seg, hop):
    sig = StereoSignal(8000, np.arange(n, dtype=float) / 1000, np.zeros(n))
    segs = segment_signal(sig, seg, hop)
    expected = 0 if n < seg else (n - seg) // hop + 1
    assert len(segs) == expected == segment_count(n, seg, hop)
    for s in segs:
        start = s.meta["offset"]
        assert start + seg <= n
        np.testing.assert_array_equal(s.samples.left, sig.left[start:start + seg])


def test_segment_rejects_bad_params():
    with pytest.raises(ValueError):
        segment_signal(_random_signal(10), 0)
    with pytest.raises(ValueError):
        segment_signal(_random_signal(10), 5, 0)
