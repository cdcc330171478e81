"""RIFF/WAVE reading and writing, plus fixed-length segmentation.

Samples are float64 in [-1, 1] internally; integer PCM only exists at the
file boundary.  Supported on disk: PCM 16/24-bit and IEEE float 32, mono or
stereo, little-endian.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 48_000
DEFAULT_SEGMENT_LEN = 31_994

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

BIT_DEPTHS = ("16", "24", "32f")


class WavError(Exception):
    """Base class for WAV parsing problems."""


class MalformedHeaderError(WavError):
    pass


class UnsupportedFormatError(WavError):
    pass


class TruncatedDataError(WavError):
    pass


@dataclass
class StereoSignal:
    sample_rate: int
    left: np.ndarray
    right: np.ndarray
    # True when the source file was mono and duplicated into both channels.
    from_mono: bool = False

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.float64)
        self.right = np.asarray(self.right, dtype=np.float64)
        if self.left.ndim != 1 or self.right.ndim != 1:
            raise ValueError("channels must be one-dimensional")
        if len(self.left) != len(self.right):
            raise ValueError(
                f"channel length mismatch: {len(self.left)} != {len(self.right)}"
            )
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        self.sample_rate = int(self.sample_rate)
        if not (np.all(np.isfinite(self.left)) and np.all(np.isfinite(self.right))):
            raise ValueError("non-finite samples")

    def __len__(self) -> int:
        return len(self.left)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def as_array(self) -> np.ndarray:
        """(2, n) view of the channels, left first."""
        return np.stack([self.left, self.right])


@dataclass
class AudioSegment:
    source_id: str
    index: int
    samples: StereoSignal
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)


def _full_scale(bits: int) -> int:
    return (1 << (bits - 1)) - 1


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)


def read_wav(path) -> StereoSignal:
    """Read a WAV file into a float64 :class:`StereoSignal`.

    Integer PCM is divided by ``2**(bits-1) - 1`` (the value ``write_wav``
    maps +1.0 to) and clipped to [-1, 1]; float data is taken as is.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeaderError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data_off = data_size = None
    for cid, off, size in _iter_chunks(data):
        if cid == b"fmt ":
            if size < 16 or off + 16 > len(data):
                raise MalformedHeaderError(f"{path}: short fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", data, off)
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise MalformedHeaderError(f"{path}: short extensible fmt chunk")
                (sub_tag,) = struct.unpack_from("<H", data, off + 24)
                fmt = (sub_tag,) + fmt[1:]
        elif cid == b"data":
            data_off, data_size = off, size
            break

    if fmt is None:
        raise MalformedHeaderError(f"{path}: missing fmt chunk")
    if data_off is None:
        raise MalformedHeaderError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{path}: {channels} channels")
    if rate <= 0:
        raise MalformedHeaderError(f"{path}: sample rate {rate}")
    if tag == _WAVE_FORMAT_PCM and bits in (16, 24):
        pass
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        pass
    else:
        raise UnsupportedFormatError(f"{path}: format tag {tag:#x} with {bits} bits")
    width = bits // 8
    if block_align != width * channels:
        raise MalformedHeaderError(f"{path}: block align {block_align}")

    available = len(data) - data_off
    if data_size > available or data_size % block_align:
        raise TruncatedDataError(
            f"{path}: data chunk declares {data_size} bytes, {available} present"
        )
    raw = np.frombuffer(data, dtype=np.uint8, count=data_size, offset=data_off)

    if tag == _WAVE_FORMAT_IEEE_FLOAT:
        x = raw.view("<f4").astype(np.float64)
    elif bits == 16:
        x = raw.view("<i2").astype(np.float64) / _full_scale(16)
    else:
        b = raw.reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        x = ints.astype(np.float64) / _full_scale(24)
    if tag != _WAVE_FORMAT_IEEE_FLOAT:
        np.clip(x, -1.0, 1.0, out=x)

    x = x.reshape(-1, channels)
    if channels == 1:
        return StereoSignal(rate, x[:, 0].copy(), x[:, 0].copy(), from_mono=True)
    return StereoSignal(rate, x[:, 0].copy(), x[:, 1].copy())


def write_wav(signal: StereoSignal, path, bit_depth: str = "24") -> int:
    """Write ``signal`` as a stereo WAV file; returns the number of clipped samples."""
    bit_depth = str(bit_depth)
    if bit_depth not in BIT_DEPTHS:
        raise ValueError(f"bit_depth must be one of {BIT_DEPTHS}, got {bit_depth!r}")

    x = signal.as_array().T  # (n, 2) interleaved
    clipped = int(np.count_nonzero(np.abs(x) > 1.0))
    if clipped:
        log.warning("write_wav: clipped %d samples outside [-1, 1]", clipped)
    x = np.clip(x, -1.0, 1.0)

    if bit_depth == "32f":
        tag, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
        payload = x.astype("<f4").tobytes()
    elif bit_depth == "16":
        tag, bits = _WAVE_FORMAT_PCM, 16
        payload = np.round(x * _full_scale(16)).astype("<i2").tobytes()
    else:
        tag, bits = _WAVE_FORMAT_PCM, 24
        ints = np.round(x * _full_scale(24)).astype("<i4").reshape(-1)
        payload = ints.view(np.uint8).reshape(-1, 4)[:, :3].tobytes()

    channels = 2
    block_align = channels * bits // 8
    rate = signal.sample_rate
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, tag, channels, rate, rate * block_align, block_align, bits,
        b"data", len(payload),
    )
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        if len(payload) & 1:
            fh.write(b"\x00")
    os.replace(tmp, path)
    return clipped


def segment_count(n: int, segment_len: int, hop: int) -> int:
    if n < segment_len:
        return 0
    return (n - segment_len) // hop + 1


def segment_signal(
    signal: StereoSignal,
    segment_len: int = DEFAULT_SEGMENT_LEN,
    hop: int | None = None,
    source_id: str = "",
) -> list[AudioSegment]:
    """Cut ``signal`` into equal-length fragments; a trailing remainder is dropped."""
    if segment_len <= 0:
        raise ValueError("segment_len must be positive")
    hop = segment_len if hop is None else hop
    if hop <= 0:
        raise ValueError("hop must be positive")
    out = []
    for i in range(segment_count(len(signal), segment_len, hop)):
        a = i * hop
        piece = StereoSignal(
            signal.sample_rate,
            signal.left[a:a + segment_len].copy(),
            signal.right[a:a + segment_len].copy(),
            from_mono=signal.from_mono,
        )
        out.append(AudioSegment(source_id, i, piece, {"offset": a}))
    return out
