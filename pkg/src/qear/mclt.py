"""Modulated complex lapped transform (MDCT real part, MDST imaginary part).

Forward, for a 2M-sample frame x and window h::

    X(k) = sqrt(2/M) * sum_n x(n) h(n) exp(-j theta(n, k))
    theta(n, k) = (n + (M + 1)/2) (k + 1/2) pi / M

With a Princen-Bradley window the inverse below, overlap-added at hop M,
reconstructs the input exactly away from the two outer half-frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .audio_io import AudioSegment, StereoSignal

PLANES = ("left_mag", "left_phase", "right_mag", "right_phase")
_MAGIC = b"MCLT1"


def sine_window(M: int) -> np.ndarray:
    n = np.arange(2 * M)
    return np.sin((n + 0.5) * np.pi / (2 * M))


@dataclass(frozen=True)
class AnalysisConfig:
    M: int = 1024
    window: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        M = int(self.M)
        if M < 8 or M & (M - 1):
            raise ValueError(f"M must be a power of two >= 8, got {M}")
        object.__setattr__(self, "M", M)
        h = sine_window(M) if self.window is None else np.asarray(self.window, float)
        if h.shape != (2 * M,):
            raise ValueError(f"window must have 2M = {2 * M} values")
        if not np.allclose(h[:M] ** 2 + h[M:] ** 2, 1.0, atol=1e-12):
            raise ValueError("window violates the Princen-Bradley condition")
        h = h.copy()
        h.setflags(write=False)
        object.__setattr__(self, "window", h)
        # phase-ramp factors for the FFT evaluation, cached per config
        n0 = (M + 1) / 2
        k = np.arange(M)
        object.__setattr__(self, "_pre", h * np.exp(-1j * np.pi * np.arange(2 * M) / (2 * M)))
        object.__setattr__(self, "_post", np.sqrt(2 / M) * np.exp(-1j * np.pi * n0 * (k + 0.5) / M))
        object.__setattr__(self, "_ipre", np.exp(1j * np.pi * n0 * k / M))
        object.__setattr__(
            self, "_ipost",
            0.5 * np.sqrt(2 / M) * 2 * M * h
            * np.exp(1j * np.pi * (np.arange(2 * M) + n0) / (2 * M)),
        )


@dataclass
class PadInfo:
    original_len: int
    pad_left: int
    pad_right: int

    @property
    def padded_len(self) -> int:
        return self.original_len + self.pad_left + self.pad_right


@dataclass
class MclTensor:
    left_mag: np.ndarray
    left_phase: np.ndarray
    right_mag: np.ndarray
    right_phase: np.ndarray
    pad_info: PadInfo
    sample_rate: int = 48_000
    source_id: str = ""
    index: int = 0

    @property
    def frames(self) -> int:
        return self.left_mag.shape[0]

    @property
    def bins(self) -> int:
        return self.left_mag.shape[1]

    def planes(self) -> list[np.ndarray]:
        return [getattr(self, p) for p in PLANES]

    def complex_coeffs(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.left_mag * np.exp(1j * self.left_phase),
                self.right_mag * np.exp(1j * self.right_phase))


def mclt_forward(frames: np.ndarray, config: AnalysisConfig) -> np.ndarray:
    """Transform one 2M frame (or a stack of shape (..., 2M)) into M complex bins."""
    frames = np.asarray(frames, dtype=np.float64)
    M = config.M
    if frames.shape[-1] != 2 * M:
        raise ValueError(f"frame length must be {2 * M}, got {frames.shape[-1]}")
    spec = np.fft.fft(frames * config._pre, axis=-1)[..., :M]
    return spec * config._post


def mclt_inverse(coeffs: np.ndarray, config: AnalysisConfig) -> np.ndarray:
    """Windowed synthesis frame(s) of length 2M, ready for overlap-add at hop M."""
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    M = config.M
    if coeffs.shape[-1] != M:
        raise ValueError(f"expected {M} coefficients, got {coeffs.shape[-1]}")
    padded = np.zeros(coeffs.shape[:-1] + (2 * M,), dtype=np.complex128)
    padded[..., :M] = coeffs * config._ipre
    return np.real(np.fft.ifft(padded, axis=-1) * config._ipost)


def padding_for(n: int, M: int) -> PadInfo:
    """Symmetric zero padding up to a multiple of M holding at least one 2M frame."""
    if n <= 0:
        raise ValueError("segment must be non-empty")
    padded = max(2 * M, -(-n // M) * M)
    extra = padded - n
    return PadInfo(n, extra // 2, extra - extra // 2)


def frame_signal(x: np.ndarray, M: int) -> np.ndarray:
    T = len(x) // M - 1
    idx = np.arange(T)[:, None] * M + np.arange(2 * M)[None, :]
    return x[idx]


def overlap_add(frames: np.ndarray, M: int) -> np.ndarray:
    T = frames.shape[0]
    out = np.zeros((T + 1) * M)
    for t in range(T):
        out[t * M:t * M + 2 * M] += frames[t]
    return out


def _phase(c: np.ndarray) -> np.ndarray:
    ph = np.arctan2(c.imag, c.real)
    # atan2 returns -pi for a negative-zero imaginary part; fold into (-pi, pi]
    ph[ph <= -np.pi] = np.pi
    ph[c == 0] = 0.0
    return ph


def analyze(segment: AudioSegment, config: AnalysisConfig) -> MclTensor:
    sig = segment.samples
    pad = padding_for(len(sig), config.M)
    planes = []
    for ch in (sig.left, sig.right):
        x = np.pad(ch, (pad.pad_left, pad.pad_right))
        X = mclt_forward(frame_signal(x, config.M), config)
        planes += [np.abs(X), _phase(X)]
    return MclTensor(*planes, pad_info=pad, sample_rate=sig.sample_rate,
                     source_id=segment.source_id, index=segment.index)


def synthesize(tensor: MclTensor, config: AnalysisConfig) -> AudioSegment:
    M = config.M
    pad = tensor.pad_info
    if tensor.bins != M:
        raise ValueError(f"tensor has {tensor.bins} bins, config expects {M}")
    if pad.padded_len != (tensor.frames + 1) * M or min(pad.pad_left, pad.pad_right) < 0:
        raise ValueError(f"pad_info {pad} inconsistent with {tensor.frames} frames")
    chans = []
    for X in tensor.complex_coeffs():
        y = overlap_add(mclt_inverse(X, config), M)
        chans.append(y[pad.pad_left:pad.pad_left + pad.original_len])
    sig = StereoSignal(tensor.sample_rate, chans[0], chans[1])
    return AudioSegment(tensor.source_id, tensor.index, sig)


def save_tensor(tensor: MclTensor, path) -> None:
    """Flat binary dump: header then 4*T*M little-endian float64 values."""
    order = ",".join(PLANES).encode()
    p = tensor.pad_info
    header = _MAGIC + struct.pack(
        "<IIIIIIH", tensor.bins, tensor.frames, p.original_len, p.pad_left,
        p.pad_right, tensor.sample_rate, len(order)) + order
    body = np.stack(tensor.planes()).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + body)


def load_tensor(path) -> MclTensor:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != _MAGIC:
        raise ValueError(f"{path}: bad magic")
    M, T, n, pl, pr, fs, olen = struct.unpack_from("<IIIIIIH", data, 5)
    off = 5 + struct.calcsize("<IIIIIIH")
    order = data[off:off + olen].decode().split(",")
    if tuple(order) != PLANES:
        raise ValueError(f"{path}: unexpected plane order {order}")
    off += olen
    expected = 4 * T * M * 8
    if len(data) - off != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(data) - off}")
    arr = np.frombuffer(data, "<f8", offset=off).reshape(4, T, M).astype(np.float64)
    return MclTensor(*arr, pad_info=PadInfo(n, pl, pr), sample_rate=fs)


def export_csv(tensor: MclTensor, path, plane: str = "left_mag", db: bool = True) -> None:
    """Write one plane as a bins x frames grid (low frequencies first)."""
    if plane not in PLANES:
        raise ValueError(f"plane must be one of {PLANES}")
    img = getattr(tensor, plane).T
    if db and plane.endswith("mag"):
        img = 20 * np.log10(img + 1e-12)
    np.savetxt(path, img, delimiter=",", fmt="%.6g")
