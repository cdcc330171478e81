"""Per-frame feature vectors for the VAE.

Each MCLT frame becomes a 4M vector ``[logmag L | phase L | logmag R | phase R]``.
Log-magnitudes use a corpus-wide min/max affine map into [-1, 1] (clamped);
phases are divided by pi so they live in (-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mclt import MclTensor, PadInfo

EPS = 1e-8


class DegenerateCorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusStats:
    logmag_min: float
    logmag_max: float

    def __post_init__(self):
        if not self.logmag_max > self.logmag_min:
            raise DegenerateCorpusError(
                f"logmag_max ({self.logmag_max}) must exceed logmag_min ({self.logmag_min})"
            )


@dataclass
class FeatureFrame:
    values: np.ndarray
    frame_index: int
    source_id: str = ""


def fit_stats(tensors) -> CorpusStats:
    tensors = list(tensors)
    if not tensors:
        raise DegenerateCorpusError("cannot fit statistics on an empty corpus")
    lo, hi = np.inf, -np.inf
    for t in tensors:
        for m in (t.left_mag, t.right_mag):
            lm = np.log10(m + EPS)
            lo = min(lo, float(lm.min()))
            hi = max(hi, float(lm.max()))
    if not hi > lo:
        raise DegenerateCorpusError(f"all log-magnitudes equal ({lo}); degenerate corpus")
    return CorpusStats(lo, hi)


def _norm_logmag(m: np.ndarray, stats: CorpusStats) -> np.ndarray:
    lm = np.log10(m + EPS)
    v = 2.0 * (lm - stats.logmag_min) / (stats.logmag_max - stats.logmag_min) - 1.0
    return np.clip(v, -1.0, 1.0)


def _denorm_logmag(v: np.ndarray, stats: CorpusStats) -> np.ndarray:
    lm = (np.asarray(v) + 1.0) * 0.5 * (stats.logmag_max - stats.logmag_min) + stats.logmag_min
    # the eps floor can push tiny magnitudes negative; magnitudes stay >= 0
    return np.maximum(10.0 ** lm - EPS, 0.0)


def wrap_unit_phase(v: np.ndarray) -> np.ndarray:
    """Wrap phase-over-pi values into (-1, 1]: 1.3 -> -0.7, -1.0 -> 1.0."""
    v = np.asarray(v, dtype=np.float64)
    return v - 2.0 * np.ceil((v - 1.0) / 2.0)


def feature_matrix(tensor: MclTensor, stats: CorpusStats) -> np.ndarray:
    """(T, 4M) array form of :func:`to_features`."""
    return np.concatenate([
        _norm_logmag(tensor.left_mag, stats),
        tensor.left_phase / np.pi,
        _norm_logmag(tensor.right_mag, stats),
        tensor.right_phase / np.pi,
    ], axis=1)


def to_features(tensor: MclTensor, stats: CorpusStats) -> list[FeatureFrame]:
    X = feature_matrix(tensor, stats)
    return [FeatureFrame(X[t], t, tensor.source_id) for t in range(X.shape[0])]


def from_feature_matrix(X: np.ndarray, stats: CorpusStats, pad_info: PadInfo,
                        sample_rate: int = 48_000, source_id: str = "",
                        index: int = 0) -> MclTensor:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] % 4:
        raise ValueError(f"feature width {X.shape[1]} is not a multiple of 4")
    M = X.shape[1] // 4
    lm, lp, rm, rp = (X[:, i * M:(i + 1) * M] for i in range(4))
    return MclTensor(
        _denorm_logmag(lm, stats), np.pi * wrap_unit_phase(lp),
        _denorm_logmag(rm, stats), np.pi * wrap_unit_phase(rp),
        pad_info=pad_info, sample_rate=sample_rate, source_id=source_id, index=index,
    )


def from_features(frames, stats: CorpusStats, pad_info: PadInfo, **kw) -> MclTensor:
    frames = list(frames)
    widths = {len(f.values) for f in frames}
    if len(widths) != 1:
        raise ValueError(f"inconsistent frame widths {sorted(widths)}")
    T = len(frames)
    M = widths.pop() // 4
    if pad_info.padded_len != (T + 1) * M:
        raise ValueError(f"{T} frames of {M} bins do not match {pad_info}")
    X = np.stack([f.values for f in sorted(frames, key=lambda f: f.frame_index)])
    return from_feature_matrix(X, stats, pad_info, **kw)
