"""Reconstruction quality measures."""

from __future__ import annotations

import numpy as np

from .audio_io import AudioSegment
from .mclt import AnalysisConfig, analyze

MAG_FLOOR = 1e-12


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def log_spectral_distance(reference: AudioSegment, test: AudioSegment,
                          config: AnalysisConfig, trim_edges: bool = True) -> float:
    """Mean over frames and channels of the RMS dB difference of MCLT magnitudes.

    With ``trim_edges`` the first and last frame are skipped: they cover the
    outer half-frames that overlap-add cannot reconstruct.
    """
    if len(reference) != len(test):
        raise ValueError("segments differ in length")
    A, B = analyze(reference, config), analyze(test, config)
    sl = slice(1, -1) if trim_edges and A.frames > 2 else slice(None)
    vals = []
    for ma, mb in ((A.left_mag, B.left_mag), (A.right_mag, B.right_mag)):
        d = 20.0 * np.log10((ma[sl] + MAG_FLOOR) / (mb[sl] + MAG_FLOOR))
        vals.append(np.sqrt(np.mean(d ** 2, axis=1)))
    return float(np.mean(vals))
