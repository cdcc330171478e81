"""Glue between the stages: corpus synthesis/loading, segmentation, features."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import synthgen
from .audio_io import (DEFAULT_SAMPLE_RATE, DEFAULT_SEGMENT_LEN, AudioSegment,
                       read_wav, segment_signal, write_wav)
from .features import CorpusStats, feature_matrix, fit_stats
from .mclt import AnalysisConfig, MclTensor, analyze

MANIFEST = "manifest.csv"


@dataclass
class Recording:
    source_id: str
    profile: str
    seed: int
    path: str | None = None


def recording_seed(base_seed: int, profile_index: int, take: int) -> int:
    return base_seed * 1000 + profile_index * 100 + take


def synth_corpus(out_dir, profiles, per_profile: int, duration_s: float, seed: int,
                 fs: int = DEFAULT_SAMPLE_RATE, bit_depth: str = "24") -> list[Recording]:
    """Render ``per_profile`` takes of each profile to WAV and write the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recs = []
    for pi, prof in enumerate(profiles):
        for take in range(per_profile):
            s = recording_seed(seed, pi, take)
            name = f"{prof.name}_{take:02d}.wav"
            write_wav(synthgen.generate(prof, duration_s, fs, s), out_dir / name, bit_depth)
            recs.append(Recording(f"{prof.name}_{take:02d}", prof.name, s, name))
    write_manifest(out_dir, recs)
    return recs


def write_manifest(out_dir, recs) -> None:
    with open(Path(out_dir) / MANIFEST, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "profile", "seed"])
        for r in recs:
            w.writerow([r.path, r.profile, r.seed])


def read_manifest(corpus_dir) -> list[Recording]:
    corpus_dir = Path(corpus_dir)
    mpath = corpus_dir / MANIFEST
    if not mpath.exists():
        wavs = sorted(p.name for p in corpus_dir.glob("*.wav"))
        return [Recording(Path(p).stem, "", -1, p) for p in wavs]
    with open(mpath, newline="") as fh:
        return [Recording(Path(row["path"]).stem, row["profile"], int(row["seed"]), row["path"])
                for row in csv.DictReader(fh)]


def load_segments(corpus_dir, segment_len: int = DEFAULT_SEGMENT_LEN,
                  hop: int | None = None) -> list[AudioSegment]:
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise FileNotFoundError(f"corpus directory {corpus_dir} does not exist")
    recs = read_manifest(corpus_dir)
    if not recs:
        raise FileNotFoundError(f"no WAV files in {corpus_dir}")
    segs = []
    for r in recs:
        sig = read_wav(corpus_dir / r.path)
        for s in segment_signal(sig, segment_len, hop, r.source_id):
            s.meta["profile"] = r.profile
            segs.append(s)
    return segs


def synth_segments(profiles, per_profile: int, segments_per_take: int, seed: int,
                   segment_len: int = DEFAULT_SEGMENT_LEN,
                   fs: int = DEFAULT_SAMPLE_RATE) -> list[AudioSegment]:
    """In-memory equivalent of ``synth_corpus`` followed by ``load_segments``."""
    segs = []
    for pi, prof in enumerate(profiles):
        for take in range(per_profile):
            sig = synthgen.generate(prof, segments_per_take * segment_len / fs, fs,
                                    recording_seed(seed, pi, take))
            for s in segment_signal(sig, segment_len, None, f"{prof.name}_{take:02d}"):
                s.meta["profile"] = prof.name
                segs.append(s)
    return segs


def analyze_all(segments, config: AnalysisConfig) -> list[MclTensor]:
    return [analyze(s, config) for s in segments]


def stack_features(tensors, stats: CorpusStats) -> np.ndarray:
    return np.concatenate([feature_matrix(t, stats) for t in tensors])


def prepare_training(segments, config: AnalysisConfig):
    """Analyze segments and fit corpus stats; returns ``(X, stats, tensors)``."""
    tensors = analyze_all(segments, config)
    stats = fit_stats(tensors)
    return stack_features(tensors, stats), stats, tensors


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
