"""Reusable experiment drivers shared by ``scripts/`` and the acceptance suite."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import anomaly, synthgen
from .mclt import AnalysisConfig
from .pipeline import prepare_training, synth_segments
from .vae import LossRecord, ModelParams, TrainingConfig, train

SEGMENTS_PER_TAKE = 10
LATENT_SIZES = (20, 4, 50)


@dataclass
class TrainingRun:
    latent_dim: int
    history: list[LossRecord]
    seconds: float
    params: ModelParams | None = None

    @property
    def mse_ratio(self) -> float:
        return self.history[-1].mean_mse / self.history[0].mean_mse


def demo_corpus(seed: int = 0, takes: int = 3):
    """Five presets x ``takes`` recordings x ten segments, held in memory."""
    return synth_segments(synthgen.preset_profiles(), takes, SEGMENTS_PER_TAKE, seed)


def training_runs(latent_dims=LATENT_SIZES, seed: int = 0, segments=None,
                  config: TrainingConfig | None = None, keep_params: bool = False,
                  progress=None) -> list[TrainingRun]:
    """Train one model per latent size on the same corpus and features."""
    segments = demo_corpus(seed) if segments is None else segments
    base = config or TrainingConfig(seed=seed)
    X, stats, _ = prepare_training(segments, AnalysisConfig(1024))
    runs = []
    for d in latent_dims:
        t0 = time.perf_counter()
        params, hist = train(X, replace(base, latent_dim=d), stats=stats, progress=progress)
        runs.append(TrainingRun(d, hist, time.perf_counter() - t0,
                                params if keep_params else None))
    return runs


@dataclass
class AnomalyTrial:
    seed: int
    reference_p99: float
    normal_scores: np.ndarray
    anomaly_scores: np.ndarray
    train_scores: np.ndarray
    epochs: int
    detection: dict = field(default_factory=dict)

    @property
    def normal_p99(self) -> float:
        return float(np.percentile(self.normal_scores, 99))

    @property
    def anomaly_median(self) -> float:
        return float(np.median(self.anomaly_scores))


def anomaly_trial(seed: int, latent_dim: int = 20, train_takes: int = 3,
                  heldout_takes: int = 1, anomaly_takes: int = 2,
                  config: TrainingConfig | None = None) -> AnomalyTrial:
    """Train on the four normal presets, then score held-out normal takes
    against takes of the off-site damaged profile."""
    normal = synthgen.normal_profiles()
    train_segs = synth_segments(normal, train_takes, SEGMENTS_PER_TAKE, seed)
    # distinct base seeds keep every recording independent of the training takes
    held = synth_segments(normal, heldout_takes, SEGMENTS_PER_TAKE, seed + 500)
    anom = synth_segments([synthgen.anomaly_profile()], anomaly_takes, SEGMENTS_PER_TAKE,
                          seed + 700)
    acfg = AnalysisConfig(1024)
    X, stats, _ = prepare_training(train_segs, acfg)
    cfg = replace(config or TrainingConfig(), latent_dim=latent_dim, seed=seed)
    params, hist = train(X, cfg, stats=stats)
    ref = anomaly.fit_reference(params, train_segs, acfg)

    def scores(segs):
        return np.array([anomaly.score_segment(params, ref, s, acfg).mahalanobis for s in segs])

    n, a = scores(held), scores(anom)
    return AnomalyTrial(seed, ref.mahalanobis_percentiles[99], n, a, scores(train_segs),
                        len(hist), anomaly.evaluate_detection(n, a))


def demo_commands(root, seed: int = 0, latent_dim: int = 20) -> list[list[str]]:
    """CLI invocations of the end-to-end demo, in order."""
    r = Path(root)
    s = str(seed)
    return [
        ["synth", "--preset", "all", "--per-profile", "3", "--seed", s, "--out", str(r / "corpus")],
        ["synth", "--preset", "all", "--per-profile", "1", "--seed", str(seed + 500),
         "--out", str(r / "heldout")],
        ["synth", "--preset", "anomaly", "--per-profile", "2", "--seed", str(seed + 700),
         "--out", str(r / "anomaly")],
        ["train", "--corpus", str(r / "corpus"), "--latent-dim", str(latent_dim), "--seed", s,
         "--out", str(r / "model")],
        ["eval", "--model", str(r / "model"), "--corpus", str(r / "heldout"), "--with-baseline",
         "--out", str(r / "eval")],
        ["project", "--model", str(r / "model"), "--corpus", str(r / "corpus"),
         "--anomaly-dir", str(r / "anomaly"), "--method", "both", "--seed", s,
         "--out", str(r / "project")],
        ["score", "--model", str(r / "model"), "--reference", str(r / "corpus"),
         "--target", str(r / "heldout"), "--anomaly-dir", str(r / "anomaly"),
         "--out", str(r / "score")],
    ]


def run_demo(root, seed: int = 0, latent_dim: int = 20, log=print) -> tuple[int, float]:
    """Run every demo step; stops at the first non-zero exit. Returns (code, seconds)."""
    from .cli import main

    t0 = time.perf_counter()
    for argv in demo_commands(root, seed, latent_dim):
        t1 = time.perf_counter()
        code = main(argv)
        log(f"{argv[0]:8s} exit={code} {time.perf_counter() - t1:7.1f}s")
        if code:
            return code, time.perf_counter() - t0
    return 0, time.perf_counter() - t0
