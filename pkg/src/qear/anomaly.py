"""Normal-operation reference statistics and per-segment anomaly scores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .audio_io import AudioSegment
from .features import feature_matrix
from .mclt import AnalysisConfig, analyze
from .vae import ModelParams, decode_batch, encode_batch

PERCENTILES = (50, 90, 95, 99)
RIDGE_SCALE = 1e-6
# keeps the ridge positive when every reference latent is identical
RIDGE_FLOOR = 1e-12


class InsufficientReferenceError(ValueError):
    pass


@dataclass
class ReferenceStats:
    mean: np.ndarray
    cov: np.ndarray
    ridge: float
    recon_percentiles: dict[int, float]
    mahalanobis_percentiles: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        self._chol = np.linalg.cholesky(self.cov + self.ridge * np.eye(len(self.mean)))

    @classmethod
    def from_latents(cls, latents, recon_errors, ridge: float | None = None) -> "ReferenceStats":
        Z = np.atleast_2d(np.asarray(latents, dtype=np.float64))
        n, d = Z.shape
        if n < d + 2:
            raise InsufficientReferenceError(
                f"need at least d + 2 = {d + 2} reference segments, got {n}"
            )
        mean = Z.mean(0)
        cov = np.cov(Z, rowvar=False).reshape(d, d)
        if ridge is None:
            ridge = max(RIDGE_SCALE * np.trace(cov) / d, RIDGE_FLOOR)
        recon = _percentiles(recon_errors)
        ref = cls(mean, cov, float(ridge), recon)
        ref.mahalanobis_percentiles = _percentiles(ref.mahalanobis(Z))
        return ref

    def mahalanobis(self, z) -> np.ndarray:
        """sqrt((z - mean)^T (cov + ridge I)^-1 (z - mean)), row-wise."""
        diff = np.atleast_2d(np.asarray(z, dtype=np.float64)) - self.mean
        w = np.linalg.solve(self._chol, diff.T)
        return np.sqrt(np.sum(w * w, axis=0))

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "ridge": self.ridge,
            "recon_percentiles": {str(k): v for k, v in self.recon_percentiles.items()},
            "mahalanobis_percentiles": {str(k): v for k, v in self.mahalanobis_percentiles.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceStats":
        return cls(
            np.asarray(d["mean"], float), np.asarray(d["cov"], float), float(d["ridge"]),
            {int(k): v for k, v in d["recon_percentiles"].items()},
            {int(k): v for k, v in d.get("mahalanobis_percentiles", {}).items()},
        )


def _percentiles(values) -> dict[int, float]:
    v = np.asarray(values, dtype=np.float64)
    return {p: float(x) for p, x in zip(PERCENTILES, np.percentile(v, PERCENTILES))}


@dataclass
class AnomalyScore:
    source_id: str
    index: int
    recon_mse: float
    mahalanobis: float
    flags: dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"source_id": self.source_id, "index": self.index,
                "recon_mse": self.recon_mse, "mahalanobis": self.mahalanobis,
                "flags": self.flags}


def segment_latent(params: ModelParams, segment: AudioSegment,
                   config: AnalysisConfig | None = None):
    """Mean posterior mu over a segment's frames, and its mean reconstruction MSE."""
    config = config or AnalysisConfig(params.M)
    X = feature_matrix(analyze(segment, config), params.stats)
    mu, _ = encode_batch(params, X)
    mse = float(np.mean((X - decode_batch(params, mu)) ** 2))
    return mu.mean(0), mse


def fit_reference(params: ModelParams, train_segments,
                  config: AnalysisConfig | None = None) -> ReferenceStats:
    segs = list(train_segments)
    d = params.latent_dim
    if len(segs) < d + 2:
        raise InsufficientReferenceError(
            f"need at least d + 2 = {d + 2} reference segments, got {len(segs)}"
        )
    pairs = [segment_latent(params, s, config) for s in segs]
    return ReferenceStats.from_latents([z for z, _ in pairs], [e for _, e in pairs])


def score_segment(params: ModelParams, ref: ReferenceStats, segment: AudioSegment,
                  config: AnalysisConfig | None = None, percentile: int = 99) -> AnomalyScore:
    z, mse = segment_latent(params, segment, config)
    maha = float(ref.mahalanobis(z)[0])
    flags = {
        f"recon_gt_p{percentile}": mse > ref.recon_percentiles[percentile],
    }
    if ref.mahalanobis_percentiles:
        flags[f"mahalanobis_gt_p{percentile}"] = maha > ref.mahalanobis_percentiles[percentile]
    return AnomalyScore(segment.source_id, segment.index, mse, maha, flags)


def auc(scores_normal, scores_anomalous) -> float:
    """Probability that an anomalous score outranks a normal one (ties count 1/2)."""
    a = np.asarray(scores_normal, dtype=np.float64)
    b = np.asarray(scores_anomalous, dtype=np.float64)
    if not len(a) or not len(b):
        raise ValueError("both score lists must be non-empty")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[len(a):].sum() - len(b) * (len(b) + 1) / 2
    return float(u / (len(a) * len(b)))


def evaluate_detection(scores_normal, scores_anomalous) -> dict:
    a = np.asarray(scores_normal, dtype=np.float64)
    b = np.asarray(scores_anomalous, dtype=np.float64)
    q = (5, 25, 50, 75, 95)
    return {
        "auc": auc(a, b),
        "n_normal": int(len(a)),
        "n_anomalous": int(len(b)),
        "normal_quantiles": dict(zip(map(str, q), np.percentile(a, q).tolist())),
        "anomalous_quantiles": dict(zip(map(str, q), np.percentile(b, q).tolist())),
        "median_gap": float(np.median(b) - np.median(a)),
    }
