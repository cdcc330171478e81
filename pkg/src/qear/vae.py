"""Fully connected beta-VAE over MCLT feature frames, in plain numpy.

Encoder: tanh hidden layers, then linear heads for the latent mean and
log-variance (clamped to [-10, 10]).  Decoder mirrors the hidden widths and
ends in a linear layer; the log-magnitude slots of the output pass through
tanh, the phase slots are left linear.

Loss per batch::

    mse   = mean over examples and entries of (x - x_hat)^2
    kl    = mean over examples of -1/2 sum_i (1 + logvar_i - mu_i^2 - exp(logvar_i))
    total = mse + beta * kl
"""

from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .audio_io import AudioSegment
from .features import CorpusStats, FeatureFrame, feature_matrix, from_feature_matrix
from .mclt import AnalysisConfig, PadInfo, analyze, synthesize

log = logging.getLogger(__name__)

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0
ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8

CHECKPOINT_MAGIC = b"QVAE1"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(ArithmeticError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


@dataclass
class TrainingConfig:
    latent_dim: int = 20
    beta: float = 1e-3
    hidden_dims: tuple[int, ...] = (512, 128)
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    early_stop_window: int = 5
    early_stop_tol: float = 0.005

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden widths must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class LatentDistribution:
    mu: np.ndarray
    logvar: np.ndarray


@dataclass
class LossRecord:
    epoch: int
    mean_total: float
    mean_mse: float
    mean_kl: float


@dataclass
class ModelParams:
    config: TrainingConfig
    input_dim: int
    encoder: list  # [(W, b), ...] hidden layers
    mu_head: tuple
    logvar_head: tuple
    decoder: list  # [(W, b), ...] hidden layers
    output: tuple
    stats: CorpusStats | None = None
    sample_rate: int = 48_000
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.input_dim // 4

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in checkpoint order."""
        out = []
        for W, b in [*self.encoder, self.mu_head, self.logvar_head, *self.decoder, self.output]:
            out += [W, b]
        return out

    def with_arrays(self, arrays) -> "ModelParams":
        arrays = list(arrays)
        pairs = [(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]
        ne, nd = len(self.encoder), len(self.decoder)
        return ModelParams(
            self.config, self.input_dim, pairs[:ne], pairs[ne], pairs[ne + 1],
            pairs[ne + 2:ne + 2 + nd], pairs[ne + 2 + nd], self.stats,
            self.sample_rate, dict(self.meta),
        )

    def shapes(self) -> list[tuple[int, ...]]:
        return [a.shape for a in self.arrays()]


def _layer_shapes(input_dim: int, cfg: TrainingConfig):
    enc = [input_dim, *cfg.hidden_dims]
    dec = [cfg.latent_dim, *reversed(cfg.hidden_dims)]
    return (
        list(zip(enc[:-1], enc[1:])),
        (enc[-1], cfg.latent_dim),
        (enc[-1], cfg.latent_dim),
        list(zip(dec[:-1], dec[1:])),
        (dec[-1], input_dim),
    )


def init_model(config: TrainingConfig, input_dim: int, stats: CorpusStats | None = None,
               sample_rate: int = 48_000) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if input_dim % 4:
        raise ValueError("input_dim must be 4M")
    rng = np.random.default_rng(config.seed)

    def layer(fan_in, fan_out):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=(fan_in, fan_out)), np.zeros(fan_out)

    enc, mu, lv, dec, out = _layer_shapes(input_dim, config)
    return ModelParams(
        config, input_dim,
        [layer(*s) for s in enc], layer(*mu), layer(*lv),
        [layer(*s) for s in dec], layer(*out), stats, sample_rate,
    )


def _logmag_mask(input_dim: int) -> np.ndarray:
    M = input_dim // 4
    mask = np.zeros(input_dim, dtype=bool)
    mask[:M] = True
    mask[2 * M:3 * M] = True
    return mask


def _check_width(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n:
        raise ValueError(f"{what} has width {x.shape[-1]}, expected {n}")
    return x


def encode_batch(params: ModelParams, X: np.ndarray):
    h = _check_width(X, params.input_dim, "input")
    for W, b in params.encoder:
        h = np.tanh(h @ W + b)
    mu = h @ params.mu_head[0] + params.mu_head[1]
    lv = np.clip(h @ params.logvar_head[0] + params.logvar_head[1], LOGVAR_MIN, LOGVAR_MAX)
    return mu, lv


def decode_batch(params: ModelParams, Z: np.ndarray) -> np.ndarray:
    g = _check_width(Z, params.latent_dim, "latent")
    for W, b in params.decoder:
        g = np.tanh(g @ W + b)
    out = g @ params.output[0] + params.output[1]
    mask = _logmag_mask(params.input_dim)
    out[..., mask] = np.tanh(out[..., mask])
    return out


def encode(params: ModelParams, x) -> LatentDistribution:
    if isinstance(x, FeatureFrame):
        x = x.values
    mu, lv = encode_batch(params, x)
    return LatentDistribution(mu, lv)


def sample_latent(dist: LatentDistribution, rng: np.random.Generator) -> np.ndarray:
    n = rng.standard_normal(np.shape(dist.mu))
    return dist.mu + np.exp(0.5 * dist.logvar) * n


def decode(params: ModelParams, z) -> np.ndarray:
    return decode_batch(params, z)


def loss(x, x_hat, dist: LatentDistribution, beta: float):
    """(total, mse, kl) averaged over the leading batch axis if present."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    mse = float(np.mean((x - x_hat) ** 2))
    mu, lv = np.asarray(dist.mu), np.asarray(dist.logvar)
    kl_each = -0.5 * np.sum(1.0 + lv - mu ** 2 - np.exp(lv), axis=-1)
    kl = float(np.mean(kl_each))
    return mse + beta * kl, mse, kl


def loss_and_grads(params: ModelParams, X: np.ndarray, noise: np.ndarray, beta: float):
    """Batch loss with fixed reparameterization noise, and exact gradients.

    Gradients come back as a list aligned with ``params.arrays()``.
    """
    X = np.atleast_2d(_check_width(X, params.input_dim, "input"))
    B, D = X.shape

    acts = [X]
    for W, b in params.encoder:
        acts.append(np.tanh(acts[-1] @ W + b))
    h = acts[-1]
    mu = h @ params.mu_head[0] + params.mu_head[1]
    lv_raw = h @ params.logvar_head[0] + params.logvar_head[1]
    lv = np.clip(lv_raw, LOGVAR_MIN, LOGVAR_MAX)
    std = np.exp(0.5 * lv)
    z = mu + std * noise

    dec_acts = [z]
    for W, b in params.decoder:
        dec_acts.append(np.tanh(dec_acts[-1] @ W + b))
    g = dec_acts[-1]
    raw = g @ params.output[0] + params.output[1]
    mask = _logmag_mask(D)
    out = raw.copy()
    out[:, mask] = np.tanh(raw[:, mask])

    diff = out - X
    mse = float(np.mean(diff ** 2))
    kl_each = -0.5 * np.sum(1.0 + lv - mu ** 2 - np.exp(lv), axis=1)
    kl = float(np.mean(kl_each))
    total = mse + beta * kl

    d_out = (2.0 / (B * D)) * diff
    d_raw = d_out
    d_raw[:, mask] *= 1.0 - out[:, mask] ** 2

    grads_out = (g.T @ d_raw, d_raw.sum(0))
    d = d_raw @ params.output[0].T
    grads_dec = []
    for i in range(len(params.decoder) - 1, -1, -1):
        W, _ = params.decoder[i]
        a = dec_acts[i + 1]
        d = d * (1.0 - a ** 2)
        grads_dec.append((dec_acts[i].T @ d, d.sum(0)))
        d = d @ W.T
    grads_dec.reverse()
    dz = d

    d_mu = dz + (beta / B) * mu
    d_lv = dz * 0.5 * std * noise + (beta / B) * 0.5 * (np.exp(lv) - 1.0)
    d_lv = d_lv * ((lv_raw > LOGVAR_MIN) & (lv_raw < LOGVAR_MAX))

    grads_mu = (h.T @ d_mu, d_mu.sum(0))
    grads_lv = (h.T @ d_lv, d_lv.sum(0))
    d = d_mu @ params.mu_head[0].T + d_lv @ params.logvar_head[0].T
    grads_enc = []
    for i in range(len(params.encoder) - 1, -1, -1):
        W, _ = params.encoder[i]
        a = acts[i + 1]
        d = d * (1.0 - a ** 2)
        grads_enc.append((acts[i].T @ d, d.sum(0)))
        if i:
            d = d @ W.T
    grads_enc.reverse()

    grads = []
    for gW, gb in [*grads_enc, grads_mu, grads_lv, *grads_dec, grads_out]:
        grads += [gW, gb]
    return (total, mse, kl), grads


class Adam:
    def __init__(self, arrays, lr: float):
        self.lr = lr
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self._buf = [np.empty_like(a) for a in arrays]

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1.0 - ADAM_B1 ** self.t
        c2 = 1.0 - ADAM_B2 ** self.t
        # lr * (m / c1) / (sqrt(v / c2) + eps), evaluated in place
        for a, g, m, v, buf in zip(arrays, grads, self.m, self.v, self._buf):
            np.multiply(g, 1.0 - ADAM_B1, out=buf)
            m *= ADAM_B1
            m += buf
            np.multiply(g, g, out=buf)
            buf *= 1.0 - ADAM_B2
            v *= ADAM_B2
            v += buf
            np.sqrt(v, out=buf)
            buf *= 1.0 / np.sqrt(c2)
            buf += ADAM_EPS
            np.divide(m, buf, out=buf)
            buf *= self.lr / c1
            a -= buf


def _as_matrix(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        return np.asarray(dataset, dtype=np.float64)
    return np.stack([f.values if isinstance(f, FeatureFrame) else f for f in dataset])


def should_stop(totals: list[float], window: int, tol: float) -> bool:
    """True once mean_total improved by less than ``tol`` (relative) over ``window`` epochs."""
    if len(totals) <= window:
        return False
    ref = totals[-1 - window]
    return (ref - totals[-1]) / abs(ref) < tol


def train(dataset, config: TrainingConfig, stats: CorpusStats | None = None,
          sample_rate: int = 48_000, progress=None):
    """Mini-batch Adam on the beta-VAE loss.

    Returns ``(params, history)``; training stops at the first epoch whose
    relative improvement over the preceding ``early_stop_window`` epochs is
    below ``early_stop_tol``, or after ``config.epochs``.
    """
    X = _as_matrix(dataset)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("dataset must be a non-empty collection of frames")
    N = X.shape[0]
    params = init_model(config, X.shape[1], stats, sample_rate)
    arrays = [a.copy() for a in params.arrays()]
    params = params.with_arrays(arrays)
    opt = Adam(arrays, config.learning_rate)
    rng = np.random.default_rng([config.seed, 1])
    history: list[LossRecord] = []

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(N)
        sums = np.zeros(3)
        for a in range(0, N, config.batch_size):
            idx = order[a:a + config.batch_size]
            noise = rng.standard_normal((len(idx), config.latent_dim))
            vals, grads = loss_and_grads(params, X[idx], noise, config.beta)
            if not all(np.isfinite(vals)):
                raise TrainingDivergedError(
                    f"non-finite loss {vals} at epoch {epoch}, batch offset {a}"
                )
            opt.step(arrays, grads)
            sums += np.asarray(vals) * len(idx)
        mean_total, mean_mse, mean_kl = sums / N
        rec = LossRecord(epoch, float(mean_total), float(mean_mse), float(mean_kl))
        history.append(rec)
        log.info("epoch %d total=%.6g mse=%.6g kl=%.6g", epoch, *sums / N)
        if progress is not None:
            progress(rec)
        if should_stop([r.mean_total for r in history],
                       config.early_stop_window, config.early_stop_tol):
            break
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise TrainingDivergedError("non-finite parameters after training")
    return params, history


def _require_stats(params: ModelParams) -> CorpusStats:
    if params.stats is None:
        raise ValueError("model has no embedded corpus statistics")
    return params.stats


def reconstruct_segment(params: ModelParams, segment: AudioSegment,
                        config: AnalysisConfig | None = None):
    """Posterior-mean reconstruction; returns (audio, per-frame feature MSE)."""
    stats = _require_stats(params)
    config = config or AnalysisConfig(params.M)
    tensor = analyze(segment, config)
    X = feature_matrix(tensor, stats)
    mu, _ = encode_batch(params, X)
    X_hat = decode_batch(params, mu)
    frame_mse = np.mean((X - X_hat) ** 2, axis=1)
    rec = from_feature_matrix(X_hat, stats, tensor.pad_info, tensor.sample_rate,
                              segment.source_id, segment.index)
    return synthesize(rec, config), frame_mse


def generate(params: ModelParams, rng: np.random.Generator, n_frames: int,
             config: AnalysisConfig | None = None) -> AudioSegment:
    """Decode ``n_frames`` prior draws into audio of (n_frames + 1) * M samples."""
    stats = _require_stats(params)
    config = config or AnalysisConfig(params.M)
    Z = rng.standard_normal((n_frames, params.latent_dim))
    X_hat = decode_batch(params, Z)
    M = params.M
    pad = PadInfo((n_frames + 1) * M, 0, 0)
    seg = synthesize(from_feature_matrix(X_hat, stats, pad, params.sample_rate, "generated"),
                     config)
    sig = seg.samples
    sig.left = np.clip(sig.left, -1.0, 1.0)
    sig.right = np.clip(sig.right, -1.0, 1.0)
    return seg


def save_model(params: ModelParams, path) -> None:
    """Layout: magic, u32 version, u32 len + JSON config, 2 x f64 stats,
    float64 arrays in ``params.arrays()`` order, trailing CRC32."""
    cfg = {
        "training": asdict(params.config),
        "input_dim": params.input_dim,
        "sample_rate": params.sample_rate,
        "meta": params.meta,
    }
    blob = json.dumps(cfg, sort_keys=True).encode()
    stats = params.stats
    lo, hi = (stats.logmag_min, stats.logmag_max) if stats else (np.nan, np.nan)
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<II", CHECKPOINT_VERSION, len(blob)), blob,
        struct.pack("<dd", lo, hi),
    ]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays()]
    body = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != CHECKPOINT_MAGIC:
        raise CheckpointCorruptError(f"{path}: bad magic")
    if len(data) < 5 + 8 + 16 + 4:
        raise CheckpointCorruptError(f"{path}: truncated")
    version, blob_len = struct.unpack_from("<II", data, 5)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointCorruptError(f"{path}: checksum mismatch")
    off = 13
    try:
        cfg = json.loads(data[off:off + blob_len])
    except ValueError as exc:
        raise CheckpointCorruptError(f"{path}: unreadable config block") from exc
    off += blob_len
    lo, hi = struct.unpack_from("<dd", data, off)
    off += 16
    config = TrainingConfig(**cfg["training"])
    stats = None if np.isnan(lo) else CorpusStats(lo, hi)
    skeleton = init_model(config, cfg["input_dim"])
    arrays = []
    for shape in skeleton.shapes():
        n = int(np.prod(shape)) * 8
        if off + n > len(body):
            raise CheckpointCorruptError(f"{path}: parameter block truncated")
        arrays.append(np.frombuffer(body, "<f8", count=n // 8, offset=off).reshape(shape).copy())
        off += n
    if off != len(body):
        raise CheckpointCorruptError(f"{path}: {len(body) - off} trailing bytes")
    params = skeleton.with_arrays(arrays)
    params.stats = stats
    params.sample_rate = cfg["sample_rate"]
    params.meta = cfg.get("meta", {})
    return params


def write_loss_csv(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,total,mse,kl\n")
        for r in history:
            fh.write(f"{r.epoch},{r.mean_total!r},{r.mean_mse!r},{r.mean_kl!r}\n")
