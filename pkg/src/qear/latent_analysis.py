"""Two-dimensional views of the latent space: PCA (Jacobi eigensolver) and exact t-SNE."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .mclt import AnalysisConfig, analyze
from .features import feature_matrix
from .vae import ModelParams, encode_batch


class DegenerateDataError(ValueError):
    pass


@dataclass
class LatentPoint:
    z: np.ndarray
    source_id: str = ""
    is_anomaly: bool = False
    index: int = 0


@dataclass
class Projection2D:
    coords: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)


def _matrix(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        Z = np.asarray(points, dtype=np.float64)
    else:
        Z = np.stack([np.asarray(p.z, dtype=np.float64) for p in points])
    if Z.ndim != 2 or not np.all(np.isfinite(Z)):
        raise ValueError("latent points must form a finite (n, d) array")
    return Z


def embed_corpus(params: ModelParams, segments, granularity: str = "segment",
                 config: AnalysisConfig | None = None, is_anomaly: bool = False):
    """Posterior means for every frame, or their per-segment average."""
    if granularity not in ("frame", "segment"):
        raise ValueError("granularity must be 'frame' or 'segment'")
    config = config or AnalysisConfig(params.M)
    out = []
    for seg in segments:
        mu, _ = encode_batch(params, feature_matrix(analyze(seg, config), params.stats))
        if granularity == "segment":
            out.append(LatentPoint(mu.mean(0), seg.source_id, is_anomaly, seg.index))
        else:
            out += [LatentPoint(m, seg.source_id, is_anomaly, seg.index) for m in mu]
    return out


_EPS = np.finfo(np.float64).eps


def jacobi_eigh(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors-as-columns), unsorted.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if scale == 0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                # negligible next to both diagonal entries: drop it
                if abs(apq) <= _EPS * min(abs(A[p, p]), abs(A[q, q])) or apq == 0.0:
                    A[p, q] = A[q, p] = 0.0
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * cp - s * cq, s * cp + c * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :], A[q, :] = c * rp - s * rq, s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
    return np.diag(A).copy(), V


def pca2(points) -> Projection2D:
    """Project onto the two leading principal axes.

    Each axis is signed so that its largest-magnitude loading is positive.
    """
    Z = _matrix(points)
    n, d = Z.shape
    if n < 3 or d < 2:
        raise ValueError(f"pca2 needs n >= 3 and d >= 2, got n={n}, d={d}")
    Zc = Z - Z.mean(0)
    cov = Zc.T @ Zc / (n - 1)
    total = np.trace(cov)
    if total <= (1e-12 * max(np.max(np.abs(Z)), 1e-300)) ** 2:
        raise DegenerateDataError("latent points have no variance")
    vals, vecs = jacobi_eigh(cov)
    order = np.argsort(-vals, kind="stable")
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    comps = vecs[:, :2].copy()
    for j in range(2):
        if comps[np.argmax(np.abs(comps[:, j])), j] < 0:
            comps[:, j] *= -1
    ratios = vals[:2] / vals.sum()
    return Projection2D(Zc @ comps, "pca", {
        "explained_variance_ratio": ratios.tolist(),
        "components": comps,
        "eigenvalues": vals,
    })


def _sq_dists(X: np.ndarray) -> np.ndarray:
    s = np.sum(X * X, axis=1)
    D = s[:, None] + s[None, :] - 2.0 * X @ X.T
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def conditional_affinities(D: np.ndarray, perplexity: float, tol: float = 1e-5,
                           max_iter: int = 50):
    """Row-wise Gaussian affinities whose entropy matches log(perplexity).

    The precision of every row is found by bisection (all rows at once).
    Returns (P_conditional, achieved log-perplexity per row).
    """
    n = D.shape[0]
    target = np.log(perplexity)
    mask = ~np.eye(n, dtype=bool)
    Dn = np.where(mask, D, np.inf)
    Dn = Dn - Dn.min(axis=1, keepdims=True)  # shift for stability; cancels on normalization
    Dz = np.where(mask, Dn, 0.0)
    beta = 1.0 / np.maximum(Dz.sum(1) / (n - 1), 1e-300)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)

    def entropy(b):
        W = np.exp(-Dn * b[:, None])
        S = W.sum(1)
        H = np.log(S) + b * (W * Dz).sum(1) / S
        return W / S[:, None], H

    P, H = entropy(beta)
    for _ in range(max_iter):
        err = H - target
        todo = np.abs(err) >= tol
        if not todo.any():
            break
        up = todo & (err > 0)  # too flat: sharpen
        down = todo & (err < 0)
        lo[up] = beta[up]
        hi[down] = beta[down]
        beta = np.where(up, np.where(np.isinf(hi), beta * 2.0, 0.5 * (beta + hi)), beta)
        beta = np.where(down, 0.5 * (beta + lo), beta)
        P, H = entropy(beta)
    return P, H


def tsne_kl(P: np.ndarray, Q: np.ndarray) -> float:
    m = P > 0
    return float(np.sum(P[m] * np.log(P[m] / Q[m])))


def tsne2(points, perplexity: float = 30.0, iters: int = 1000, seed: int = 0,
          learning_rate: float = 200.0, exaggeration: float = 12.0,
          exaggeration_iters: int = 250, record_every: int = 50) -> Projection2D:
    """Exact O(n^2) t-SNE to two dimensions."""
    X = _matrix(points)
    n = X.shape[0]
    if perplexity <= 1 or n < 3 * perplexity:
        raise ValueError(f"perplexity {perplexity} infeasible for n={n} (need n >= 3*perplexity)")
    Pc, H = conditional_affinities(_sq_dists(X), perplexity)
    P = (Pc + Pc.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)
    np.fill_diagonal(P, 0.0)

    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history = {}

    def kernel(Y):
        num = 1.0 / (1.0 + _sq_dists(Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        np.fill_diagonal(Q, 0.0)
        return num, Q

    for it in range(1, iters + 1):
        early = it <= exaggeration_iters
        momentum = 0.5 if early else 0.8
        num, Q = kernel(Y)
        W = ((exaggeration if early else 1.0) * P - Q) * num
        grad = 4.0 * (W.sum(1)[:, None] * Y - W @ Y)
        same = (grad > 0) == (update > 0)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(0)
        if it % record_every == 0 or it == iters:
            history[it] = tsne_kl(P, kernel(Y)[1])

    return Projection2D(Y, "tsne", {
        "kl": history[iters],
        "kl_history": history,
        "log_perplexity_error": float(np.max(np.abs(H - np.log(perplexity)))),
    })


def write_projection_csv(points, projections, path) -> int:
    """Rows of point_id, source_id, is_anomaly, x, y, method; returns rows written."""
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_id", "source_id", "is_anomaly", "x", "y", "method"])
        for proj in projections:
            for i, (p, (x, y)) in enumerate(zip(points, proj.coords)):
                w.writerow([i, p.source_id, str(bool(p.is_anomaly)).lower(), repr(float(x)),
                            repr(float(y)), proj.method])
                rows += 1
    return rows
