import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2

from qear import synthgen
from qear.anomaly import (
    AnomalyScore,
    InsufficientReferenceError,
    ReferenceStats,
    auc,
    evaluate_detection,
    fit_reference,
    score_segment,
    segment_latent,
)
from qear.mclt import AnalysisConfig
from qear.pipeline import prepare_training, synth_segments
from qear.vae import TrainingConfig, train

M = 64
SEG_LEN = 4096


@pytest.fixture(scope="module")
def trained():
    normal = synth_segments(synthgen.normal_profiles(), 2, 6, seed=3, segment_len=SEG_LEN)
    cfg = TrainingConfig(latent_dim=3, hidden_dims=(32,), epochs=15, seed=2, batch_size=32)
    X, stats, _ = prepare_training(normal, AnalysisConfig(M))
    params, _ = train(X, cfg, stats=stats)
    return params, normal


def test_rank_guard(trained):
    params, normal = trained
    with pytest.raises(InsufficientReferenceError):
        fit_reference(params, normal[:params.latent_dim + 1])
    with pytest.raises(InsufficientReferenceError):
        ReferenceStats.from_latents(np.zeros((4, 3)), np.zeros(4))


def test_identical_segments_give_zero_distance(trained):
    params, normal = trained
    ref = fit_reference(params, [normal[0]] * 6)
    assert np.allclose(ref.cov, 0.0, atol=1e-24)
    assert ref.ridge > 0
    assert score_segment(params, ref, normal[0]).mahalanobis == pytest.approx(0.0, abs=1e-9)


def test_reference_percentiles_and_chi_square_band(trained):
    params, normal = trained
    ref = fit_reference(params, normal)
    for table in (ref.recon_percentiles, ref.mahalanobis_percentiles):
        assert table[50] <= table[90] <= table[95] <= table[99]
    np.linalg.cholesky(ref.cov + ref.ridge * np.eye(len(ref.mean)))
    assert ref.ridge == pytest.approx(1e-6 * np.trace(ref.cov) / params.latent_dim)
    d = params.latent_dim
    med = np.median([score_segment(params, ref, s).mahalanobis for s in normal])
    assert np.sqrt(chi2.ppf(0.25, d)) <= med <= np.sqrt(chi2.ppf(0.75, d))


def test_score_fields_and_determinism(trained):
    params, normal = trained
    ref = fit_reference(params, normal)
    s1 = score_segment(params, ref, normal[3])
    s2 = score_segment(params, ref, normal[3])
    assert s1 == s2
    z, mse = segment_latent(params, normal[3])
    assert s1.recon_mse == mse >= 0
    assert s1.mahalanobis == pytest.approx(float(ref.mahalanobis(z)[0]))
    assert set(s1.flags) == {"recon_gt_p99", "mahalanobis_gt_p99"}
    s3 = score_segment(params, ref, normal[3], percentile=50)
    assert set(s3.flags) == {"recon_gt_p50", "mahalanobis_gt_p50"}
    json.dumps(s1.to_dict())


def test_mean_latent_scores_zero():
    r = np.random.default_rng(0)
    ref = ReferenceStats.from_latents(r.normal(size=(30, 4)), r.uniform(size=30))
    assert ref.mahalanobis(ref.mean)[0] == 0.0


def test_reference_dict_round_trip():
    r = np.random.default_rng(1)
    ref = ReferenceStats.from_latents(r.normal(size=(30, 4)), r.uniform(size=30))
    back = ReferenceStats.from_dict(json.loads(json.dumps(ref.to_dict())))
    q = r.normal(size=(7, 4))
    np.testing.assert_array_equal(ref.mahalanobis(q), back.mahalanobis(q))
    assert back.recon_percentiles == ref.recon_percentiles


def _affine(r, d):
    Q, _ = np.linalg.qr(r.normal(size=(d, d)))
    return Q * r.uniform(0.3, 3.0, d), r.normal(size=d)


@settings(max_examples=60, deadline=None)
@given(d=st.integers(1, 12), extra=st.integers(0, 40), seed=st.integers(0, 2 ** 20))
def test_mahalanobis_affine_invariance(d, extra, seed):
    r = np.random.default_rng(seed)
    Z = r.normal(size=(d + 2 + extra, d)) * r.uniform(0.2, 3.0, d)
    q = r.normal(size=(5, d)) * 2
    A, b = _affine(r, d)
    ref = ReferenceStats.from_latents(Z, np.ones(len(Z)))
    base = ref.mahalanobis(q)

    # transform the fitted reference, regularized covariance included
    moved = ReferenceStats(A @ ref.mean + b, A @ (ref.cov + ref.ridge * np.eye(d)) @ A.T, 0.0, {})
    np.testing.assert_allclose(moved.mahalanobis(q @ A.T + b), base, rtol=1e-6, atol=1e-6)

    # refit on transformed latents without ridge
    plain = ReferenceStats.from_latents(Z, np.ones(len(Z)), ridge=0.0).mahalanobis(q)
    refit = ReferenceStats.from_latents(Z @ A.T + b, np.ones(len(Z)), ridge=0.0)
    np.testing.assert_allclose(refit.mahalanobis(q @ A.T + b), plain, rtol=1e-6, atol=1e-6)


def test_auc_examples():
    assert auc([1, 2, 3], [4, 5, 6]) == 1.0
    assert auc([4, 5, 6], [1, 2, 3]) == 0.0
    assert auc([1, 2, 3], [1, 2, 3]) == 0.5
    normal, anomalous = [0.1, 0.4, 0.35], [0.8, 0.3, 0.4]
    wins = sum((a > n) + 0.5 * (a == n) for a, n in itertools.product(anomalous, normal))
    assert auc(normal, anomalous) == pytest.approx(wins / 9)
    assert auc(normal, anomalous) == pytest.approx(6.5 / 9)
    with pytest.raises(ValueError):
        auc([], [1.0])


@settings(max_examples=100, deadline=None)
@given(a=st.lists(st.integers(0, 20), min_size=1, max_size=30),
       b=st.lists(st.integers(0, 20), min_size=1, max_size=30))
def test_auc_properties(a, b):
    v = auc(a, b)
    assert 0.0 <= v <= 1.0
    assert auc(b, a) == pytest.approx(1.0 - v)
    wins = sum((y > x) + 0.5 * (y == x) for x, y in itertools.product(a, b))
    assert v == pytest.approx(wins / (len(a) * len(b)))


def test_evaluate_detection_summary():
    out = evaluate_detection([1.0, 2.0, 3.0], [10.0, 11.0])
    assert out["auc"] == 1.0
    assert out["n_normal"] == 3 and out["n_anomalous"] == 2
    assert out["median_gap"] == pytest.approx(8.5)
    assert out["normal_quantiles"]["50"] == 2.0
    json.dumps(out)


def test_score_dict_shape():
    s = AnomalyScore("x", 1, 0.5, 2.0, {"recon_gt_p99": False})
    assert s.to_dict() == {"source_id": "x", "index": 1, "recon_mse": 0.5,
                           "mahalanobis": 2.0, "flags": {"recon_gt_p99": False}}
