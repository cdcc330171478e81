import csv
import json

import pytest

from qear.audio_io import read_wav
from qear.cli import main

SMALL = ["--segment-len", "4096", "-M", "64"]
NET = ["--hidden-dims", "32", "--latent-dim", "3", "--epochs", "4", "--batch-size", "32"]


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--preset", "normal", "--per-profile", "2", "--duration", "0.6",
                 "--seed", "3", "--out", str(root / "corpus")]) == 0
    assert main(["synth", "--preset", "anomaly", "--per-profile", "1", "--duration", "0.6",
                 "--seed", "9", "--out", str(root / "anom")]) == 0
    assert main(["train", "--corpus", str(root / "corpus"), "--out", str(root / "model"),
                 "--seed", "1", *SMALL, *NET]) == 0
    return root


def test_synth_all_presets(tmp_path):
    assert main(["synth", "--preset", "all", "--per-profile", "3", "--duration", "0.1",
                 "--out", str(tmp_path / "c")]) == 0
    wavs = sorted((tmp_path / "c").glob("*.wav"))
    assert len(wavs) == 15
    manifest = _rows(tmp_path / "c" / "manifest.csv")
    assert len(manifest) == 15 and set(manifest[0]) == {"path", "profile", "seed"}
    assert (tmp_path / "c" / "run_config.json").exists()
    assert read_wav(wavs[0]).sample_rate == 48_000


def test_synth_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--preset", "crusher", "--duration", "0.2", "--seed", "7",
                     "--out", str(tmp_path / name)]) == 0
    a = sorted((tmp_path / "a").glob("*.wav"))
    b = sorted((tmp_path / "b").glob("*.wav"))
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_synth_single_file_and_profile_file(tmp_path):
    assert main(["synth", "--profile", "crusher", "--duration", "0.25", "--seed", "7",
                 "--out", str(tmp_path / "one.wav")]) == 0
    assert len(read_wav(tmp_path / "one.wav")) == 12_000
    prof = tmp_path / "rig.txt"
    prof.write_text("name=rig\nharmonics=220:0.5\nnoise_level=0.05\n")
    assert main(["synth", "--profile-file", str(prof), "--duration", "0.1",
                 "--out", str(tmp_path / "rig")]) == 0
    assert (tmp_path / "rig" / "manifest.csv").exists()


@pytest.mark.parametrize("argv, code", [
    (["synth", "--duration", "0", "--out", "x"], 1),
    (["synth", "--profile", "drill", "--out", "x"], 1),
    (["synth", "--per-profile", "0", "--out", "x"], 1),
    (["train", "--corpus", "/nonexistent/dir", "--out", "x"], 2),
    (["train"], 1),
    (["frobnicate"], 1),
    (["eval", "--corpus", "x", "--out", "y", "--model", "/nonexistent/model.qvae"], 2),
])
def test_error_exit_codes(tmp_path, monkeypatch, argv, code, capsys):
    monkeypatch.chdir(tmp_path)
    if argv[0] == "eval":
        (tmp_path / "x").mkdir()
        main(["synth", "--profile", "belt", "--duration", "0.2", "--out", "x"])
        argv = argv + SMALL
    assert main(argv) == code
    assert capsys.readouterr().err


def test_train_outputs(work):
    out = work / "model"
    assert {p.name for p in out.iterdir()} >= {"model.qvae", "loss.csv", "run_config.json"}
    rows = _rows(out / "loss.csv")
    assert list(rows[0]) == ["epoch", "total", "mse", "kl"]
    assert [int(r["epoch"]) for r in rows] == list(range(1, len(rows) + 1))
    cfg = json.loads((out / "run_config.json").read_text())
    assert cfg["latent_dim"] == 3 and cfg["M"] == 64 and cfg["seed"] == 1


def test_train_repeat_is_identical(work, tmp_path):
    assert main(["train", "--corpus", str(work / "corpus"), "--out", str(tmp_path / "m"),
                 "--seed", "1", *SMALL, *NET]) == 0
    assert (tmp_path / "m" / "loss.csv").read_bytes() == (work / "model" / "loss.csv").read_bytes()


def test_config_file_and_env_precedence(work, tmp_path, monkeypatch):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"epochs": 2, "seed": 5}))
    monkeypatch.setenv("QEAR_SEED", "11")
    assert main(["train", "--corpus", str(work / "corpus"), "--out", str(tmp_path / "m"),
                 "--config", str(conf), *SMALL, "--hidden-dims", "8", "--latent-dim", "2",
                 "--epochs", "1"]) == 0
    cfg = json.loads((tmp_path / "m" / "run_config.json").read_text())
    # flag beats file, file beats environment
    assert cfg["epochs"] == 1 and cfg["seed"] == 5
    assert len(_rows(tmp_path / "m" / "loss.csv")) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"wobble": 1}))
    assert main(["train", "--corpus", "x", "--out", "y", "--config", str(bad)]) == 1


def test_eval_summary(work, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--model", str(work / "model"), "--corpus", str(work / "corpus"),
                 "--with-baseline", "--out", str(out), *SMALL]) == 0
    summary = _rows(out / "summary.csv")
    assert [(r["model"], r["statistic"]) for r in summary] == [
        (str(work / "model"), "mean"), (str(work / "model"), "variance"),
        ("untrained", "mean"), ("untrained", "variance"),
    ]
    assert all(float(r["mse"]) >= 0 and float(r["lsd"]) >= 0 for r in summary)
    assert float(summary[0]["mse"]) < float(summary[2]["mse"])
    per = _rows(out / "per_segment.csv")
    assert len(per) == 2 * len([r for r in per if r["model"] == "untrained"])


def test_project_outputs(work, tmp_path):
    out = tmp_path / "pr"
    assert main(["project", "--model", str(work / "model"), "--corpus", str(work / "corpus"),
                 "--anomaly-dir", str(work / "anom"), "--method", "pca", "--out", str(out),
                 *SMALL]) == 0
    rows = _rows(out / "coords.csv")
    coord_cols = [c for c in rows[0] if c in ("x", "y")]
    assert coord_cols == ["x", "y"]
    anomalous = [r for r in rows if r["is_anomaly"] == "true"]
    assert anomalous and all(r["source_id"].startswith("belt_damaged_offsite") for r in anomalous)
    assert all(r["is_anomaly"] == "false" for r in rows
               if not r["source_id"].startswith("belt_damaged_offsite"))
    diag = json.loads((out / "diagnostics.json").read_text())
    assert set(diag) == {"pca"}

    out2 = tmp_path / "ts"
    assert main(["project", "--model", str(work / "model"), "--corpus", str(work / "corpus"),
                 "--method", "tsne", "--perplexity", "5", "--iters", "300", "--out", str(out2),
                 *SMALL]) == 0
    assert len(_rows(out2 / "coords.csv")) == len(rows) - len(anomalous)
    assert main(["project", "--model", str(work / "model"), "--corpus", str(work / "corpus"),
                 "--method", "tsne", "--out", str(tmp_path / "few"), *SMALL]) == 2


def test_project_rejects_model_mismatch(work, tmp_path):
    assert main(["project", "--model", str(work / "model"), "--corpus", str(work / "corpus"),
                 "--method", "pca", "--out", str(tmp_path / "x"), "--segment-len", "4096",
                 "-M", "128"]) == 2


def test_score_report(work, tmp_path):
    out = tmp_path / "sc"
    assert main(["score", "--model", str(work / "model"), "--reference", str(work / "corpus"),
                 "--target", str(work / "corpus"), "--anomaly-dir", str(work / "anom"),
                 "--out", str(out), *SMALL]) == 0
    report = json.loads((out / "report.json").read_text())
    assert 0.0 <= report["auc"] <= 1.0
    seg = report["segments"][0]
    assert {"source_id", "recon_mse", "mahalanobis", "flags", "is_anomaly"} <= set(seg)

    self_out = tmp_path / "self"
    assert main(["score", "--model", str(work / "model"), "--reference", str(work / "corpus"),
                 "--target", str(work / "corpus"), "--out", str(self_out), *SMALL]) == 0
    assert "auc" not in json.loads((self_out / "report.json").read_text())
    assert main(["score", "--model", str(work / "model"), "--reference", str(work / "corpus"),
                 "--out", str(tmp_path / "none"), *SMALL]) == 1


def test_score_insufficient_reference(work, tmp_path):
    small = tmp_path / "tiny"
    assert main(["synth", "--profile", "belt", "--duration", "0.09", "--out", str(small)]) == 0
    assert main(["score", "--model", str(work / "model"), "--reference", str(small),
                 "--target", str(small), "--out", str(tmp_path / "o"), *SMALL]) == 2
