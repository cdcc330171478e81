"""Command-line entry point: synth, train, eval, project, score.

Settings resolve as defaults < ``--config`` JSON file < command-line flags;
``QEAR_SEED`` replaces the default seed.  Every output directory receives
the resolved settings as ``run_config.json``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import anomaly, latent_analysis, metrics, pipeline, synthgen, vae
from .audio_io import DEFAULT_SAMPLE_RATE, DEFAULT_SEGMENT_LEN, WavError, write_wav
from .features import DegenerateCorpusError
from .mclt import AnalysisConfig

log = logging.getLogger("qear")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

MODEL_FILE = "model.qvae"
LOSS_FILE = "loss.csv"
RUN_CONFIG = "run_config.json"
# one default recording holds ten default-length segments
DEFAULT_DURATION = 10 * DEFAULT_SEGMENT_LEN / DEFAULT_SAMPLE_RATE


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    segment_len: int = DEFAULT_SEGMENT_LEN
    hop: int | None = None
    M: int = 1024
    bit_depth: str = "24"
    # training
    latent_dim: int = 20
    beta: float = 1e-3
    hidden_dims: tuple = (512, 128)
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    early_stop_window: int = 5
    early_stop_tol: float = 0.005
    # synthesis
    preset: str = "all"
    profile: str | None = None
    profile_file: str | None = None
    per_profile: int = 1
    duration: float = DEFAULT_DURATION
    # analysis
    method: str = "both"
    granularity: str = "segment"
    perplexity: float = 30.0
    tsne_iters: int = 1000
    percentile: int = 99
    with_baseline: bool = False
    # paths
    corpus: str | None = None
    out: str | None = None
    model: list | None = None
    anomaly_dir: str | None = None
    target: str | None = None
    reference: str | None = None

    def training_config(self) -> vae.TrainingConfig:
        return vae.TrainingConfig(
            latent_dim=self.latent_dim, beta=self.beta, hidden_dims=tuple(self.hidden_dims),
            learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
            seed=self.seed, early_stop_window=self.early_stop_window,
            early_stop_tol=self.early_stop_tol,
        )

    def analysis_config(self) -> AnalysisConfig:
        return AnalysisConfig(self.M)

    def write(self, out_dir) -> None:
        with open(Path(out_dir) / RUN_CONFIG, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if os.environ.get("QEAR_SEED"):
        try:
            cfg.seed = int(os.environ["QEAR_SEED"])
        except ValueError:
            raise UsageError(f"QEAR_SEED must be an integer, got {os.environ['QEAR_SEED']!r}")
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}")
        unknown = set(overrides) - _FIELD_NAMES
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for k, v in overrides.items():
            setattr(cfg, k, v)
    for k, v in vars(args).items():
        if k in _FIELD_NAMES and v is not None:
            setattr(cfg, k, v)
    if isinstance(cfg.model, str):
        cfg.model = [cfg.model]
    cfg.hidden_dims = tuple(int(h) for h in cfg.hidden_dims)
    return cfg


def _require(cfg: RunConfig, *names):
    missing = [n for n in names if getattr(cfg, n) in (None, [], "")]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + m.replace("_", "-")
                                                                   for m in missing))


def _out_dir(cfg: RunConfig) -> Path:
    _require(cfg, "out")
    return pipeline.ensure_dir(cfg.out)


def _load_segments(path, cfg: RunConfig):
    try:
        segs = pipeline.load_segments(path, cfg.segment_len, cfg.hop)
    except FileNotFoundError as exc:
        raise DataError(str(exc))
    if not segs:
        raise DataError(f"{path}: recordings shorter than one segment ({cfg.segment_len} samples)")
    return segs


def _load_models(cfg: RunConfig):
    _require(cfg, "model")
    out = []
    for p in cfg.model:
        path = Path(p)
        if path.is_dir():
            path = path / MODEL_FILE
        if not path.exists():
            raise DataError(f"model {p} not found")
        out.append((str(p), vae.load_model(path)))
    return out


def _check_compatible(params: vae.ModelParams, segs, cfg: RunConfig) -> None:
    rates = {s.samples.sample_rate for s in segs}
    if rates != {params.sample_rate}:
        raise DataError(f"corpus sample rate(s) {sorted(rates)} differ from model's "
                        f"{params.sample_rate}")
    if params.M != cfg.M:
        raise DataError(f"model expects M={params.M}, settings give M={cfg.M}")


# -- subcommands --------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    _require(cfg, "out")
    if cfg.duration <= 0:
        raise UsageError("--duration must be positive")
    if cfg.per_profile < 1:
        raise UsageError("--per-profile must be >= 1")
    if cfg.profile_file:
        profiles = [synthgen.load_profile(cfg.profile_file)]
    elif cfg.profile:
        profiles = [_named_profile(cfg.profile)]
    else:
        profiles = _preset_group(cfg.preset)

    if str(cfg.out).endswith(".wav"):
        if len(profiles) != 1:
            raise UsageError("a single .wav output needs exactly one profile")
        Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
        sig = synthgen.generate(profiles[0], cfg.duration, cfg.sample_rate, cfg.seed)
        write_wav(sig, cfg.out, cfg.bit_depth)
        log.info("wrote %s", cfg.out)
        return EXIT_OK

    out = _out_dir(cfg)
    recs = pipeline.synth_corpus(out, profiles, cfg.per_profile, cfg.duration, cfg.seed,
                                 cfg.sample_rate, cfg.bit_depth)
    cfg.write(out)
    log.info("wrote %d recordings to %s", len(recs), out)
    return EXIT_OK


def _named_profile(name: str) -> synthgen.MachineProfile:
    if name == synthgen.anomaly_profile().name:
        return synthgen.anomaly_profile()
    try:
        return synthgen.get_profile(name)
    except KeyError as exc:
        raise UsageError(str(exc.args[0]))


def _preset_group(name: str):
    groups = {
        "all": synthgen.preset_profiles(),
        "normal": synthgen.normal_profiles(),
        "damaged": [p for p in synthgen.preset_profiles() if p.damage is not None],
        "anomaly": [synthgen.anomaly_profile()],
    }
    if name in groups:
        return groups[name]
    return [_named_profile(name)]


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "corpus", "out")
    tcfg = cfg.training_config()
    acfg = cfg.analysis_config()
    segs = _load_segments(cfg.corpus, cfg)
    X, stats, _ = pipeline.prepare_training(segs, acfg)
    log.info("training on %d frames from %d segments (d=%d, beta=%g)",
             X.shape[0], len(segs), tcfg.latent_dim, tcfg.beta)
    params, history = vae.train(X, tcfg, stats, sample_rate=segs[0].samples.sample_rate)
    out = _out_dir(cfg)
    vae.save_model(params, out / MODEL_FILE)
    vae.write_loss_csv(history, out / LOSS_FILE)
    cfg.write(out)
    log.info("stopped after %d epochs; final mse %.6g", len(history), history[-1].mean_mse)
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "corpus", "out")
    acfg = cfg.analysis_config()
    segs = _load_segments(cfg.corpus, cfg)
    models = _load_models(cfg)
    if cfg.with_baseline:
        first = models[0][1]
        base = vae.init_model(first.config, first.input_dim, first.stats, first.sample_rate)
        models.append(("untrained", base))
    out = _out_dir(cfg)
    per_rows, summary = [], []
    for name, params in models:
        _check_compatible(params, segs, cfg)
        mses, lsds = [], []
        for s in segs:
            rec, frame_mse = vae.reconstruct_segment(params, s, acfg)
            m = float(np.mean(frame_mse))
            lsd = metrics.log_spectral_distance(s, rec, acfg)
            mses.append(m)
            lsds.append(lsd)
            per_rows.append([name, s.source_id, s.index, repr(m), repr(lsd)])
        summary.append([name, "mean", repr(float(np.mean(mses))), repr(float(np.mean(lsds)))])
        summary.append([name, "variance", repr(float(np.var(mses))), repr(float(np.var(lsds)))])
    _write_csv(out / "per_segment.csv", ["model", "source_id", "index", "mse", "lsd"], per_rows)
    _write_csv(out / "summary.csv", ["model", "statistic", "mse", "lsd"], summary)
    cfg.write(out)
    return EXIT_OK


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_project(cfg: RunConfig) -> int:
    _require(cfg, "corpus", "out")
    if cfg.method not in ("pca", "tsne", "both"):
        raise UsageError("--method must be pca, tsne or both")
    (_, params), = _load_models(cfg)[:1]
    acfg = cfg.analysis_config()
    segs = _load_segments(cfg.corpus, cfg)
    _check_compatible(params, segs, cfg)
    points = latent_analysis.embed_corpus(params, segs, cfg.granularity, acfg)
    if cfg.anomaly_dir:
        extra = _load_segments(cfg.anomaly_dir, cfg)
        _check_compatible(params, extra, cfg)
        points += latent_analysis.embed_corpus(params, extra, cfg.granularity, acfg,
                                               is_anomaly=True)
    projections = []
    if cfg.method in ("pca", "both"):
        projections.append(latent_analysis.pca2(points))
    if cfg.method in ("tsne", "both"):
        if len(points) < 3 * cfg.perplexity:
            raise DataError(f"{len(points)} points are too few for perplexity {cfg.perplexity}")
        projections.append(latent_analysis.tsne2(points, cfg.perplexity, cfg.tsne_iters,
                                                 cfg.seed))
    out = _out_dir(cfg)
    latent_analysis.write_projection_csv(points, projections, out / "coords.csv")
    diag = {p.method: {k: v for k, v in p.diagnostics.items()
                       if k in ("explained_variance_ratio", "kl", "log_perplexity_error")}
            for p in projections}
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(diag, fh, indent=2, sort_keys=True)
    cfg.write(out)
    return EXIT_OK


def cmd_score(cfg: RunConfig) -> int:
    _require(cfg, "reference", "out")
    (_, params), = _load_models(cfg)[:1]
    acfg = cfg.analysis_config()
    ref_segs = _load_segments(cfg.reference, cfg)
    _check_compatible(params, ref_segs, cfg)
    ref = anomaly.fit_reference(params, ref_segs, acfg)

    targets = []
    if cfg.target:
        targets += [(s, False) for s in _load_segments(cfg.target, cfg)]
    if cfg.anomaly_dir:
        targets += [(s, True) for s in _load_segments(cfg.anomaly_dir, cfg)]
    if not targets:
        raise UsageError("nothing to score: give --target and/or --anomaly-dir")

    entries, normal, anomalous = [], [], []
    for seg, is_anom in targets:
        _check_compatible(params, [seg], cfg)
        sc = anomaly.score_segment(params, ref, seg, acfg, cfg.percentile)
        entries.append({**sc.to_dict(), "is_anomaly": is_anom})
        (anomalous if is_anom else normal).append(sc.mahalanobis)

    report = {"reference": {k: v for k, v in ref.to_dict().items() if k.endswith("percentiles")},
              "segments": entries}
    if normal and anomalous:
        report["detection"] = anomaly.evaluate_detection(normal, anomalous)
        report["auc"] = report["detection"]["auc"]
    out = _out_dir(cfg)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(out / "reference.json", "w") as fh:
        json.dump(ref.to_dict(), fh)
    cfg.write(out)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "project": cmd_project, "score": cmd_score}


# -- argument parsing ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig overrides")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--segment-len", dest="segment_len", type=int)
    common.add_argument("--hop", type=int)
    common.add_argument("-M", "--bins", dest="M", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="qear", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", parents=[common], help="render synthetic machinery recordings")
    s.add_argument("--preset", help="all | normal | damaged | anomaly | <profile name>")
    s.add_argument("--profile", help="single named profile")
    s.add_argument("--profile-file", dest="profile_file", help="key=value profile file")
    s.add_argument("--per-profile", dest="per_profile", type=int)
    s.add_argument("--duration", type=float, help="seconds per recording")
    s.add_argument("--sample-rate", dest="sample_rate", type=int)
    s.add_argument("--bit-depth", dest="bit_depth", choices=["16", "24", "32f"])

    t = sub.add_parser("train", parents=[common], help="train a beta-VAE on a corpus")
    t.add_argument("--corpus")
    t.add_argument("--latent-dim", dest="latent_dim", type=int)
    t.add_argument("--beta", type=float)
    t.add_argument("--hidden-dims", dest="hidden_dims", type=_int_list)
    t.add_argument("--lr", dest="learning_rate", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--early-stop-window", dest="early_stop_window", type=int)
    t.add_argument("--early-stop-tol", dest="early_stop_tol", type=float)

    e = sub.add_parser("eval", parents=[common], help="reconstruction MSE / LSD summary")
    e.add_argument("--model", action="append")
    e.add_argument("--corpus")
    e.add_argument("--with-baseline", dest="with_baseline", action="store_true", default=None)

    pr = sub.add_parser("project", parents=[common], help="2-D PCA / t-SNE coordinates")
    pr.add_argument("--model", action="append")
    pr.add_argument("--corpus")
    pr.add_argument("--anomaly-dir", dest="anomaly_dir")
    pr.add_argument("--method", choices=["pca", "tsne", "both"])
    pr.add_argument("--granularity", choices=["frame", "segment"])
    pr.add_argument("--perplexity", type=float)
    pr.add_argument("--iters", dest="tsne_iters", type=int)

    sc = sub.add_parser("score", parents=[common], help="anomaly scores against a reference")
    sc.add_argument("--model", action="append")
    sc.add_argument("--reference", help="normal-operation corpus directory")
    sc.add_argument("--target", help="corpus of presumed-normal segments to score")
    sc.add_argument("--anomaly-dir", dest="anomaly_dir", help="corpus of known anomalies")
    sc.add_argument("--percentile", type=int, choices=list(anomaly.PERCENTILES))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"qear {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, WavError, DegenerateCorpusError,
            anomaly.InsufficientReferenceError, vae.CheckpointError,
            latent_analysis.DegenerateDataError) as exc:
        print(f"qear {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (vae.TrainingDivergedError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"qear {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"qear {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
