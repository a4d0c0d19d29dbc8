"""Batch command-line pipeline: synth, segment, train, eval, shift.

Settings resolve as flags > config file > defaults. The config file holds
flat dotted keys, one "key = value" per line, "#" comments. The STWNN_LOG
environment variable (debug/info/warning) selects log verbosity. Exit codes:
0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import csi, dataio, network, training, volumes
from .errors import (CompatibilityError, ConfigError, CorruptionError,
                     DimensionError, FormatError, InsufficientDataError,
                     StwnnError, UsageError, ValidationError)

log = logging.getLogger("stwnn")

_USAGE_ERRORS = (ConfigError, UsageError, ValidationError, DimensionError,
                 CompatibilityError)
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _load_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _resolve(args, file_values: dict, key: str, cast, default):
    """flags > config file > default."""
    flag = getattr(args, key.replace(".", "_").replace("-", "_"), None)
    if flag is not None:
        return flag
    if key in file_values:
        try:
            return cast(file_values[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: cannot parse {file_values[key]!r}") from exc
    return default


def _int_list(text) -> tuple:
    return tuple(int(x) for x in str(text).split(","))


def _echo(settings: dict):
    for key in sorted(settings):
        log.info("config %s = %s", key, settings[key])


def _stream_name(split: str, class_id: int, index: int) -> str:
    return f"{split}_c{class_id}_{index:04d}.csi1"


def _cmd_synth(args) -> int:
    file_values = _load_config_file(args.config) if args.config else {}
    r = lambda key, cast, default: _resolve(args, file_values, key, cast, default)
    settings = {
        "synth.out": r("synth.out", str, "data"),
        "synth.classes": r("synth.classes", int, 3),
        "synth.per_class": r("synth.per_class", int, 30),
        "synth.val_per_class": r("synth.val_per_class", int, 3),
        "synth.test_per_class": r("synth.test_per_class", int, 10),
        "synth.duration": r("synth.duration", float, 1.0),
        "synth.rate": r("synth.rate", float, 100.0),
        "synth.tx": r("synth.tx", int, 3),
        "synth.rx": r("synth.rx", int, 3),
        "synth.subcarriers": r("synth.subcarriers", int, 30),
        "synth.noise_std": r("synth.noise_std", float, 0.1),
        "synth.seed": r("synth.seed", int, 0),
    }
    _echo(settings)
    n_classes = settings["synth.classes"]
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    per_split = {"train": settings["synth.per_class"],
                 "val": settings["synth.val_per_class"],
                 "test": settings["synth.test_per_class"]}
    if per_split["train"] < 1 or per_split["test"] < 1:
        raise ValidationError("per-class stream counts for train and test must be >= 1")
    if per_split["val"] < 0:
        raise ValidationError("val per-class stream count must be >= 0")

    out_dir = Path(settings["synth.out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    n_tx, n_rx, n_sub = settings["synth.tx"], settings["synth.rx"], settings["synth.subcarriers"]
    entries = []
    for split_index, split in enumerate(("train", "val", "test")):
        for class_id in range(n_classes):
            for k in range(per_split[split]):
                seed = int(np.random.default_rng(
                    [settings["synth.seed"], split_index, class_id, k]).integers(2**32))
                spec = csi.doppler_activity_spec(
                    class_id, n_ant=n_tx * n_rx,
                    duration_s=settings["synth.duration"],
                    noise_std=settings["synth.noise_std"], seed=seed)
                stream = csi.synth_stream(spec, n_tx, n_rx, n_sub, settings["synth.rate"])
                name = _stream_name(split, class_id, k)
                dataio.save_stream(out_dir / name, stream)
                entries.append(dataio.ManifestEntry(path=name, label=class_id, split=split))
    manifest = dataio.DatasetManifest(
        entries=entries, n_classes=n_classes, n_tx=n_tx, n_rx=n_rx, n_sub=n_sub,
        sample_rate_hz=settings["synth.rate"])
    dataio.write_manifest(out_dir / "manifest.tsv", manifest)
    print(f"wrote {len(entries)} streams and manifest.tsv to {out_dir}")
    return EXIT_OK


def _seg_config(args, file_values) -> volumes.SegmentationConfig:
    r = lambda key, cast, default: _resolve(args, file_values, key, cast, default)
    cfg = volumes.SegmentationConfig(
        window=r("segment.window", int, 32),
        overlap=r("segment.overlap", int, 16),
        scales=r("segment.scales", _int_list, (1, 2, 4)),
        target_shape=r("segment.target", _int_list, (30, 32, 9)))
    for key, value in (("segment.window", cfg.window), ("segment.overlap", cfg.overlap),
                       ("segment.scales", cfg.scales), ("segment.target", cfg.target_shape)):
        log.info("config %s = %s", key, value)
    return cfg


def _cmd_segment(args) -> int:
    file_values = _load_config_file(args.config) if args.config else {}
    cfg = _seg_config(args, file_values)
    manifest_path = Path(args.manifest)
    manifest = dataio.load_manifest(manifest_path)
    out_dir = Path(_resolve(args, file_values, "segment.out", str, "volumes"))
    out_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    failures = 0
    for e in manifest.entries:
        stream = dataio.load_stream(manifest_path.parent / e.path)
        signal = csi.amplitude(stream)
        try:
            vols = volumes.stream_volumes(signal, cfg, label=e.label)
        except InsufficientDataError as exc:
            log.warning("skipping %s: %s", e.path, exc)
            failures += 1
            continue
        name = Path(e.path).stem + ".vol1"
        dataio.save_volumes(out_dir / name, vols)
        entries.append(dataio.ManifestEntry(path=name, label=e.label, split=e.split))
        n_segments = len(vols) // len(cfg.scales)
        print(f"{e.path}\tsegments={n_segments}\tvolumes={len(vols)}")
    if not entries:
        raise UsageError("no stream produced any volume")
    vol_manifest = dataio.DatasetManifest(entries=entries, n_classes=manifest.n_classes)
    dataio.write_manifest(out_dir / "manifest.tsv", vol_manifest)
    if failures:
        log.warning("%d streams skipped", failures)
    return EXIT_OK


def _load_samples(manifest_path: Path, split: str):
    """(sample array, label) pairs for one split of a volumes manifest."""
    manifest = dataio.load_manifest(manifest_path)
    dataset = []
    n_channels = None
    for e in manifest.split(split):
        vols = dataio.load_volumes(manifest_path.parent / e.path)
        for group in volumes.group_by_segment(vols):
            sample = volumes.stack_channels(group)
            if n_channels is None:
                n_channels = sample.shape[0]
            elif sample.shape[0] != n_channels:
                raise ValidationError(f"{e.path}: inconsistent channel counts across samples")
            dataset.append((sample, e.label))
    return dataset, manifest.n_classes, n_channels


def _net_config(args, file_values, n_classes: int, in_channels: int) -> network.NetworkConfig:
    r = lambda key, cast, default: _resolve(args, file_values, key, cast, default)
    cfg = network.NetworkConfig(
        n_classes=n_classes,
        in_channels=in_channels,
        block_channels=r("net.blocks", _int_list, (8, 16, 32)),
        kernel=r("net.kernel", _int_list, (3, 3, 3)),
        feature_dim=r("net.feature_dim", int, 32),
        score_fn=r("net.score_fn", str, "tanh"),
        variant=r("net.variant", str, "stwnn"),
        seed=r("net.seed", int, 0))
    log.info("config net = %s", cfg)
    return cfg


def _cmd_train(args) -> int:
    file_values = _load_config_file(args.config) if args.config else {}
    r = lambda key, cast, default: _resolve(args, file_values, key, cast, default)
    manifest_path = Path(args.manifest)
    train_set, n_classes, in_channels = _load_samples(manifest_path, "train")
    if not train_set:
        raise UsageError("train split has no samples")
    val_set, _, _ = _load_samples(manifest_path, "val")
    if not val_set:
        val_set = train_set
        log.info("no val split found; validating on the train split")

    cfg = training.TrainConfig(
        epochs=r("train.epochs", int, 10),
        batch_size=r("train.batch_size", int, 16),
        mix=r("train.lambda", float, 0.5),
        lr=r("train.lr", float, 0.01),
        momentum=r("train.momentum", float, 0.9),
        seed=r("train.seed", int, 0))
    _echo({"train.epochs": cfg.epochs, "train.batch_size": cfg.batch_size,
           "train.lambda": cfg.mix, "train.lr": cfg.lr,
           "train.momentum": cfg.momentum, "train.seed": cfg.seed})

    model = network.build_model(_net_config(args, file_values, n_classes, in_channels))
    model, history = training.train(model, train_set, val_set, cfg)
    for stats in history:
        print(f"epoch {stats.epoch}\tloss {stats.train_loss:.6f}\tval_oa {stats.val_accuracy:.4f}")

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_weights(out_path, model)
    history_path = out_path.with_suffix(".history.tsv")
    with open(history_path, "w", encoding="utf-8") as f:
        f.write("epoch\ttrain_loss\tval_oa\n")
        for stats in history:
            f.write(f"{stats.epoch}\t{stats.train_loss:.12g}\t{stats.val_accuracy:.12g}\n")
    print(f"wrote weights to {out_path} and history to {history_path}")
    return EXIT_OK


def _load_model(weights_path: Path) -> network.Model:
    cfg = dataio.peek_weights_config(weights_path)
    model = network.build_model(cfg)
    return dataio.load_weights(weights_path, model)


def _write_metrics(metrics: training.Metrics, report_path: Path, table_path: Path):
    n = metrics.confusion.shape[0]
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(f"overall accuracy: {metrics.overall_accuracy:.4f}\n")
        f.write("per-class accuracy:\n")
        for c in range(n):
            f.write(f"  class {c}: {metrics.per_class_accuracy[c]:.4f}\n")
        f.write("confusion matrix (rows = true class):\n")
        for row in metrics.confusion:
            f.write("  " + " ".join(f"{v:6d}" for v in row) + "\n")
    with open(table_path, "w", encoding="utf-8") as f:
        f.write("metric\tclass\tvalue\n")
        f.write(f"oa\t-\t{metrics.overall_accuracy:.12g}\n")
        for c in range(n):
            f.write(f"class_accuracy\t{c}\t{metrics.per_class_accuracy[c]:.12g}\n")
        for t in range(n):
            for p in range(n):
                f.write(f"confusion\t{t},{p}\t{metrics.confusion[t, p]}\n")


def _cmd_eval(args) -> int:
    manifest_path = Path(args.manifest)
    test_set, n_classes, _ = _load_samples(manifest_path, "test")
    model = _load_model(Path(args.weights))
    if model.config.n_classes != n_classes:
        raise CompatibilityError(
            f"weights expect {model.config.n_classes} classes, manifest has {n_classes}")
    metrics = training.evaluate(model, test_set)
    report = Path(args.report) if args.report else Path(args.weights).with_suffix(".report.txt")
    table = Path(args.metrics) if args.metrics else Path(args.weights).with_suffix(".metrics.tsv")
    _write_metrics(metrics, report, table)
    print(f"overall accuracy {metrics.overall_accuracy:.4f}")
    print(f"wrote report to {report} and metrics to {table}")
    return EXIT_OK


def _cmd_shift(args) -> int:
    file_values = _load_config_file(args.config) if args.config else {}
    cfg = _seg_config(args, file_values)
    max_shift = args.max_shift if args.max_shift is not None else 2
    manifest_path = Path(args.manifest)
    manifest = dataio.load_manifest(manifest_path)
    model = _load_model(Path(args.weights))

    rows = []
    for e in manifest.split("test"):
        stream = dataio.load_stream(manifest_path.parent / e.path)
        agreement = training.shift_consistency(model, stream, cfg, max_shift)
        rows.append((e.path, agreement))
    if not rows:
        raise UsageError("manifest has no test entries")
    out = Path(args.out) if args.out else manifest_path.parent / "shift_agreement.tsv"
    with open(out, "w", encoding="utf-8") as f:
        f.write("stream\tagreement\n")
        for path, agreement in rows:
            f.write(f"{path}\t{agreement:.12g}\n")
    mean = sum(a for _, a in rows) / len(rows)
    print(f"mean shift agreement {mean:.4f} over {len(rows)} streams")
    print(f"wrote table to {out}")
    return EXIT_OK


def _add_config_flag(p):
    p.add_argument("--config", help="config file with flat dotted keys")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stwnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic CSI dataset")
    _add_config_flag(p)
    p.add_argument("--out", dest="synth_out")
    p.add_argument("--classes", dest="synth_classes", type=int)
    p.add_argument("--per-class", dest="synth_per_class", type=int)
    p.add_argument("--val-per-class", dest="synth_val_per_class", type=int)
    p.add_argument("--test-per-class", dest="synth_test_per_class", type=int)
    p.add_argument("--duration", dest="synth_duration", type=float)
    p.add_argument("--rate", dest="synth_rate", type=float)
    p.add_argument("--tx", dest="synth_tx", type=int)
    p.add_argument("--rx", dest="synth_rx", type=int)
    p.add_argument("--subcarriers", dest="synth_subcarriers", type=int)
    p.add_argument("--noise-std", dest="synth_noise_std", type=float)
    p.add_argument("--seed", dest="synth_seed", type=int)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("segment", help="cut streams into multi-scale volumes")
    _add_config_flag(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", dest="segment_out")
    p.add_argument("--window", dest="segment_window", type=int)
    p.add_argument("--overlap", dest="segment_overlap", type=int)
    p.add_argument("--scales", dest="segment_scales", type=_int_list)
    p.add_argument("--target", dest="segment_target", type=_int_list)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("train", help="train a model on segmented volumes")
    _add_config_flag(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="weight archive path")
    p.add_argument("--epochs", dest="train_epochs", type=int)
    p.add_argument("--batch-size", dest="train_batch_size", type=int)
    p.add_argument("--lambda", dest="train_lambda", type=float)
    p.add_argument("--lr", dest="train_lr", type=float)
    p.add_argument("--momentum", dest="train_momentum", type=float)
    p.add_argument("--seed", dest="train_seed", type=int)
    p.add_argument("--blocks", dest="net_blocks", type=_int_list)
    p.add_argument("--kernel", dest="net_kernel", type=_int_list)
    p.add_argument("--feature-dim", dest="net_feature_dim", type=int)
    p.add_argument("--score-fn", dest="net_score_fn")
    p.add_argument("--variant", dest="net_variant")
    p.add_argument("--net-seed", dest="net_seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate weights on a test split")
    _add_config_flag(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--report")
    p.add_argument("--metrics")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("shift", help="prediction agreement under window shifts")
    _add_config_flag(p)
    p.add_argument("--manifest", required=True, help="streams manifest")
    p.add_argument("--weights", required=True)
    p.add_argument("--max-shift", dest="max_shift", type=int)
    p.add_argument("--out")
    p.add_argument("--window", dest="segment_window", type=int)
    p.add_argument("--overlap", dest="segment_overlap", type=int)
    p.add_argument("--scales", dest="segment_scales", type=_int_list)
    p.add_argument("--target", dest="segment_target", type=_int_list)
    p.set_defaults(func=_cmd_shift)

    return parser


def _setup_logging():
    level_name = os.environ.get("STWNN_LOG", "info").lower()
    level = {"debug": logging.DEBUG, "info": logging.INFO,
             "warning": logging.WARNING, "quiet": logging.ERROR}.get(level_name, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (FormatError, CorruptionError, StwnnError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
