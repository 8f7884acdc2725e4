"""Command-line frontend: train / pipeline / extract / svm / eval /
gradcheck / synth.

Configuration comes from an optional INI-style config file (flat key=value
under [network], [train], [data] sections) with command-line flags taking
precedence.  Exit codes: 0 success, 1 runtime numerical failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from pathlib import Path

import numpy as np

from . import classify, data, gradcheck, network, optim
from .errors import (
    ConfigError,
    HandSpdError,
    InvalidInput,
    ParseError,
    RankError,
    SpectralDomainError,
)
from .network import NetworkConfig
from .optim import TrainConfig

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2


def _load_config_file(path):
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"--config file {path} not found")
    merged = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            merged[f"{section}.{key}"] = value
    return merged


def _cfg_get(filecfg, key, flag_value, default, cast):
    if flag_value is not None:
        return flag_value
    if key in filecfg:
        return cast(filecfg[key])
    return default


def build_network_config(args, filecfg) -> NetworkConfig:
    mode = _cfg_get(filecfg, "network.classes", getattr(args, "classes", None), 14, int)
    return NetworkConfig(
        d1=_cfg_get(filecfg, "network.d1", getattr(args, "d1", None), 9, int),
        n_T=_cfg_get(filecfg, "network.levels", getattr(args, "levels", None), 3, int),
        n_F=_cfg_get(filecfg, "network.length", getattr(args, "length", None), 171, int),
        eps=_cfg_get(filecfg, "network.eps", getattr(args, "eps", None), 1e-4, float),
        lambda_reg=_cfg_get(filecfg, "network.lambda_reg", getattr(args, "lambda_reg", None), 1e-4, float),
        n_classes=mode,
    )


def build_train_config(args, filecfg) -> TrainConfig:
    return TrainConfig(
        batch_size=_cfg_get(filecfg, "train.batch_size", getattr(args, "batch_size", None), 30, int),
        learning_rate=_cfg_get(filecfg, "train.learning_rate", getattr(args, "lr", None), 0.01, float),
        epochs=_cfg_get(filecfg, "train.epochs", getattr(args, "epochs", None), 20, int),
        seed=_cfg_get(filecfg, "train.seed", getattr(args, "seed", None), 0, int),
    )


def _load_sequences(args, cfg: NetworkConfig, split: str):
    """Resolve the dataset source flags; returns (train_list, test_list)."""
    n_sources = sum(bool(x) for x in (args.synthetic, args.data, args.cache))
    if n_sources != 1:
        raise ConfigError("exactly one of --synthetic, --data, --cache is required")
    if args.synthetic:
        full = data.synth_generate(
            n_per_class=args.per_class + args.test_per_class,
            n_classes=cfg.n_classes,
            noise_sigma=args.noise,
            seed=args.data_seed,
            length=cfg.n_F,
        )
        train, test = [], []
        for seq in full:
            (train if seq.trial < args.per_class else test).append(seq)
        return train, test
    if args.cache:
        sequences = data.load_cache(args.cache)
        sequences = [data.resample(s, cfg.n_F, args.resample_method) for s in sequences]
        return sequences, sequences
    sequences = data.load_dhg(args.data)
    sequences = [data.resample(s, cfg.n_F, args.resample_method) for s in sequences]
    split_obj = data.dhg_split(sequences, args.data)
    return split_obj.train, split_obj.test


def _add_data_flags(sub, with_synth_sizes=True):
    sub.add_argument("--data", help="DHG/SHREC'17 dataset root directory")
    sub.add_argument("--cache", help="internal dataset cache (.npz)")
    sub.add_argument("--synthetic", action="store_true", help="generate synthetic gestures")
    sub.add_argument("--resample-method", default=data.INTERPOLATE,
                     choices=[data.INTERPOLATE, data.PAD_LAST])
    sub.add_argument("--noise", type=float, default=0.01, help="synthetic noise sigma")
    sub.add_argument("--data-seed", type=int, default=0, help="synthetic data seed")
    if with_synth_sizes:
        sub.add_argument("--per-class", type=int, default=50, help="synthetic train sequences per class")
        sub.add_argument("--test-per-class", type=int, default=25, help="synthetic test sequences per class")


def _add_net_flags(sub):
    sub.add_argument("--classes", type=int, help="number of classes (14 or 28 for DHG)")
    sub.add_argument("--d1", type=int, help="conv output channels")
    sub.add_argument("--levels", type=int, help="temporal pyramid levels")
    sub.add_argument("--length", type=int, help="normalized sequence length")
    sub.add_argument("--eps", type=float, help="eigenvalue rectification threshold")
    sub.add_argument("--lambda-reg", type=float, help="temporal covariance ridge")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handspd",
        description="SPD-matrix network for skeletal hand-gesture recognition",
    )
    parser.add_argument("--config", help="INI config file; flags override")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap worker threads (0 = machine default)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the network, write checkpoints + metrics")
    _add_data_flags(p)
    _add_net_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("pipeline", help="extract features, train SVM, evaluate")
    _add_data_flags(p)
    _add_net_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--svm-tol", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", action="store_true",
                   help="z-score features before the SVM (off by default)")

    p = sub.add_parser("extract", help="extract feature vectors with a checkpoint")
    _add_data_flags(p)
    _add_net_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output .npz with features + labels")
    p.add_argument("--split", default="test", choices=["train", "test"])

    p = sub.add_parser("svm", help="train the linear SVM on extracted features")
    p.add_argument("--features", required=True, help=".npz from the extract command")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--svm-c", type=float, default=1.0)
    p.add_argument("--svm-tol", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate an SVM model on extracted features")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--report-dir", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--layer", action="append", help="restrict to one layer (repeatable)")
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("synth", help="generate a synthetic dataset cache")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=171)
    p.add_argument("--out", required=True)
    return parser


def _require_path(value, flag):
    if value and not Path(value).exists():
        raise ConfigError(f"path given to {flag} does not exist: {value}")


def _extract_split(sequences, params, cfg):
    graph = cfg.graph()
    features = np.stack([network.extract_feature(s, params, cfg, graph) for s in sequences])
    labels = np.array([s.label(cfg.n_classes) for s in sequences], dtype=np.int64)
    return features, labels


def cmd_train(args, filecfg) -> int:
    _require_path(args.data, "--data")
    _require_path(args.cache, "--cache")
    cfg = build_network_config(args, filecfg)
    tcfg = build_train_config(args, filecfg)
    train_set, _ = _load_sequences(args, cfg, "train")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    optim.train(
        train_set,
        cfg,
        tcfg,
        checkpoint_dir=out_dir,
        metrics_path=out_dir / "metrics.csv",
        log=print,
    )
    print(f"checkpoints and metrics written to {out_dir}")
    return EXIT_OK


def cmd_pipeline(args, filecfg) -> int:
    _require_path(args.data, "--data")
    _require_path(args.cache, "--cache")
    _require_path(args.checkpoint, "--checkpoint")
    params, ckpt_cfg = network.load_checkpoint(args.checkpoint)
    cfg = build_network_config(args, filecfg)
    if ckpt_cfg.n_classes != cfg.n_classes and getattr(args, "classes", None) is not None:
        raise ConfigError(
            f"checkpoint was trained with {ckpt_cfg.n_classes} classes, requested {cfg.n_classes}"
        )
    cfg = ckpt_cfg
    train_set, test_set = _load_sequences(args, cfg, "both")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_x, train_y = _extract_split(train_set, params, cfg)
    test_x, test_y = _extract_split(test_set, params, cfg)
    if args.standardize:
        mean, std = train_x.mean(axis=0), np.maximum(train_x.std(axis=0), 1e-12)
        train_x = (train_x - mean) / std
        test_x = (test_x - mean) / std
    np.savez(out_dir / "features.npz", train_features=train_x, train_labels=train_y,
             test_features=test_x, test_labels=test_y)

    model = classify.svm_train(train_x, train_y, C=args.svm_c, tol=args.svm_tol,
                               seed=args.seed, n_classes=cfg.n_classes)
    classify.save_model(out_dir / "svm_model.bin", model)
    report = classify.evaluate(model, test_x, test_y)
    names = classify.class_names(cfg.n_classes)
    classify.confusion_csv(out_dir / "confusion.csv", report, names)
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["accuracy_percent"])
        writer.writerow([f"{report.accuracy:.4f}"])
    print(classify.report_table(report, names))
    print(f"accuracy: {report.accuracy:.2f}%")
    return EXIT_OK


def cmd_extract(args, filecfg) -> int:
    _require_path(args.data, "--data")
    _require_path(args.cache, "--cache")
    _require_path(args.checkpoint, "--checkpoint")
    params, cfg = network.load_checkpoint(args.checkpoint)
    train_set, test_set = _load_sequences(args, cfg, args.split)
    chosen = train_set if args.split == "train" else test_set
    features, labels = _extract_split(chosen, params, cfg)
    np.savez(args.out, features=features, labels=labels, n_classes=np.array([cfg.n_classes]))
    print(f"wrote {features.shape[0]} features of dim {features.shape[1]} to {args.out}")
    return EXIT_OK


def cmd_svm(args, filecfg) -> int:
    _require_path(args.features, "--features")
    with np.load(args.features) as blob:
        features, labels = blob["features"], blob["labels"]
        n_classes = int(blob["n_classes"][0]) if "n_classes" in blob else None
    model = classify.svm_train(features, labels, C=args.svm_c, tol=args.svm_tol,
                               seed=args.seed, n_classes=n_classes)
    classify.save_model(args.out, model)
    print(f"SVM model written to {args.out}")
    return EXIT_OK


def cmd_eval(args, filecfg) -> int:
    _require_path(args.model, "--model")
    _require_path(args.features, "--features")
    model = classify.load_model(args.model)
    with np.load(args.features) as blob:
        features, labels = blob["features"], blob["labels"]
    report = classify.evaluate(model, features, labels)
    names = classify.class_names(model.n_classes)
    out_dir = Path(args.report_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    classify.confusion_csv(out_dir / "confusion.csv", report, names)
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["accuracy_percent"])
        writer.writerow([f"{report.accuracy:.4f}"])
    print(classify.report_table(report, names))
    return EXIT_OK


def cmd_gradcheck(args, filecfg) -> int:
    results = gradcheck.run(seed=args.seed, n_instances=args.instances,
                            layers=args.layer, corrupt=args.corrupt)
    print(gradcheck.format_table(results))
    return EXIT_OK if all(e < gradcheck.THRESHOLD for e in results.values()) else EXIT_NUMERICAL


def cmd_synth(args, filecfg) -> int:
    sequences = data.synth_generate(args.per_class, args.classes, args.noise,
                                    args.seed, args.length)
    data.save_cache(args.out, sequences)
    print(f"wrote {len(sequences)} synthetic sequences to {args.out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "pipeline": cmd_pipeline,
    "extract": cmd_extract,
    "svm": cmd_svm,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        filecfg = _load_config_file(args.config)
        return COMMANDS[args.command](args, filecfg)
    except (ConfigError, ParseError, InvalidInput, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpectralDomainError, RankError, HandSpdError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
