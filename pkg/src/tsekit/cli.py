"""Command-line entry point.

Subcommands: simulate | train | adapt | extract | retrain-weak | evaluate.
Config files are TOML; every value can be overridden with repeatable
``--set section.key=value`` flags (flags win). The TSEKIT_OUT_ROOT
environment variable reroots relative output paths.

Exit codes: 0 success, 2 configuration, 3 manifest, 4 vocabulary,
5 audio format, 6 divergence, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import adaptation, train
from .audio_io import read_wav, write_wav
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import train_classifier
from .config import (
    CLUE_MODES,
    RunConfig,
    load_run_config,
    load_simulate_config,
    replace_config,
)
from .data import TaggingDataset, dataset_paths
from .errors import (
    AudioFormatError,
    ConfigError,
    DivergenceError,
    ManifestError,
    TsekitError,
    VocabularyError,
)
from .evaluate import run_eval
from .simulate import materialize_dataset
from .types import Vocabulary, load_manifest, substream_rng

logger = logging.getLogger("tsekit")

OUT_ROOT_ENV = "TSEKIT_OUT_ROOT"

EXIT_CODES = (
    (ConfigError, 2),
    (ManifestError, 3),
    (VocabularyError, 4),
    (AudioFormatError, 5),
    (DivergenceError, 6),
)


def _out_path(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_vocab(data_dir: Path) -> Vocabulary:
    paths = dataset_paths(data_dir)
    return Vocabulary.load(paths["vocab"])


def _manifests(data_dir: Path, names: list[str], num_classes: int):
    paths = dataset_paths(data_dir)
    out = []
    for name in names:
        if name not in paths:
            raise ConfigError(f"dataset under {data_dir} has no {name}.jsonl")
        out.append(load_manifest(paths[name], num_classes=num_classes))
    return out


def cmd_simulate(args) -> int:
    cfg = load_simulate_config(args.config, _overrides(args.set))
    out_dir = _out_path(args.out)
    manifests = materialize_dataset(cfg, out_dir)
    for split, path in manifests.items():
        print(f"{split}: {path}")
    return 0


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    vocabulary = _load_vocab(data_dir)
    overrides = _overrides(args.set)
    for flag, dotted in (
        ("clue_mode", "model.clue_mode"), ("seed", "train.seed"), ("epochs", "train.max_epochs"),
        ("lr", "train.learning_rate"), ("batch_size", "train.batch_size"),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides[dotted] = str(value)
    cfg = load_run_config(
        args.config, overrides, defaults={"model": {"num_classes": len(vocabulary)}}
    )
    if cfg.model.num_classes != len(vocabulary):
        raise ConfigError(
            f"config says {cfg.model.num_classes} classes but {data_dir}/vocab.txt has {len(vocabulary)}"
        )
    train_manifest, valid_manifest = _manifests(data_dir, [args.train_split, args.valid_split],
                                                len(vocabulary))
    out = _out_path(args.out)
    if args.arch == "tse":
        resume = load_checkpoint(args.resume) if args.resume else None
        train.train_extractor(cfg, train_manifest, valid_manifest, vocabulary, out, resume=resume)
    elif args.arch == "uss":
        train.train_separator(cfg, train_manifest, valid_manifest, vocabulary, out,
                              output_count=args.outputs)
    else:  # sec
        train_set = TaggingDataset(train_manifest, vocabulary)
        valid_set = TaggingDataset(valid_manifest, vocabulary)
        model, best = train_classifier(
            train_set.examples, valid_set.examples, len(vocabulary),
            epochs=cfg.train.max_epochs, batch_size=cfg.train.batch_size,
            learning_rate=cfg.train.learning_rate, seed=cfg.train.seed,
        )
        save_checkpoint(out, "sec", cfg, vocabulary, model, cfg.train.max_epochs, best)
    print(f"checkpoint: {out}")
    return 0


def _parse_new_class(spec: str) -> tuple[str, list[Path]]:
    if "=" not in spec:
        raise ConfigError(f"--new-class expects name=enroll1.wav,enroll2.wav, got {spec!r}")
    name, paths = spec.split("=", 1)
    files = [Path(p.strip()) for p in paths.split(",") if p.strip()]
    if not files:
        raise ConfigError(f"--new-class {name!r} lists no enrollment files")
    return name.strip(), files


def cmd_adapt(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    if bundle.kind != "tse":
        raise ConfigError("adaptation needs an extraction checkpoint")
    model = bundle.build()
    if model.enroll_encoder is None:
        raise ConfigError("base model has no enrollment encoder; cannot embed enrollments")
    overrides = _overrides(args.set)
    cfg = bundle.config
    if overrides:
        adapt_updates = {k.split(".", 1)[1]: v for k, v in overrides.items() if k.startswith("adapt.")}
        if adapt_updates:
            coerced = {k: type(getattr(cfg.adapt, k))(v) for k, v in adapt_updates.items()}
            cfg = RunConfig(model=cfg.model, loss=cfg.loss, train=cfg.train,
                            adapt=replace_config(cfg.adapt, **coerced),
                            data_dir=cfg.data_dir, out_dir=cfg.out_dir)
    if args.seed is not None:
        cfg = RunConfig(model=cfg.model, loss=cfg.loss, train=cfg.train,
                        adapt=replace_config(cfg.adapt, seed=args.seed),
                        data_dir=cfg.data_dir, out_dir=cfg.out_dir)

    specs = [_parse_new_class(s) for s in args.new_class]
    enroll_audio = {name: [read_wav(p) for p in paths] for name, paths in specs}

    vocabulary = bundle.vocabulary
    num_frozen = len(vocabulary)
    averaged = {
        name: adaptation.average_embedding(audios, model.enroll_encoder)
        for name, audios in enroll_audio.items()
    }
    new_names = [name for name, _ in specs]
    vocabulary = adaptation.extend_model(model, vocabulary, new_names,
                                         [averaged[n] for n in new_names])

    data_dir = Path(args.data)
    seen_manifest, = _manifests(data_dir, [args.train_split], num_frozen)
    enrollments = {vocabulary.id_of(name): audios for name, audios in enroll_audio.items()}
    out = _out_path(args.out)
    work_dir = Path(args.work_dir) if args.work_dir else out.parent / (out.stem + ".adaptdata")
    rng = substream_rng(cfg.adapt.seed, 0xADA)
    train_manifest = adaptation.generate_adaptation_set(
        enrollments, seen_manifest, rng, args.size, work_dir, vocabulary, split="adapt")
    valid_manifest = adaptation.generate_adaptation_set(
        enrollments, seen_manifest, rng, args.valid_size, work_dir, vocabulary, split="adapt_valid")

    history = adaptation.finetune_new_embeddings(
        model, vocabulary, train_manifest, valid_manifest, num_frozen,
        adapt_cfg=cfg.adapt, loss_cfg=cfg.loss,
    )
    cfg = RunConfig(model=model.config, loss=cfg.loss, train=cfg.train, adapt=cfg.adapt,
                    data_dir=cfg.data_dir, out_dir=cfg.out_dir)
    save_checkpoint(
        out, "tse", cfg, vocabulary, model, bundle.epoch, history["final_valid"],
        extra={
            "num_frozen": num_frozen,
            "averaged_columns": torch.stack([averaged[n] for n in new_names], dim=1),
            "adapted_from": str(args.checkpoint),
        },
    )
    print(f"checkpoint: {out} (valid {history['initial_valid']:.4f} -> {history['final_valid']:.4f})")
    return 0


def cmd_extract(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    if bundle.kind != "tse":
        raise ConfigError("extraction needs an extraction checkpoint")
    model = bundle.build()
    mixture = read_wav(args.input)
    if bool(args.labels) == bool(args.enroll):
        raise ConfigError("give exactly one of --labels or --enroll")
    if args.labels:
        if model.label_encoder is None:
            raise ConfigError("model has no class-label encoder")
        ids = [bundle.vocabulary.id_of(name.strip()) for name in args.labels.split(",") if name.strip()]
        embedding = model.label_encoder.embedding(ids)
    else:
        if model.enroll_encoder is None:
            raise ConfigError("model has no enrollment encoder")
        audios = [read_wav(p.strip()) for p in args.enroll.split(",") if p.strip()]
        from .clues import multi_enroll_embedding

        embedding = multi_enroll_embedding(audios, model.enroll_encoder)
    estimate = model.extract(mixture, embedding)
    out = _out_path(args.output)
    write_wav(out, estimate)
    print(f"extracted: {out}")
    return 0


def cmd_retrain_weak(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    clf_bundle = load_checkpoint(args.classifier)
    if clf_bundle.kind != "sec":
        raise ConfigError("--classifier must point at a classifier checkpoint")
    if clf_bundle.vocabulary != bundle.vocabulary:
        raise VocabularyError("classifier and extractor vocabularies differ")
    classifier = clf_bundle.build()
    weak_train = load_manifest(args.manifest, num_classes=len(bundle.vocabulary), check_paths=True)
    weak_valid = load_manifest(args.valid_manifest, num_classes=len(bundle.vocabulary), check_paths=True)
    out = _out_path(args.out)
    train.retrain_weak(bundle, weak_train, weak_valid, classifier, out,
                       epochs=args.epochs, learning_rate=args.lr)
    print(f"checkpoint: {out}")
    return 0


def cmd_evaluate(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    if bundle.kind != "tse":
        raise ConfigError("evaluation needs an extraction checkpoint")
    model = bundle.build()
    manifest = load_manifest(args.manifest, num_classes=len(bundle.vocabulary))
    classifier = None
    if args.classifier:
        clf_bundle = load_checkpoint(args.classifier)
        if clf_bundle.kind != "sec":
            raise ConfigError("--classifier must point at a classifier checkpoint")
        classifier = clf_bundle.build()
    report = run_eval(
        manifest, model, args.clue_mode,
        vocabulary=bundle.vocabulary, seed=args.seed,
        probe_inactive=not args.no_probe, classifier=classifier,
        meta={"checkpoint": str(args.checkpoint), "config": bundle.config.to_json()},
        report_prefix=_out_path(args.report), write_csv=args.csv,
    )
    for key in ("mean_sdri_db", "mean_atten_mix_inactive_db", "inactive_auc", "map"):
        if key in report.summary:
            print(f"{key}: {report.summary[key]:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsekit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--quiet", action="store_true", help="suppress progress logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="materialize a simulated dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train an extractor, baseline separator, or classifier")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset directory from `tsekit simulate`")
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=("tse", "uss", "sec"), default="tse")
    p.add_argument("--outputs", type=int, default=3, help="separator output count (uss)")
    p.add_argument("--resume", help="checkpoint to continue from (tse)")
    p.add_argument("--train-split", default="train")
    p.add_argument("--valid-split", default="valid")
    p.add_argument("--clue-mode", dest="clue_mode", choices=CLUE_MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="add new classes from a few enrollments")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="seen-class dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--new-class", action="append", required=True,
                   metavar="NAME=ENROLL1.wav,ENROLL2.wav")
    p.add_argument("--size", type=int, default=96, help="adaptation mixtures to simulate")
    p.add_argument("--valid-size", type=int, default=24)
    p.add_argument("--train-split", default="train")
    p.add_argument("--work-dir", help="where adaptation mixtures are written")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("extract", help="extract target audio from a mixture file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--labels", help="comma-separated class names")
    p.add_argument("--enroll", help="comma-separated enrollment wav paths")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("retrain-weak", help="weakly supervised retraining (labels only)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--manifest", required=True, help="weak training manifest")
    p.add_argument("--valid-manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-4)
    p.set_defaults(func=cmd_retrain_weak)

    p = sub.add_parser("evaluate", help="score a checkpoint over a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--clue-mode", dest="clue_mode", choices=("class", "enroll"), default="class")
    p.add_argument("--report", required=True, help="report path prefix")
    p.add_argument("--classifier", help="classifier checkpoint for mAP")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--no-probe", action="store_true",
                   help="skip the per-mixture inactive-class probe")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s"
    )
    try:
        return args.func(args)
    except TsekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for etype, code in EXIT_CODES:
            if isinstance(exc, etype):
                return code
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
