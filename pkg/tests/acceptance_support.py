"""Shared recipes and a disk cache for the acceptance suite.

Trained checkpoints and materialized datasets are expensive, so they are
cached under ``~/.cache/tsekit-tests`` (override with TSEKIT_TEST_CACHE),
keyed by a hash of the full recipe. Deleting the cache directory forces
every artifact to be rebuilt from scratch; nothing here depends on cache
state for correctness. Wall-clock training time is recorded at build time
next to each checkpoint so runtime bounds survive cache hits.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time
from dataclasses import asdict
from pathlib import Path

from tsekit import cli, train
from tsekit.adaptation import (
    average_embedding,
    extend_model,
    finetune_new_embeddings,
    generate_adaptation_set,
)
from tsekit.checkpoint import ModelBundle, load_checkpoint, save_checkpoint
from tsekit.classifier import train_classifier
from tsekit.config import (
    AdaptConfig,
    RunConfig,
    SimulateConfig,
    TrainConfig,
    toy_model_config,
)
from tsekit.data import TaggingDataset, dataset_paths
from tsekit.evaluate import run_eval
from tsekit.simulate import ToyClassBank, default_class_names, materialize_dataset
from tsekit.types import Vocabulary, load_manifest, substream_rng

CACHE_ROOT = Path(os.environ.get(
    "TSEKIT_TEST_CACHE", str(Path.home() / ".cache" / "tsekit-tests")))

# One line per acceptance criterion; conftest prints these after the run.
SCORECARD: list[str] = []

# 12 band-disjoint classes: 8 "seen" for base training, the rest held out
# as unseen classes for few-shot adaptation.
NAMES12 = tuple(default_class_names(12))
SEEN_IDS = (0, 1, 3, 4, 6, 7, 9, 10)
SEEN8 = tuple(NAMES12[i] for i in SEEN_IDS)
NEW_NAMES = (NAMES12[2], NAMES12[5])

TOY_SPLITS = {"train": 200, "valid": 50, "test": 50}
TOY_DURATION_S = 1.0
TOY_EVENT_DURATION_S = (0.3, 0.7)
POOL_SIZE = 10
BANK_SEED = 7


def seen_sim(inactive: float = 0.1, seed: int = 0, **overrides) -> SimulateConfig:
    """The 8-class toy scene recipe; M=3 events per 1 s mixture."""
    base = dict(
        classes=SEEN8,
        splits=TOY_SPLITS,
        duration_s=TOY_DURATION_S,
        events_min=3,
        events_max=3,
        inactive_fraction=inactive,
        event_duration_s=TOY_EVENT_DURATION_S,
        pool_size=POOL_SIZE,
        seed=seed,
        bank_seed=BANK_SEED,
    )
    base.update(overrides)
    return SimulateConfig(**base)


def toy_run_config(num_classes: int, clue_mode: str, epochs: int = 30,
                   learning_rate: float = 1e-3, seed: int = 0) -> RunConfig:
    return RunConfig(
        model=toy_model_config(num_classes, clue_mode),
        train=TrainConfig(learning_rate=learning_rate, batch_size=8,
                          max_epochs=epochs, seed=seed),
    )


def _key(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha1(blob.encode()).hexdigest()[:16]


def _meta_path(checkpoint: Path) -> Path:
    return checkpoint.with_suffix(".json")


def _write_meta(checkpoint: Path, meta: dict) -> None:
    _meta_path(checkpoint).write_text(json.dumps(meta, indent=2, sort_keys=True))


def dataset(config: SimulateConfig) -> dict:
    """Materialize (or reuse) a dataset; returns paths, vocabulary, manifests."""
    key = _key({"dataset": asdict(config)})
    root = CACHE_ROOT / "data" / key
    marker = root / ".complete"
    if not marker.exists():
        shutil.rmtree(root, ignore_errors=True)
        materialize_dataset(config, root)
        marker.write_text("ok\n")
    paths = dataset_paths(root)
    vocabulary = Vocabulary.load(paths["vocab"])
    manifests = {
        split: load_manifest(paths[split], num_classes=len(vocabulary))
        for split in config.splits
    }
    return {"key": key, "root": root, "paths": paths,
            "vocabulary": vocabulary, "manifests": manifests, "config": config}


def _cached(kind: str, key: str, builder) -> tuple[ModelBundle, dict, Path]:
    """Load checkpoint+meta for key, calling builder(path) on a cache miss."""
    path = CACHE_ROOT / "models" / f"{kind}-{key}.pt"
    if not (path.exists() and _meta_path(path).exists()):
        path.parent.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        extra_meta = builder(path) or {}
        extra_meta.setdefault("wall_s", time.perf_counter() - started)
        _write_meta(path, extra_meta)
    bundle = load_checkpoint(path)
    meta = json.loads(_meta_path(path).read_text())
    return bundle, meta, path


def extractor(run_cfg: RunConfig, data: dict) -> tuple[ModelBundle, dict, Path]:
    key = _key({"extractor": run_cfg.to_json(), "data": data["key"]})

    def build(path: Path):
        train.train_extractor(run_cfg, data["manifests"]["train"],
                              data["manifests"]["valid"], data["vocabulary"], path)

    return _cached("tse", key, build)


def sec_classifier(data: dict, epochs: int = 15, learning_rate: float = 1e-3,
                   seed: int = 0) -> tuple[ModelBundle, dict, Path]:
    key = _key({"sec": {"epochs": epochs, "lr": learning_rate, "seed": seed},
                "data": data["key"]})

    def build(path: Path):
        train_set = TaggingDataset(data["manifests"]["train"], data["vocabulary"])
        valid_set = TaggingDataset(data["manifests"]["valid"], data["vocabulary"])
        model, best = train_classifier(
            train_set.examples, valid_set.examples, len(data["vocabulary"]),
            epochs=epochs, learning_rate=learning_rate, seed=seed)
        cfg = toy_run_config(len(data["vocabulary"]), "class", epochs=epochs,
                             learning_rate=learning_rate, seed=seed)
        save_checkpoint(path, "sec", cfg, data["vocabulary"], model, epochs, best)

    return _cached("sec", key, build)


def weak_retrained(base_path: Path, base_key: str, data: dict, epochs: int,
                   learning_rate: float) -> tuple[ModelBundle, dict, Path]:
    """Weak retraining through the command-line entry point.

    The subcommand seeds its own RNG from the checkpoint config, so the
    result is a pure function of the arguments below.
    """
    key = _key({"weak": {"epochs": epochs, "lr": learning_rate},
                "base": base_key, "data": data["key"]})

    def build(path: Path):
        _, _, clf_path = sec_classifier(data)
        rc = cli.main([
            "retrain-weak",
            "--checkpoint", str(base_path),
            "--classifier", str(clf_path),
            "--manifest", str(data["paths"]["train"]),
            "--valid-manifest", str(data["paths"]["valid"]),
            "--out", str(path),
            "--epochs", str(epochs),
            "--lr", str(learning_rate),
        ])
        if rc != 0:
            raise RuntimeError(f"retrain-weak exited with {rc}")

    return _cached("weak", key, build)


def new_class_bank() -> ToyClassBank:
    """Pools for the held-out classes; same bank parameters the datasets use."""
    return ToyClassBank(NAMES12, pool_size=POOL_SIZE,
                        duration_range=TOY_EVENT_DURATION_S, seed=BANK_SEED)


def new_class_enrollments(k: int = 5) -> dict[str, list]:
    """K isolated clips per held-out class, pool variants 0..k-1.

    Adaptation evaluation scenes restrict their sources to pool_range
    [k, POOL_SIZE), so enrollments never appear inside evaluated mixtures.
    """
    bank = new_class_bank()
    return {name: [bank.source(NAMES12.index(name), v) for v in range(k)]
            for name in NEW_NAMES}


def adapt_eval_data(new_name: str, seed: int, k: int = 5, size: int = 25) -> dict:
    config = seen_sim(
        inactive=0.0, seed=seed,
        classes=SEEN8 + NEW_NAMES,
        splits={"test": size},
        target_class=new_name,
        pool_range=(k, POOL_SIZE),
    )
    return dataset(config)


def mean_active_sdri(report) -> float:
    rows = [r["sdri_db"] for r in report.rows if r["active"]]
    return sum(rows) / len(rows)


def adaptation_artifacts(base_path: Path, base_key: str, seen_data: dict,
                         k: int = 5, size: int = 96, valid_size: int = 24,
                         adapt_seed: int = 0) -> tuple[ModelBundle, dict, Path]:
    """Extend a mixed-clue base with averaged embeddings for the held-out
    classes, fine-tune the new columns, and record SDRi before/after.

    The meta dict carries per-class mean SDRi with averaged embeddings
    (pre-fine-tune) and after fine-tuning, plus the fine-tune history.
    """
    adapt_cfg = AdaptConfig(seed=adapt_seed)
    recipe = {"adapt": asdict(adapt_cfg), "k": k, "size": size,
              "valid_size": valid_size, "base": base_key, "data": seen_data["key"]}
    key = _key(recipe)

    def build(path: Path):
        base = load_checkpoint(base_path)
        model = base.build()
        enroll_audio = new_class_enrollments(k)
        averaged = [average_embedding(enroll_audio[name], model.enroll_encoder)
                    for name in NEW_NAMES]
        vocabulary = extend_model(model, base.vocabulary, list(NEW_NAMES), averaged)

        eval_sets = [adapt_eval_data(name, seed=101 + i, k=k)
                     for i, name in enumerate(NEW_NAMES)]
        averaged_sdri = {}
        for name, eval_data in zip(NEW_NAMES, eval_sets):
            report = run_eval(eval_data["manifests"]["test"], model, "class",
                              vocabulary=vocabulary, probe_inactive=False)
            averaged_sdri[name] = mean_active_sdri(report)

        enrollments = {vocabulary.id_of(name): clips
                       for name, clips in enroll_audio.items()}
        work_dir = path.parent / (path.stem + ".adaptdata")
        shutil.rmtree(work_dir, ignore_errors=True)
        rng = substream_rng(adapt_seed, 0xADA)
        train_manifest = generate_adaptation_set(
            enrollments, seen_data["manifests"]["train"], rng, size, work_dir,
            vocabulary, split="adapt")
        valid_manifest = generate_adaptation_set(
            enrollments, seen_data["manifests"]["train"], rng, valid_size, work_dir,
            vocabulary, split="adapt_valid")
        history = finetune_new_embeddings(
            model, vocabulary, train_manifest, valid_manifest,
            num_frozen=len(base.vocabulary), adapt_cfg=adapt_cfg)

        finetuned_sdri = {}
        for name, eval_data in zip(NEW_NAMES, eval_sets):
            report = run_eval(eval_data["manifests"]["test"], model, "class",
                              vocabulary=vocabulary, probe_inactive=False)
            finetuned_sdri[name] = mean_active_sdri(report)

        cfg = RunConfig(model=model.config, loss=base.config.loss,
                        train=base.config.train, adapt=adapt_cfg)
        save_checkpoint(path, "tse", cfg, vocabulary, model, base.epoch,
                        history["final_valid"],
                        extra={"num_frozen": len(base.vocabulary)})
        return {"averaged_sdri": averaged_sdri, "finetuned_sdri": finetuned_sdri,
                "history": history}

    return _cached("adapted", key, build)
