"""Few-shot adaptation to new classes.

A new class gets an embedding column initialized to the average of its K
enrollment embeddings; the matrix is extended and only the new columns are
fine-tuned on a small simulated set that mixes enrollments with seen-class
material. Everything else stays frozen, so outputs for seen-class clues are
bit-identical before and after adaptation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .audio_io import quantize_to_grid, read_wav, write_wav
from .clues import EnrollmentEncoder, LabelEncoder, enroll_embedding
from .config import AdaptConfig, LossConfig
from .data import ExtractionDataset, epoch_batches
from .errors import ConfigError, DivergenceError, VocabularyError
from .extractor import TargetSoundModel
from .losses import combined_loss
from .simulate import PEAK_HEADROOM, _lowpass_noise
from .types import Manifest, ManifestRecord, TargetSpec, Vocabulary, Waveform, write_manifest

logger = logging.getLogger(__name__)


def average_embedding(enrollments: Sequence[Waveform], encoder: EnrollmentEncoder) -> torch.Tensor:
    """Mean of the per-enrollment embeddings, e = (1/K) Σ_k g(a_k)."""
    if not len(enrollments):
        raise ValueError("need at least one enrollment")
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            stacked = torch.stack([enroll_embedding(a, encoder) for a in enrollments])
    finally:
        encoder.train(was_training)
    return stacked.mean(dim=0)


def extend_matrix(encoder: LabelEncoder, new_embedding: torch.Tensor) -> None:
    """Append one column: W' = [W, e]. Existing columns keep their bits."""
    e = new_embedding.detach().to(encoder.matrix.dtype).reshape(-1, 1)
    if e.shape[0] != encoder.matrix.shape[0]:
        raise ValueError(f"embedding dimension {e.shape[0]} does not match matrix {encoder.matrix.shape[0]}")
    encoder.matrix = torch.nn.Parameter(torch.cat([encoder.matrix.data, e], dim=1))


def extend_model(
    model: TargetSoundModel,
    vocabulary: Vocabulary,
    new_names: Sequence[str],
    new_embeddings: Sequence[torch.Tensor],
) -> Vocabulary:
    """Grow the vocabulary and embedding matrix together; returns the new
    vocabulary. The model's config echo tracks the new class count."""
    if model.label_encoder is None:
        raise ConfigError("cannot extend a model without a class-label encoder")
    if len(new_names) != len(new_embeddings):
        raise ValueError("one embedding per new name required")
    extended = vocabulary.extended(list(new_names))  # raises VocabularyError on duplicates
    for e in new_embeddings:
        extend_matrix(model.label_encoder, e)
    model.config = replace(model.config, num_classes=len(extended))
    return extended


def generate_adaptation_set(
    enrollments: Mapping[int, Sequence[Waveform]],
    seen_manifest: Manifest,
    rng: np.random.Generator,
    size: int,
    out_dir: str | Path,
    vocabulary: Vocabulary,
    snr_db: tuple[float, float] = (15.0, 25.0),
    gain_db: tuple[float, float] = (-3.0, 3.0),
    split: str = "adapt",
) -> Manifest:
    """Build fine-tuning mixtures: one new-class enrollment plus two
    seen-class stems plus noise, on the PCM grid like every other scene.

    New-class coverage is round-robin over ``enrollments`` keys; stems are
    drawn from the seen manifest's referenced stem files.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    if not enrollments or any(not len(v) for v in enrollments.values()):
        raise ValueError("every new class needs at least one enrollment")
    out_dir = Path(out_dir)
    new_ids = sorted(enrollments)
    for new_id in new_ids:
        if not 0 <= new_id < len(vocabulary):
            raise VocabularyError(f"new class id {new_id} outside vocabulary of size {len(vocabulary)}")

    seen_sources: list[tuple[int, str]] = []
    for record in seen_manifest:
        seen_sources.extend(record.stem_paths.items())
    if len({c for c, _ in seen_sources}) < 2:
        raise ValueError("need stems from at least two seen classes")
    stem_cache: dict[str, np.ndarray] = {}

    def load_stem(rel: str) -> np.ndarray:
        if rel not in stem_cache:
            stem_cache[rel] = read_wav(seen_manifest.resolve(rel)).samples
        return stem_cache[rel]

    num_samples = len(load_stem(seen_sources[0][1]))
    sample_rate = read_wav(seen_manifest.resolve(seen_sources[0][1])).sample_rate

    enroll_rel: dict[tuple[int, int], str] = {}
    for new_id in new_ids:
        for k, audio in enumerate(enrollments[new_id]):
            rel = f"enroll/{vocabulary.name_of(new_id)}/{k}.wav"
            write_wav(out_dir / rel, audio)
            enroll_rel[(new_id, k)] = rel

    records = []
    for index in range(size):
        new_id = new_ids[index % len(new_ids)]
        pool = enrollments[new_id]
        pick = int(rng.integers(len(pool)))
        enr = pool[pick].samples

        new_stem = np.zeros(num_samples)
        start = int(rng.integers(0, max(num_samples - len(enr), 0) + 1))
        end = min(start + len(enr), num_samples)
        new_stem[start:end] = enr[: end - start] * 10.0 ** (rng.uniform(*gain_db) / 20.0)

        classes = sorted({c for c, _ in seen_sources})
        picked_classes = [int(c) for c in rng.choice(classes, size=2, replace=False)]
        stems = {new_id: new_stem}
        for c in picked_classes:
            options = [rel for cc, rel in seen_sources if cc == c]
            rel = options[int(rng.integers(len(options)))]
            stems[c] = load_stem(rel) * 10.0 ** (rng.uniform(*gain_db) / 20.0)

        noise = _lowpass_noise(num_samples, rng)
        stem_sum = np.sum(list(stems.values()), axis=0)
        stem_pow = float(np.dot(stem_sum, stem_sum))
        noise_pow = float(np.dot(noise, noise))
        noise = noise * np.sqrt(stem_pow / (noise_pow * 10.0 ** (rng.uniform(*snr_db) / 10.0)))
        peak = float(np.max(np.abs(stem_sum + noise), initial=0.0))
        if peak > PEAK_HEADROOM:
            scale = PEAK_HEADROOM / peak
            stems = {c: s * scale for c, s in stems.items()}
            noise = noise * scale

        grid = {c: quantize_to_grid(s) for c, s in stems.items()}
        noise = quantize_to_grid(noise)
        mixture = noise.copy()
        for s in grid.values():
            mixture += s

        prefix = f"audio/{split}/{index:05d}"
        write_wav(out_dir / f"{prefix}_mix.wav", Waveform(mixture, sample_rate))
        write_wav(out_dir / f"{prefix}_noise.wav", Waveform(noise, sample_rate))
        stem_paths = {}
        for c, s in grid.items():
            stem_paths[c] = f"{prefix}_stem{c}.wav"
            write_wav(out_dir / stem_paths[c], Waveform(s, sample_rate))
        # point at a pool member other than the one inside the mixture
        # whenever K allows it
        alternatives = [k for k in range(len(pool)) if k != pick] or [pick]
        records.append(ManifestRecord(
            mixture_path=f"{prefix}_mix.wav",
            stem_paths=stem_paths,
            active_classes=tuple(sorted(stems)),
            target_spec=TargetSpec([new_id]),
            enrollment_paths={new_id: enroll_rel[(new_id, alternatives[int(rng.integers(len(alternatives)))])]},
            split=split,
            noise_path=f"{prefix}_noise.wav",
        ))
    manifest = Manifest(tuple(records), base_dir=out_dir)
    write_manifest(manifest, out_dir / f"{split}.jsonl")
    return manifest


def finetune_new_embeddings(
    model: TargetSoundModel,
    vocabulary: Vocabulary,
    train_manifest: Manifest,
    valid_manifest: Manifest,
    num_frozen: int,
    adapt_cfg: AdaptConfig | None = None,
    loss_cfg: LossConfig | None = None,
    log=logger.info,
) -> dict:
    """Fine-tune only the embedding columns at index >= num_frozen.

    All network parameters and the first num_frozen columns stay bitwise
    unchanged; training stops early after ``patience`` epochs without
    validation improvement and keeps the best columns.
    """
    adapt_cfg = adapt_cfg or AdaptConfig()
    loss_cfg = loss_cfg or LossConfig()
    if model.label_encoder is None:
        raise ConfigError("fine-tuning updates the class-embedding matrix; model has none")
    matrix = model.label_encoder.matrix
    if not 0 <= num_frozen < matrix.shape[1]:
        raise ValueError(f"num_frozen={num_frozen} leaves no new columns in matrix of {matrix.shape[1]}")

    for p in model.parameters():
        p.requires_grad_(False)
    matrix.requires_grad_(True)
    frozen_cols = matrix.data[:, :num_frozen].clone()
    col_mask = torch.zeros(1, matrix.shape[1], dtype=matrix.dtype)
    col_mask[:, num_frozen:] = 1.0
    hook = matrix.register_hook(lambda g: g * col_mask)

    train_set = ExtractionDataset(train_manifest, vocabulary)
    valid_set = ExtractionDataset(valid_manifest, vocabulary)
    opt = torch.optim.Adam([matrix], lr=adapt_cfg.learning_rate)
    order_rng = torch.Generator().manual_seed(adapt_cfg.seed)

    def valid_loss() -> float:
        model.eval()
        total = 0.0
        with torch.no_grad():
            for start in range(0, len(valid_set), adapt_cfg.batch_size):
                idx = range(start, min(start + adapt_cfg.batch_size, len(valid_set)))
                batch = valid_set.batch(idx)
                est = model.extract_batch(batch.mixture, model.label_encoder(batch.n_hot))
                total += float(combined_loss(est, batch.reference, batch.mixture, loss_cfg)) * len(idx)
        return total / len(valid_set)

    initial = valid_loss()
    best = initial
    best_cols = matrix.data[:, num_frozen:].clone()
    stale = 0
    history = {"initial_valid": initial, "epochs": 0}
    model.train()
    try:
        for epoch in range(1, adapt_cfg.epochs + 1):
            total = 0.0
            for idx in epoch_batches(len(train_set), adapt_cfg.batch_size, order_rng):
                batch = train_set.batch(idx)
                opt.zero_grad()
                est = model.extract_batch(batch.mixture, model.label_encoder(batch.n_hot))
                loss = combined_loss(est, batch.reference, batch.mixture, loss_cfg)
                if not torch.isfinite(loss):
                    raise DivergenceError(f"adaptation loss became non-finite ({float(loss)})")
                loss.backward()
                opt.step()
                matrix.data[:, :num_frozen].copy_(frozen_cols)
                total += float(loss.detach()) * len(idx)
            valid = valid_loss()
            model.train()
            history["epochs"] = epoch
            log(f"adapt epoch {epoch}: train_loss={total / len(train_set):.4f} valid_loss={valid:.4f}")
            if valid < best:
                best = valid
                best_cols = matrix.data[:, num_frozen:].clone()
                stale = 0
            else:
                stale += 1
                if stale >= adapt_cfg.patience:
                    log(f"no improvement for {stale} epochs; stopping")
                    break
    finally:
        hook.remove()
        matrix.requires_grad_(False)
    matrix.data[:, num_frozen:].copy_(best_cols)
    matrix.data[:, :num_frozen].copy_(frozen_cols)
    model.eval()
    history["final_valid"] = best
    return history
