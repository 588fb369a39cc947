"""Training loops: extractor (single or mixed clue), the PIT separation
baseline, and weakly supervised retraining of the clue-independent stacks.

All loops are single-process, deterministic under their seed, select the
best checkpoint by validation loss, and abort with the last good checkpoint
if the loss stops being finite.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path

import torch

from .checkpoint import ModelBundle, save_checkpoint
from .classifier import SoundEventClassifier, freeze
from .config import RunConfig
from .data import (
    ExtractionBatch,
    ExtractionDataset,
    SeparationDataset,
    batch_enroll_embedding,
    epoch_batches,
)
from .errors import ConfigError, DivergenceError
from .extractor import TargetSoundModel
from .losses import combined_loss, pit_loss, sec_weak_loss
from .separator import SoundSeparator
from .types import Manifest, Vocabulary

logger = logging.getLogger(__name__)


def _check_finite(loss: torch.Tensor, out_path: Path, saved_any: bool):
    if torch.isfinite(loss):
        return
    hint = f"last good checkpoint kept at {out_path}" if saved_any else "no checkpoint was saved"
    raise DivergenceError(f"training loss became non-finite ({float(loss)}); {hint}")


def _extraction_loss(model: TargetSoundModel, batch: ExtractionBatch, cfg: RunConfig,
                     backward: bool = False) -> torch.Tensor:
    """One training objective evaluation; in mixed mode runs the two clue
    passes separately, accumulating weighted gradients when backward is set."""
    mode = cfg.model.clue_mode
    loss_cfg = cfg.loss
    if mode == "class":
        est = model.extract_batch(batch.mixture, model.label_encoder(batch.n_hot))
        loss = combined_loss(est, batch.reference, batch.mixture, loss_cfg)
        if backward:
            loss.backward()
        return loss.detach() if backward else loss
    if mode == "enroll":
        e = batch_enroll_embedding(model.enroll_encoder, batch.enrollments, batch.enroll_lengths)
        est = model.extract_batch(batch.mixture, e)
        loss = combined_loss(est, batch.reference, batch.mixture, loss_cfg)
        if backward:
            loss.backward()
        return loss.detach() if backward else loss
    # mixed: one pass per clue encoder over the same network
    est_c = model.extract_batch(batch.mixture, model.label_encoder(batch.n_hot))
    loss_c = combined_loss(est_c, batch.reference, batch.mixture, loss_cfg)
    if backward:
        (loss_cfg.alpha * loss_c).backward()
        loss_c = loss_c.detach()
    e = batch_enroll_embedding(model.enroll_encoder, batch.enrollments, batch.enroll_lengths)
    est_e = model.extract_batch(batch.mixture, e)
    loss_e = combined_loss(est_e, batch.reference, batch.mixture, loss_cfg)
    if backward:
        ((1.0 - loss_cfg.alpha) * loss_e).backward()
        loss_e = loss_e.detach()
    return loss_cfg.alpha * loss_c + (1.0 - loss_cfg.alpha) * loss_e


def _valid_loss_extractor(model, dataset, cfg) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(dataset), cfg.train.batch_size):
            idx = range(start, min(start + cfg.train.batch_size, len(dataset)))
            batch = dataset.batch(idx)
            total += float(_extraction_loss(model, batch, cfg)) * len(idx)
    model.train()
    return total / len(dataset)


def train_extractor(
    cfg: RunConfig,
    train_manifest: Manifest,
    valid_manifest: Manifest,
    vocabulary: Vocabulary,
    out_path: str | Path,
    resume: ModelBundle | None = None,
    log=logger.info,
) -> Path:
    """Fit the extractor; saves the best-validation checkpoint to out_path."""
    if cfg.model.num_classes != len(vocabulary):
        raise ConfigError(
            f"model num_classes={cfg.model.num_classes} but vocabulary has {len(vocabulary)} entries"
        )
    out_path = Path(out_path)
    torch.manual_seed(cfg.train.seed)
    model = TargetSoundModel(cfg.model)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.train.learning_rate)
    start_epoch = 1
    best = math.inf
    saved_any = False
    if resume is not None:
        model.load_state_dict(resume.state_dict)
        if "optimizer" in resume.extra:
            opt.load_state_dict(resume.extra["optimizer"])
        start_epoch = resume.epoch + 1
        best = resume.valid_loss
        log(f"resuming from epoch {resume.epoch} (valid_loss={best:.4f})")

    needs_enroll = cfg.model.clue_mode in ("enroll", "mixed")
    train_set = ExtractionDataset(train_manifest, vocabulary, load_enrollments=needs_enroll)
    valid_set = ExtractionDataset(valid_manifest, vocabulary, load_enrollments=needs_enroll)
    order_rng = torch.Generator().manual_seed(cfg.train.seed)

    model.train()
    for epoch in range(start_epoch, cfg.train.max_epochs + 1):
        total = 0.0
        for idx in epoch_batches(len(train_set), cfg.train.batch_size, order_rng):
            opt.zero_grad()
            loss = _extraction_loss(model, train_set.batch(idx), cfg, backward=True)
            _check_finite(loss, out_path, saved_any)
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.train.grad_clip)
            opt.step()
            total += float(loss) * len(idx)
        valid = _valid_loss_extractor(model, valid_set, cfg)
        log(f"epoch {epoch}: train_loss={total / len(train_set):.4f} valid_loss={valid:.4f}")
        if valid < best:
            best = valid
            save_checkpoint(
                out_path, "tse", cfg, vocabulary, model, epoch, valid,
                extra={"optimizer": opt.state_dict()},
            )
            saved_any = True
    if not saved_any:
        raise DivergenceError("validation loss never improved on the resumed checkpoint")
    return out_path


def train_separator(
    cfg: RunConfig,
    train_manifest: Manifest,
    valid_manifest: Manifest,
    vocabulary: Vocabulary,
    out_path: str | Path,
    output_count: int = 3,
    log=logger.info,
) -> Path:
    """Fit the fixed-output-count baseline with the permutation-invariant loss."""
    out_path = Path(out_path)
    torch.manual_seed(cfg.train.seed)
    model = SoundSeparator(cfg.model, output_count=output_count)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.train.learning_rate)
    train_set = SeparationDataset(train_manifest, vocabulary, output_count)
    valid_set = SeparationDataset(valid_manifest, vocabulary, output_count)
    order_rng = torch.Generator().manual_seed(cfg.train.seed)
    tau = cfg.loss.tau
    best = math.inf
    saved_any = False
    model.train()
    for epoch in range(1, cfg.train.max_epochs + 1):
        total = 0.0
        for idx in epoch_batches(len(train_set), cfg.train.batch_size, order_rng):
            mixture, reference = train_set.batch(idx)
            opt.zero_grad()
            loss, _ = pit_loss(model.separate_batch(mixture), reference, tau)
            _check_finite(loss, out_path, saved_any)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.train.grad_clip)
            opt.step()
            total += float(loss.detach()) * len(idx)
        model.eval()
        with torch.no_grad():
            valid = sum(
                float(pit_loss(model.separate_batch(m), r, tau)[0]) * m.shape[0]
                for m, r in (
                    valid_set.batch(range(s, min(s + cfg.train.batch_size, len(valid_set))))
                    for s in range(0, len(valid_set), cfg.train.batch_size)
                )
            ) / len(valid_set)
        model.train()
        log(f"epoch {epoch}: train_loss={total / len(train_set):.4f} valid_loss={valid:.4f}")
        if valid < best:
            best = valid
            save_checkpoint(
                out_path, "uss", cfg, vocabulary, model, epoch, valid,
                extra={"output_count": output_count, "optimizer": opt.state_dict()},
            )
            saved_any = True
    return out_path


def retrain_weak(
    bundle: ModelBundle,
    weak_train: Manifest,
    weak_valid: Manifest,
    classifier: SoundEventClassifier,
    out_path: str | Path,
    epochs: int = 5,
    learning_rate: float = 1e-4,
    log=logger.info,
) -> Path:
    """Minimize the weak classification loss over the clue-independent stacks
    only; every other parameter group (codec, conditioned stacks, clue
    encoders) stays bitwise untouched.

    The weak manifests need labels but no stems.
    """
    if bundle.kind != "tse":
        raise ConfigError("weak retraining applies to extraction checkpoints")
    out_path = Path(out_path)
    cfg = bundle.config
    model = bundle.build()
    if model.label_encoder is None:
        raise ConfigError("weak retraining conditions on class labels; model has no label encoder")
    freeze(classifier)
    vocabulary = bundle.vocabulary
    train_set = ExtractionDataset(weak_train, vocabulary)
    valid_set = ExtractionDataset(weak_valid, vocabulary)

    for p in model.parameters():
        p.requires_grad_(False)
    trainable = []
    for module in model.ext_mix_modules():
        for p in module.parameters():
            p.requires_grad_(True)
            trainable.append(p)
    opt = torch.optim.Adam(trainable, lr=learning_rate)
    torch.manual_seed(cfg.train.seed)
    order_rng = torch.Generator().manual_seed(cfg.train.seed)

    def valid_loss() -> float:
        model.eval()
        total = 0.0
        with torch.no_grad():
            for start in range(0, len(valid_set), cfg.train.batch_size):
                idx = range(start, min(start + cfg.train.batch_size, len(valid_set)))
                batch = valid_set.batch(idx)
                est = model.extract_batch(batch.mixture, model.label_encoder(batch.n_hot))
                total += float(sec_weak_loss(est, batch.n_hot, classifier)) * len(idx)
        return total / len(valid_set)

    before = valid_loss()
    best = before
    save_checkpoint(out_path, "tse", cfg, vocabulary, model, bundle.epoch, bundle.valid_loss,
                    extra={"weak_loss_before": before, "weak_loss_after": before})
    model.train()
    for epoch in range(1, epochs + 1):
        total = 0.0
        for idx in epoch_batches(len(train_set), cfg.train.batch_size, order_rng):
            batch = train_set.batch(idx)
            opt.zero_grad()
            est = model.extract_batch(batch.mixture, model.label_encoder(batch.n_hot))
            loss = sec_weak_loss(est, batch.n_hot, classifier)
            _check_finite(loss, out_path, True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(trainable, cfg.train.grad_clip)
            opt.step()
            total += float(loss.detach()) * len(idx)
        after = valid_loss()
        model.train()
        log(f"weak epoch {epoch}: train_loss={total / len(train_set):.4f} valid_loss={after:.4f}")
        if after < best:
            best = after
            save_checkpoint(out_path, "tse", cfg, vocabulary, model, bundle.epoch, bundle.valid_loss,
                            extra={"weak_loss_before": before, "weak_loss_after": after})
    log(f"weak validation loss: {before:.4f} -> {best:.4f}")
    return out_path
