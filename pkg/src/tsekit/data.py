"""In-memory training datasets built from manifests.

Toy datasets are small, so audio is preloaded as float32 arrays; batches are
plain tensor slices. Scenes within one dataset share a duration and stack
directly; enrollment clips vary in length and are zero-padded with their
true lengths kept for masked pooling.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .audio_io import read_wav
from .clues import EnrollmentEncoder
from .errors import ConfigError, ManifestError
from .types import Manifest, Vocabulary


@dataclass
class ExtractionBatch:
    """Tensors for one optimizer step.

    Attributes:
        mixture: [B, T]
        reference: [B, T] target stem sum; all-zero rows mark inactive targets
        n_hot: [B, N]
        enrollments: [B, J, T_e] zero-padded target enrollments, or None
        enroll_lengths: [B, J] true sample counts (0 marks an absent slot)
    """

    mixture: torch.Tensor
    reference: torch.Tensor
    n_hot: torch.Tensor
    enrollments: torch.Tensor | None = None
    enroll_lengths: torch.Tensor | None = None


class ExtractionDataset:
    """Mixture/reference/clue triples for extractor training."""

    def __init__(self, manifest: Manifest, vocabulary: Vocabulary, load_enrollments: bool = False):
        self.num_classes = len(vocabulary)
        self.mixtures: list[np.ndarray] = []
        self.references: list[np.ndarray] = []
        self.n_hots: list[np.ndarray] = []
        self.enrollments: list[list[np.ndarray]] = []
        for record in manifest:
            mixture = read_wav(manifest.resolve(record.mixture_path)).samples.astype(np.float32)
            reference = np.zeros_like(mixture)
            n_hot = np.zeros(self.num_classes, dtype=np.float32)
            for label in record.target_spec.labels:
                n_hot[label] = 1.0
                if not record.target_spec.inactive and label in record.stem_paths:
                    reference += read_wav(manifest.resolve(record.stem_paths[label])).samples
            self.mixtures.append(mixture)
            self.references.append(reference.astype(np.float32))
            self.n_hots.append(n_hot)
            if load_enrollments:
                clips = []
                for label in record.target_spec.labels:
                    if label not in record.enrollment_paths:
                        raise ManifestError(
                            f"record for target {record.target_spec.labels} lacks an enrollment for class {label}"
                        )
                    clips.append(
                        read_wav(manifest.resolve(record.enrollment_paths[label])).samples.astype(np.float32)
                    )
                self.enrollments.append(clips)

    def __len__(self) -> int:
        return len(self.mixtures)

    def batch(self, indices) -> ExtractionBatch:
        idx = [int(i) for i in indices]
        mixture = torch.from_numpy(np.stack([self.mixtures[i] for i in idx]))
        reference = torch.from_numpy(np.stack([self.references[i] for i in idx]))
        n_hot = torch.from_numpy(np.stack([self.n_hots[i] for i in idx]))
        if not self.enrollments:
            return ExtractionBatch(mixture, reference, n_hot)
        clips = [self.enrollments[i] for i in idx]
        max_j = max(len(c) for c in clips)
        max_t = max(len(a) for c in clips for a in c)
        enroll = torch.zeros(len(idx), max_j, max_t)
        lengths = torch.zeros(len(idx), max_j, dtype=torch.long)
        for b, clip_list in enumerate(clips):
            for j, audio in enumerate(clip_list):
                enroll[b, j, : len(audio)] = torch.from_numpy(audio)
                lengths[b, j] = len(audio)
        return ExtractionBatch(mixture, reference, n_hot, enroll, lengths)


class SeparationDataset:
    """Mixture plus per-source reference stacks for the PIT baseline."""

    def __init__(self, manifest: Manifest, vocabulary: Vocabulary, num_sources: int):
        self.num_sources = num_sources
        self.mixtures: list[np.ndarray] = []
        self.references: list[np.ndarray] = []
        skipped = 0
        for record in manifest:
            if len(record.stem_paths) != num_sources:
                skipped += 1
                continue
            mixture = read_wav(manifest.resolve(record.mixture_path)).samples.astype(np.float32)
            stems = [
                read_wav(manifest.resolve(record.stem_paths[c])).samples.astype(np.float32)
                for c in sorted(record.stem_paths)
            ]
            self.mixtures.append(mixture)
            self.references.append(np.stack(stems))
        if not self.mixtures:
            raise ConfigError(f"no records with exactly {num_sources} stems")
        if skipped:
            import logging

            logging.getLogger(__name__).warning(
                "skipped %d records whose stem count differs from %d", skipped, num_sources
            )

    def __len__(self) -> int:
        return len(self.mixtures)

    def batch(self, indices) -> tuple[torch.Tensor, torch.Tensor]:
        idx = [int(i) for i in indices]
        mixture = torch.from_numpy(np.stack([self.mixtures[i] for i in idx]))
        reference = torch.from_numpy(np.stack([self.references[i] for i in idx]))
        return mixture, reference


class TaggingDataset:
    """(samples, n-hot) pairs for classifier training; the mixture audio of
    isolated-event scenes with its active classes as labels."""

    def __init__(self, manifest: Manifest, vocabulary: Vocabulary):
        self.examples: list[tuple[np.ndarray, np.ndarray]] = []
        for record in manifest:
            audio = read_wav(manifest.resolve(record.mixture_path)).samples.astype(np.float32)
            n_hot = np.zeros(len(vocabulary), dtype=np.float32)
            for c in record.active_classes:
                n_hot[c] = 1.0
            self.examples.append((audio, n_hot))


def batch_enroll_embedding(
    encoder: EnrollmentEncoder, enrollments: torch.Tensor, lengths: torch.Tensor
) -> torch.Tensor:
    """[B, J, T] padded clips with [B, J] lengths -> [B, D] summed embeddings.

    Slots with length 0 contribute nothing (sum over a target's enrollments,
    one embedding per named source).
    """
    b, j, t = enrollments.shape
    flat = enrollments.reshape(b * j, t)
    flat_len = lengths.reshape(b * j)
    valid = flat_len > 0
    out = flat.new_zeros(b * j, encoder.front.feature_dim)
    if bool(valid.any()):
        out = out.index_put(
            (valid.nonzero(as_tuple=True)[0],),
            encoder(flat[valid], flat_len[valid]),
        )
    return out.reshape(b, j, -1).sum(dim=1)


def epoch_batches(num_items: int, batch_size: int, generator: torch.Generator):
    order = torch.randperm(num_items, generator=generator)
    for start in range(0, num_items, batch_size):
        yield order[start:start + batch_size]


def dataset_paths(data_dir: str | Path) -> dict[str, Path]:
    """Conventional layout written by the simulator."""
    data_dir = Path(data_dir)
    vocab = data_dir / "vocab.txt"
    if not vocab.exists():
        raise ConfigError(f"no vocab.txt under {data_dir}")
    out = {"vocab": vocab}
    for split_file in sorted(data_dir.glob("*.jsonl")):
        out[split_file.stem] = split_file
    return out
