"""Clue encoders: map a target identity (class labels or enrollment audio)
to the conditioning embedding.

Class labels index an embedding matrix; a label set maps to the sum of its
columns (n-hot product). Enrollment audio passes through a private encoder
layer (parameters never tied to the codec) and a summary stack whose output
frames are mean-pooled over time. Multiple enrollments sum their embeddings.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .codec import Codec
from .config import ModelConfig
from .errors import VocabularyError
from .tcn import ConvStack, global_layer_norm
from .types import Clue, EnrollmentSet, LabelSet, Waveform


class LabelEncoder(nn.Module):
    """Embedding matrix with one column per known class.

    Args:
        dim: embedding dimension D
        num_classes: vocabulary size N
    """

    def __init__(self, dim: int, num_classes: int):
        super().__init__()
        self.dim = dim
        # unit-scale columns keep the conditioning product well-scaled
        self.matrix = nn.Parameter(torch.randn(dim, num_classes) / math.sqrt(dim))

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[1]

    def forward(self, n_hot: torch.Tensor) -> torch.Tensor:
        """[B, N] n-hot indicators -> [B, D] summed columns."""
        if n_hot.shape[-1] != self.num_classes:
            raise VocabularyError(
                f"n-hot width {n_hot.shape[-1]} does not match vocabulary size {self.num_classes}"
            )
        return n_hot.to(self.matrix.dtype) @ self.matrix.T

    def embedding(self, labels: Iterable[int]) -> torch.Tensor:
        """Sum of matrix columns for a label set; empty set gives zeros."""
        out = self.matrix.new_zeros(self.dim)
        for idx in sorted(set(int(i) for i in labels)):
            if not 0 <= idx < self.num_classes:
                raise VocabularyError(f"class id {idx} outside vocabulary of size {self.num_classes}")
            out = out + self.matrix[:, idx]
        return out


class EnrollmentEncoder(nn.Module):
    """Sequence-summary encoder: private codec layer, one summary stack,
    then temporal mean pooling of the summary frames.

    Frames only partially covered by real samples (padding) are excluded
    from the mean when lengths are given.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.front = Codec(config.win_length, config.hop_length, config.feature_dim)
        self.norm = global_layer_norm(config.feature_dim)
        self.bottleneck = nn.Conv1d(config.feature_dim, config.bottleneck_dim, 1, bias=False)
        self.stack = ConvStack(
            config.bottleneck_dim, config.hidden_dim, config.kernel_size, config.enroll_blocks
        )
        self.head = nn.Sequential(
            nn.PReLU(),
            nn.Conv1d(config.bottleneck_dim, config.feature_dim, 1, bias=False),
        )

    def summary_frames(self, audio: torch.Tensor) -> torch.Tensor:
        """[B, T] samples -> [B, D, T'] summary frames."""
        features = self.front.encode(audio)
        return self.head(self.stack(self.bottleneck(self.norm(features))))

    def frame_mask(self, num_frames: int, lengths: torch.Tensor) -> torch.Tensor:
        """[B] sample counts -> [B, T'] validity of fully covered frames."""
        starts = torch.arange(num_frames, device=lengths.device) * self.front.hop_length
        ends = starts + self.front.win_length
        return (ends.unsqueeze(0) <= lengths.unsqueeze(1)).clamp(min=0)

    def forward(self, audio: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """[B, T] (padded) samples with true lengths -> [B, D] embeddings."""
        if audio.dim() == 1:
            audio = audio.unsqueeze(0)
        frames = self.summary_frames(audio)
        if lengths is None:
            return frames.mean(dim=-1)
        mask = self.frame_mask(frames.shape[-1], lengths).to(frames.dtype)
        counts = mask.sum(dim=-1).clamp(min=1.0)
        return (frames * mask.unsqueeze(1)).sum(dim=-1) / counts.unsqueeze(-1)


def class_embedding(labels: LabelSet | Iterable[int], encoder: LabelEncoder) -> torch.Tensor:
    indices = labels.indices if isinstance(labels, LabelSet) else labels
    return encoder.embedding(indices)


def _as_tensor(audio: Waveform | torch.Tensor, like: nn.Module) -> torch.Tensor:
    dtype = next(like.parameters()).dtype
    if isinstance(audio, Waveform):
        return torch.from_numpy(np.ascontiguousarray(audio.samples)).to(dtype)
    return audio.to(dtype)


def enroll_embedding(audio: Waveform | torch.Tensor, encoder: EnrollmentEncoder) -> torch.Tensor:
    """One enrollment -> D-vector (temporal mean of summary frames)."""
    x = _as_tensor(audio, encoder)
    return encoder(x.unsqueeze(0)).squeeze(0)


def multi_enroll_embedding(audios: Sequence[Waveform | torch.Tensor], encoder: EnrollmentEncoder) -> torch.Tensor:
    """Sum of per-enrollment embeddings; one embedding per target source."""
    if not len(audios):
        raise ValueError("enrollment list must be non-empty")
    total = None
    for audio in audios:
        e = enroll_embedding(audio, encoder)
        total = e if total is None else total + e
    return total


def mixed_clue_embedding(
    clue: Clue, label_encoder: LabelEncoder | None, enroll_encoder: EnrollmentEncoder | None
) -> torch.Tensor:
    """Dispatch a clue to whichever encoder handles its variant."""
    if isinstance(clue, LabelSet):
        if label_encoder is None:
            raise ValueError("model has no class-label encoder")
        return class_embedding(clue, label_encoder)
    if isinstance(clue, EnrollmentSet):
        if enroll_encoder is None:
            raise ValueError("model has no enrollment encoder")
        return multi_enroll_embedding(clue.audios, enroll_encoder)
    raise TypeError(f"unsupported clue type {type(clue).__name__}")
