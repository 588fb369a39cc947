"""Fixed-output-count separation baseline.

Same codec and convolutional stacks as the extractor but with no
conditioning layer; the mask head emits one mask per output. Trained with
the permutation-invariant loss; a target is then picked from the outputs
either by oracle reference comparison or by classifier posterior.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .codec import Codec
from .config import ModelConfig
from . import metrics
from .tcn import build_stacks, global_layer_norm
from .types import Waveform


class SoundSeparator(nn.Module):
    """Separate a mixture into a fixed number of outputs.

    Args:
        config: shared architecture hyperparameters
        output_count: number of emitted sources M_out (>= 2)
    """

    def __init__(self, config: ModelConfig, output_count: int = 3):
        super().__init__()
        if output_count < 2:
            raise ValueError("output_count must be >= 2")
        self.config = config
        self.output_count = output_count
        self.codec = Codec(config.win_length, config.hop_length, config.feature_dim)
        self.input_norm = global_layer_norm(config.feature_dim)
        self.bottleneck = nn.Conv1d(config.feature_dim, config.bottleneck_dim, 1, bias=False)
        self.net = build_stacks(
            config.bottleneck_dim, config.hidden_dim, config.kernel_size,
            config.blocks_per_stack, config.mixture_stacks + config.mask_stacks,
        )
        self.mask_head = nn.Sequential(
            nn.PReLU(),
            nn.Conv1d(config.bottleneck_dim, output_count * config.feature_dim, 1, bias=False),
        )

    def separate_batch(self, mixture: torch.Tensor) -> torch.Tensor:
        """[B, T] mixtures -> [B, M_out, T] estimates."""
        if mixture.dim() == 1:
            mixture = mixture.unsqueeze(0)
        features = self.codec.encode(mixture)
        hidden = self.net(self.bottleneck(self.input_norm(features)))
        masks = torch.sigmoid(self.mask_head(hidden))
        masks = masks.view(masks.shape[0], self.output_count, self.config.feature_dim, -1)
        masked = features.unsqueeze(1) * masks
        flat = masked.reshape(-1, self.config.feature_dim, masked.shape[-1])
        decoded = self.codec.decode(flat, mixture.shape[-1])
        return decoded.view(mixture.shape[0], self.output_count, -1)

    @torch.no_grad()
    def separate(self, mixture: Waveform) -> list[Waveform]:
        """One mixture -> M_out waveforms, each the input length."""
        was_training = self.training
        self.eval()
        try:
            dtype = next(self.parameters()).dtype
            x = torch.from_numpy(np.ascontiguousarray(mixture.samples)).to(dtype)
            outs = self.separate_batch(x.unsqueeze(0)).squeeze(0)
        finally:
            self.train(was_training)
        return [Waveform(o.double().numpy(), mixture.sample_rate) for o in outs]


def oracle_select(separated: Sequence[Waveform], target_stem: Waveform) -> int:
    """Index of the output closest to the reference stem by SI-SDR;
    ties go to the lowest index."""
    if not len(separated):
        raise ValueError("candidate list must be non-empty")
    if not np.any(target_stem.samples):
        raise ValueError("oracle selection needs a nonzero reference stem")
    scores = [metrics.si_sdr(w.samples, target_stem.samples) for w in separated]
    return int(np.argmax(scores))
