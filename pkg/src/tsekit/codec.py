"""Learned analysis/synthesis transform.

A trainable framed linear encoder (bias-free conv + rectifier) maps waveforms
to feature maps; the decoder is a bias-free transposed conv (overlap-add with
learned bases). Inputs are zero-padded at the tail to an integer frame count
and decoder output is trimmed back to the requested length, so encode/decode
preserves signal length exactly.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def frame_count(num_samples: int, win_length: int, hop_length: int) -> int:
    """Frames covering num_samples with tail padding; requires T >= L."""
    if num_samples < win_length:
        raise ValueError(f"input length {num_samples} shorter than one analysis frame ({win_length})")
    return (num_samples - win_length + hop_length - 1) // hop_length + 1


def apply_mask(features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Element-wise product out[d, t] = features[d, t] * mask[d, t]."""
    if features.shape != mask.shape:
        raise ValueError(f"feature/mask shape mismatch: {tuple(features.shape)} vs {tuple(mask.shape)}")
    return features * mask


class Codec(nn.Module):
    """Trainable codec: Conv1d analysis, ConvTranspose1d synthesis.

    Args:
        win_length: analysis window L in samples
        hop_length: hop in samples
        feature_dim: number of basis filters D
    """

    def __init__(self, win_length: int, hop_length: int, feature_dim: int):
        super().__init__()
        self.win_length = win_length
        self.hop_length = hop_length
        self.feature_dim = feature_dim
        # [B, 1, T] -> [B, D, T']
        self.analysis = nn.Conv1d(1, feature_dim, win_length, stride=hop_length, bias=False)
        # [B, D, T'] -> [B, 1, (T'-1)*hop + L]
        self.synthesis = nn.ConvTranspose1d(feature_dim, 1, win_length, stride=hop_length, bias=False)

    def padded_length(self, num_samples: int) -> int:
        frames = frame_count(num_samples, self.win_length, self.hop_length)
        return (frames - 1) * self.hop_length + self.win_length

    def encode(self, waveform: torch.Tensor, rectify: bool = True) -> torch.Tensor:
        """Encode [T] or [B, T] samples to [B, D, T'] features.

        Linear in the input, followed by a rectifier unless disabled.
        """
        if waveform.dim() == 1:
            waveform = waveform.unsqueeze(0)
        if waveform.dim() != 2:
            raise ValueError(f"expected [T] or [B, T] input, got shape {tuple(waveform.shape)}")
        num_samples = waveform.shape[-1]
        pad = self.padded_length(num_samples) - num_samples
        if pad:
            waveform = F.pad(waveform, (0, pad))
        features = self.analysis(waveform.unsqueeze(1))
        if rectify:
            features = F.relu(features)
        return features

    def decode(self, features: torch.Tensor, target_length: int) -> torch.Tensor:
        """Decode [B, D, T'] features back to [B, target_length] samples.

        target_length must match the frame count within one hop of synthesis
        length (the padding the encoder could have added).
        """
        if features.dim() == 2:
            features = features.unsqueeze(0)
        frames = features.shape[-1]
        if frame_count(target_length, self.win_length, self.hop_length) != frames:
            raise ValueError(
                f"target_length {target_length} inconsistent with {frames} frames "
                f"(win={self.win_length}, hop={self.hop_length})"
            )
        out = self.synthesis(features).squeeze(1)
        return out[:, :target_length]
