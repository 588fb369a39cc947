"""Temporal convolutional building blocks shared by the extractor, the
separation baseline, and the enrollment summary encoder.

Blocks are non-causal, residual, depthwise-separable convolutions with
per-block dilation doubling (2^0 .. 2^(X-1) within a stack) and global layer
normalization; temporal length is preserved by every block.
"""

from __future__ import annotations

import torch
import torch.nn as nn


def global_layer_norm(channels: int) -> nn.Module:
    # one group over all channels + time = gLN for [B, C, T] inputs
    return nn.GroupNorm(1, channels, eps=1e-8)


class ConvBlock(nn.Module):
    """Residual block: 1x1 conv, PReLU, gLN, dilated depthwise conv, PReLU,
    gLN, 1x1 conv back to the bottleneck width.

    Args:
        channels: bottleneck width B (input and output)
        hidden: depthwise channel count H
        kernel_size: depthwise kernel P (odd, so padding keeps length)
        dilation: depthwise dilation
    """

    def __init__(self, channels: int, hidden: int, kernel_size: int, dilation: int):
        super().__init__()
        padding = (kernel_size - 1) * dilation // 2
        self.net = nn.Sequential(
            nn.Conv1d(channels, hidden, 1, bias=False),
            nn.PReLU(),
            global_layer_norm(hidden),
            nn.Conv1d(
                hidden, hidden, kernel_size,
                padding=padding, dilation=dilation, groups=hidden, bias=False,
            ),
            nn.PReLU(),
            global_layer_norm(hidden),
            nn.Conv1d(hidden, channels, 1, bias=False),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """[B, C, T] -> [B, C, T]"""
        return x + self.net(x)


class ConvStack(nn.Module):
    """X blocks with dilations 2^0 .. 2^(X-1)."""

    def __init__(self, channels: int, hidden: int, kernel_size: int, num_blocks: int):
        super().__init__()
        self.blocks = nn.Sequential(
            *(ConvBlock(channels, hidden, kernel_size, 2**x) for x in range(num_blocks))
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x)


def build_stacks(channels: int, hidden: int, kernel_size: int, num_blocks: int, repeats: int) -> nn.Sequential:
    return nn.Sequential(
        *(ConvStack(channels, hidden, kernel_size, num_blocks) for _ in range(repeats))
    )
