"""Small multi-label sound-event classifier.

Front-end: log-magnitude short-time spectra (32 ms window, 16 ms hop at
8 kHz). A stack of 1-D convolutions over the frequency axis produces
frame-level logits; the clip posterior is the temporal mean of the frame
posteriors, so it lies strictly inside (0, 1).

Serves three roles: output selection for the separation baseline, the weakly
supervised retraining loss, and mAP evaluation.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .types import SAMPLE_RATE, Waveform

logger = logging.getLogger(__name__)

N_FFT = 256
HOP = 128
MAG_EPS = 1e-8
LOG_EPS = 1e-5


class SoundEventClassifier(nn.Module):
    """Per-class logistic tagger over log-magnitude spectral frames.

    Args:
        num_classes: vocabulary size (posterior vector length)
        channels: hidden conv width
    """

    def __init__(self, num_classes: int, channels: int = 64):
        super().__init__()
        self.num_classes = num_classes
        freq_bins = N_FFT // 2 + 1
        self.net = nn.Sequential(
            nn.Conv1d(freq_bins, channels, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(channels, channels, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(channels, num_classes, 1),
        )
        window = torch.hann_window(N_FFT, periodic=True)
        self.register_buffer("window", window)

    def features(self, audio: torch.Tensor) -> torch.Tensor:
        """[B, T] samples -> [B, F, T'] log-magnitude frames.

        Smooth magnitude (eps inside the square root) keeps the front-end
        differentiable at spectral zeros, which the weak loss relies on.
        """
        if audio.dim() == 1:
            audio = audio.unsqueeze(0)
        if audio.shape[-1] < N_FFT:
            raise ValueError(f"input length {audio.shape[-1]} shorter than one analysis frame ({N_FFT})")
        spec = torch.stft(
            audio, N_FFT, hop_length=HOP, window=self.window.to(audio.dtype),
            center=False, return_complex=True,
        )
        mag = torch.sqrt(spec.real.square() + spec.imag.square() + MAG_EPS)
        return torch.log(mag + LOG_EPS)

    def frame_logits(self, audio: torch.Tensor) -> torch.Tensor:
        return self.net(self.features(audio))

    def posteriors(self, audio: torch.Tensor) -> torch.Tensor:
        """[B, T] samples -> [B, N] clip posteriors in (0, 1)."""
        return torch.sigmoid(self.frame_logits(audio)).mean(dim=-1)

    @torch.no_grad()
    def classify(self, audio: Waveform) -> np.ndarray:
        """Per-class posterior vector for one waveform (inference mode)."""
        was_training = self.training
        self.eval()
        try:
            dtype = next(self.parameters()).dtype
            x = torch.from_numpy(np.ascontiguousarray(audio.samples)).to(dtype)
            post = self.posteriors(x.unsqueeze(0)).squeeze(0)
        finally:
            self.train(was_training)
        return post.double().numpy()


def select_output(
    candidates: Sequence[Waveform | torch.Tensor], target_class: int, classifier: SoundEventClassifier
) -> int:
    """Index of the candidate with the highest posterior for target_class;
    exact ties go to the lowest index."""
    if not len(candidates):
        raise ValueError("candidate list must be non-empty")
    scores = []
    for cand in candidates:
        if isinstance(cand, torch.Tensor):
            cand = Waveform(cand.detach().double().numpy())
        scores.append(classifier.classify(cand)[target_class])
    return int(np.argmax(scores))


def freeze(classifier: SoundEventClassifier) -> SoundEventClassifier:
    classifier.eval()
    for p in classifier.parameters():
        p.requires_grad_(False)
    return classifier


def train_classifier(
    examples: Sequence[tuple[np.ndarray, np.ndarray]],
    valid_examples: Sequence[tuple[np.ndarray, np.ndarray]],
    num_classes: int,
    epochs: int = 20,
    batch_size: int = 16,
    learning_rate: float = 1e-3,
    seed: int = 0,
    log=logger.info,
) -> tuple[SoundEventClassifier, float]:
    """Fit the tagger on (samples, n-hot) pairs of isolated-event clips.

    Returns the model at its best validation loss along with that loss.
    """
    torch.manual_seed(seed)
    model = SoundEventClassifier(num_classes)
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate)
    bce = nn.BCELoss(reduction="mean")
    audio = torch.stack([torch.from_numpy(a).float() for a, _ in examples])
    targets = torch.stack([torch.from_numpy(t).float() for _, t in examples])
    v_audio = torch.stack([torch.from_numpy(a).float() for a, _ in valid_examples])
    v_targets = torch.stack([torch.from_numpy(t).float() for _, t in valid_examples])
    order_rng = torch.Generator().manual_seed(seed)
    best_loss = float("inf")
    best_state = None
    for epoch in range(1, epochs + 1):
        model.train()
        order = torch.randperm(len(examples), generator=order_rng)
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            opt.zero_grad()
            loss = bce(model.posteriors(audio[idx]), targets[idx])
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        model.eval()
        with torch.no_grad():
            valid_loss = float(bce(model.posteriors(v_audio), v_targets))
        log(f"classifier epoch {epoch}: train_loss={total / len(order):.4f} valid_loss={valid_loss:.4f}")
        if valid_loss < best_loss:
            best_loss = valid_loss
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model, best_loss
