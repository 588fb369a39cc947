"""Training objectives.

SDR-family losses are in dB (lower is better); the weak classification loss
is in nats. Batched inputs reduce by arithmetic mean over examples unless
reduction="none".
"""

from __future__ import annotations

import itertools
from typing import Sequence

import torch

from .config import LossConfig
from .errors import ConfigError

DEFAULT_TAU = 1e-3
DEFAULT_TAU_INACTIVE = 1e-2


def _rows(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 1:
        return x.unsqueeze(0)
    return x


def _reduce(values: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return values.mean()
    if reduction == "none":
        return values
    raise ValueError(f"unknown reduction {reduction!r}")


def thresholded_sdr_loss(
    est: torch.Tensor, ref: torch.Tensor, tau: float = DEFAULT_TAU, reduction: str = "mean"
) -> torch.Tensor:
    """-10·log10(‖x‖² / (‖x − x̂‖² + τ‖x‖²)); bounded below by 10·log10(τ).

    The threshold caps the attainable SDR so easy examples stop dominating.
    References must be nonzero; inactive targets belong in inactive_loss.
    """
    est, ref = _rows(est), _rows(ref)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: {tuple(est.shape)} vs {tuple(ref.shape)}")
    ref_pow = ref.square().sum(dim=-1)
    if bool((ref_pow == 0).any()):
        raise ValueError("zero reference: route inactive targets to inactive_loss")
    err_pow = (ref - est).square().sum(dim=-1)
    values = -10.0 * torch.log10(ref_pow / (err_pow + tau * ref_pow))
    return _reduce(values, reduction)


def inactive_loss(
    est: torch.Tensor, mixture: torch.Tensor, tau_inactive: float = DEFAULT_TAU_INACTIVE,
    reduction: str = "mean",
) -> torch.Tensor:
    """10·log10(‖x̂‖² + τ_inactive·‖y‖²); minimized exactly at x̂ ≡ 0."""
    est, mixture = _rows(est), _rows(mixture)
    if est.shape != mixture.shape:
        raise ValueError(f"shape mismatch: {tuple(est.shape)} vs {tuple(mixture.shape)}")
    mix_pow = mixture.square().sum(dim=-1)
    if bool((mix_pow == 0).any()):
        raise ValueError("zero mixture")
    values = 10.0 * torch.log10(est.square().sum(dim=-1) + tau_inactive * mix_pow)
    return _reduce(values, reduction)


def combined_loss(
    est: torch.Tensor, target_stem: torch.Tensor, mixture: torch.Tensor,
    cfg: LossConfig | None = None, reduction: str = "mean",
) -> torch.Tensor:
    """Route each example by target activity: nonzero stem -> thresholded SDR,
    all-zero stem -> inactive loss."""
    cfg = cfg or LossConfig()
    est, stem, mixture = _rows(est), _rows(target_stem), _rows(mixture)
    active = stem.square().sum(dim=-1) > 0
    values = est.new_empty(est.shape[0])
    if bool(active.any()):
        values = values.index_put(
            (active.nonzero(as_tuple=True)[0],),
            thresholded_sdr_loss(est[active], stem[active], cfg.tau, reduction="none"),
        )
    if bool((~active).any()):
        values = values.index_put(
            ((~active).nonzero(as_tuple=True)[0],),
            inactive_loss(est[~active], mixture[~active], cfg.tau_inactive, reduction="none"),
        )
    return _reduce(values, reduction)


def soundbeam_loss(
    mixture: torch.Tensor, target_stem: torch.Tensor, n_hot: torch.Tensor,
    enrollments: torch.Tensor, model, cfg: LossConfig | None = None,
    enroll_lengths: torch.Tensor | None = None,
) -> torch.Tensor:
    """Multi-task objective: α·loss(class clue) + (1−α)·loss(enrollment clue).

    Runs two forward passes per example, one per clue encoder, over the same
    extraction network.
    """
    cfg = cfg or LossConfig()
    if model.label_encoder is None or model.enroll_encoder is None:
        raise ConfigError("mixed-clue loss needs both a class-label and an enrollment encoder")
    e_class = model.label_encoder(n_hot)
    loss_class = combined_loss(model.extract_batch(mixture, e_class), target_stem, mixture, cfg)
    e_enroll = model.enroll_encoder(enrollments, enroll_lengths)
    loss_enroll = combined_loss(model.extract_batch(mixture, e_enroll), target_stem, mixture, cfg)
    return cfg.alpha * loss_class + (1.0 - cfg.alpha) * loss_enroll


def pit_loss(
    estimates: torch.Tensor | Sequence[torch.Tensor],
    references: torch.Tensor | Sequence[torch.Tensor],
    tau: float = DEFAULT_TAU,
):
    """Permutation-invariant loss: minimum over all output-to-reference
    assignments of the mean thresholded SDR loss.

    Accepts [M, T] (returns (scalar, permutation tuple)) or [B, M, T]
    (returns (batch-mean scalar, list of per-example permutations)).
    Brute force over M! assignments; M <= 4.
    """
    if not isinstance(estimates, torch.Tensor):
        estimates = torch.stack(list(estimates))
    if not isinstance(references, torch.Tensor):
        references = torch.stack(list(references))
    if estimates.shape != references.shape:
        raise ValueError(f"shape mismatch: {tuple(estimates.shape)} vs {tuple(references.shape)}")
    batched = estimates.dim() == 3
    est = estimates if batched else estimates.unsqueeze(0)
    ref = references if batched else references.unsqueeze(0)
    num_sources = est.shape[1]
    if num_sources > 4:
        raise ValueError("brute-force assignment search supports at most 4 sources")
    perms = list(itertools.permutations(range(num_sources)))
    per_perm = []
    for perm in perms:
        pair = thresholded_sdr_loss(
            est[:, list(perm)].reshape(-1, est.shape[-1]),
            ref.reshape(-1, ref.shape[-1]),
            tau, reduction="none",
        ).reshape(est.shape[0], num_sources)
        per_perm.append(pair.mean(dim=-1))
    table = torch.stack(per_perm, dim=-1)  # [B, M!]
    best = table.argmin(dim=-1)
    loss = table.gather(-1, best.unsqueeze(-1)).squeeze(-1).mean()
    chosen = [perms[i] for i in best.tolist()]
    return (loss, chosen) if batched else (loss, chosen[0])


def sec_weak_loss(
    est: torch.Tensor, n_hot: torch.Tensor, classifier, reduction: str = "mean"
) -> torch.Tensor:
    """Binary cross-entropy (nats, summed over classes) of the frozen
    classifier's posteriors on the extracted audio against the n-hot target.

    Gradients flow into est only; freeze the classifier before calling.
    """
    posteriors = classifier.posteriors(_rows(est))
    n_hot = _rows(n_hot).to(posteriors.dtype)
    bce = -(n_hot * torch.log(posteriors) + (1.0 - n_hot) * torch.log1p(-posteriors))
    return _reduce(bce.sum(dim=-1), reduction)
