"""Evaluation metrics: SI-SDR and its improvement, attenuation ratios,
inactive-target detection ROC/AUC, and mean average precision.

All functions take plain numpy arrays (or Waveform samples) and return
floats in dB or unit-interval scores. Clamps keep reports finite: SI-SDR at
±60 dB, attenuation at a −80 dB floor.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

SI_SDR_CLAMP_DB = 60.0
ATTEN_FLOOR_DB = -80.0


def _vec(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected 1-D signal, got shape {arr.shape}")
    return arr


def si_sdr(est, ref, clamp_db: float = SI_SDR_CLAMP_DB) -> float:
    """Scale-invariant SDR in dB: the reference is rescaled by the optimal
    scalar projection before the energy ratio."""
    est, ref = _vec(est), _vec(ref)
    if est.shape != ref.shape:
        raise ValueError("length mismatch")
    ref_pow = float(np.dot(ref, ref))
    if ref_pow == 0.0:
        raise ValueError("zero reference")
    scale = float(np.dot(est, ref)) / ref_pow
    target = scale * ref
    target_pow = float(np.dot(target, target))
    noise_pow = float(np.dot(est - target, est - target))
    if target_pow == 0.0:
        return -clamp_db
    if noise_pow == 0.0:
        return clamp_db
    value = 10.0 * np.log10(target_pow / noise_pow)
    return float(np.clip(value, -clamp_db, clamp_db))


def sdr_improvement(est, ref, mixture) -> float:
    """si_sdr(est, ref) − si_sdr(mixture, ref)."""
    return si_sdr(est, ref) - si_sdr(mixture, ref)


def attenuation_mix(est, mixture, floor_db: float = ATTEN_FLOOR_DB) -> float:
    """−10·log10(‖y‖²/‖x̂‖²): 0 when est equals the mixture, more negative
    the stronger the suppression; floored for near-silent estimates."""
    est, mixture = _vec(est), _vec(mixture)
    if est.shape != mixture.shape:
        raise ValueError("length mismatch")
    mix_pow = float(np.dot(mixture, mixture))
    if mix_pow == 0.0:
        raise ValueError("zero mixture")
    est_pow = float(np.dot(est, est))
    if est_pow == 0.0:
        return floor_db
    return float(max(10.0 * np.log10(est_pow / mix_pow), floor_db))


def attenuation_src(est, stem, floor_db: float = ATTEN_FLOOR_DB) -> float:
    """Attenuation relative to a source stem instead of the mixture."""
    stem = _vec(stem)
    if not np.any(stem):
        raise ValueError("zero stem")
    return attenuation_mix(est, stem, floor_db)


def min_power_stem(stems: Mapping[int, np.ndarray] | Sequence[np.ndarray]):
    """The nonzero stem with the least energy; key (or index) and samples."""
    items = stems.items() if isinstance(stems, Mapping) else enumerate(stems)
    best = None
    for key, samples in items:
        samples = np.asarray(samples, dtype=np.float64)
        power = float(np.dot(samples, samples))
        if power == 0.0 or samples.size == 0:
            continue
        if best is None or power < best[1]:
            best = (key, power, samples)
    if best is None:
        raise ValueError("no nonzero stems")
    return best[0], best[2]


def roc_points(scores, inactive: Sequence[bool]) -> tuple[np.ndarray, np.ndarray]:
    """ROC of the rule "flag inactive when score <= threshold", swept over
    all distinct score values. Returns (false-positive rate, recall) arrays."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(inactive, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    num_pos = int(labels.sum())
    num_neg = int((~labels).sum())
    if num_pos == 0 or num_neg == 0:
        raise ValueError("need both active and inactive examples")
    order = np.argsort(scores, kind="stable")
    scores, labels = scores[order], labels[order]
    fpr = [0.0]
    tpr = [0.0]
    tp = fp = 0
    i = 0
    while i < len(scores):
        j = i
        while j < len(scores) and scores[j] == scores[i]:
            tp += int(labels[j])
            fp += int(not labels[j])
            j += 1
        fpr.append(fp / num_neg)
        tpr.append(tp / num_pos)
        i = j
    return np.array(fpr), np.array(tpr)


def inactive_detection_auc(scores, inactive: Sequence[bool]) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Area under the ROC by trapezoidal integration; score ties form ROC
    diagonal segments, which is exactly rank-averaging. Returns (AUC, ROC)."""
    fpr, tpr = roc_points(scores, inactive)
    return float(np.trapezoid(tpr, fpr)), (fpr, tpr)


def average_precision(scores, positives: Sequence[bool]) -> float:
    """Precision averaged at each positive's rank, scores sorted descending."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(positives, dtype=bool)
    if not labels.any():
        raise ValueError("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    labels = labels[order]
    hits = np.cumsum(labels)
    ranks = np.arange(1, len(labels) + 1)
    return float((hits[labels] / ranks[labels]).mean())


def mean_average_precision(posteriors, reference_labels: Sequence[Sequence[int]]) -> float:
    """Macro mean of per-class average precision; classes with no positive
    examples are excluded from the mean."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2:
        raise ValueError("posteriors must be [examples, classes]")
    num_examples, num_classes = posteriors.shape
    truth = np.zeros((num_examples, num_classes), dtype=bool)
    for row, labels in enumerate(reference_labels):
        for c in labels:
            truth[row, int(c)] = True
    aps = [
        average_precision(posteriors[:, c], truth[:, c])
        for c in range(num_classes) if truth[:, c].any()
    ]
    if not aps:
        raise ValueError("no positives in any class")
    return float(np.mean(aps))
