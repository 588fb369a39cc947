"""Experiment reports: per-example extraction metrics plus aggregates.

Active targets are scored by SI-SDR improvement and attenuation; inactive
targets by mixture attenuation, which doubles as the detection score for the
ROC. For every active mixture one absent class is additionally probed (when
one exists), so both detection populations come from the same audio.

Report files: ``<prefix>.jsonl`` per-example rows, ``<prefix>.summary.json``
aggregates (with the config echo and seed), optional ``<prefix>.csv``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import metrics
from .audio_io import read_wav
from .classifier import SoundEventClassifier
from .clues import multi_enroll_embedding
from .config import CLUE_MODES
from .errors import ConfigError, ManifestError
from .extractor import TargetSoundModel
from .types import Manifest, ManifestRecord, Vocabulary, Waveform, seeded_rng

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    """Per-example rows plus aggregates recomputable from them."""

    rows: list[dict]
    summary: dict = field(default_factory=dict)

    def recompute_summary(self) -> dict:
        return summarize_rows(self.rows, dict(self.summary.get("meta", {})))

    def save(self, prefix: str | Path, write_csv: bool = False) -> list[Path]:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        rows_path = prefix.with_suffix(".jsonl")
        with open(rows_path, "w", encoding="utf-8") as fh:
            for row in self.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        summary_path = prefix.with_suffix(".summary.json")
        summary_path.write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written = [rows_path, summary_path]
        if write_csv:
            csv_path = prefix.with_suffix(".csv")
            fields = ["example_id", "role", "labels", "active", "si_sdr_db", "sdri_db",
                      "atten_mix_db", "atten_src_db", "detection_score"]
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
                writer.writeheader()
                for row in self.rows:
                    writer.writerow({**row, "labels": " ".join(map(str, row["labels"]))})
            written.append(csv_path)
        return written


def summarize_rows(rows: Sequence[dict], meta: dict | None = None) -> dict:
    active = [r for r in rows if r["active"]]
    inactive = [r for r in rows if not r["active"]]
    summary: dict = {"meta": meta or {}, "num_rows": len(rows),
                     "num_active": len(active), "num_inactive": len(inactive)}
    if active:
        summary["mean_si_sdr_db"] = float(np.mean([r["si_sdr_db"] for r in active]))
        summary["mean_sdri_db"] = float(np.mean([r["sdri_db"] for r in active]))
        per_class: dict[str, list[float]] = {}
        for r in active:
            for label in r["labels"]:
                per_class.setdefault(str(label), []).append(r["sdri_db"])
        summary["per_class_sdri_db"] = {k: float(np.mean(v)) for k, v in sorted(per_class.items())}
    if inactive:
        summary["mean_atten_mix_inactive_db"] = float(np.mean([r["atten_mix_db"] for r in inactive]))
    if active and inactive:
        scores = [r["detection_score"] for r in rows]
        flags = [not r["active"] for r in rows]
        auc, _ = metrics.inactive_detection_auc(scores, flags)
        summary["inactive_auc"] = auc
    posterior_rows = [r for r in active if "posteriors" in r]
    if posterior_rows:
        summary["map"] = metrics.mean_average_precision(
            np.array([r["posteriors"] for r in posterior_rows]),
            [r["labels"] for r in posterior_rows],
        )
    return summary


def clue_embedding_for(
    record_labels: Sequence[int],
    record: ManifestRecord | None,
    manifest: Manifest,
    model: TargetSoundModel,
    clue_mode: str,
) -> torch.Tensor:
    """Build the conditioning embedding for given labels under a clue mode;
    enrollment clues read the record's per-class enrollment files."""
    if clue_mode == "class":
        if model.label_encoder is None:
            raise ConfigError("model has no class-label encoder")
        return model.label_encoder.embedding(record_labels)
    if clue_mode == "enroll":
        if model.enroll_encoder is None:
            raise ConfigError("model has no enrollment encoder")
        if record is None:
            raise ConfigError("enrollment clues need a manifest record")
        audios = []
        for label in record_labels:
            if label not in record.enrollment_paths:
                raise ManifestError(f"record lacks an enrollment for class {label}")
            audios.append(read_wav(manifest.resolve(record.enrollment_paths[label])))
        return multi_enroll_embedding(audios, model.enroll_encoder)
    raise ConfigError(f"clue_mode for evaluation must be class or enroll, got {clue_mode!r}")


def run_eval(
    manifest: Manifest,
    model: TargetSoundModel,
    clue_mode: str,
    *,
    vocabulary: Vocabulary | None = None,
    seed: int = 0,
    probe_inactive: bool = True,
    classifier: SoundEventClassifier | None = None,
    meta: dict | None = None,
    report_prefix: str | Path | None = None,
    write_csv: bool = False,
) -> EvalReport:
    """Score a trained extractor over a manifest.

    Every record is extracted with its own target spec; for active records
    one randomly selected absent class is probed as an inactive condition.
    """
    if clue_mode not in CLUE_MODES or clue_mode == "mixed":
        raise ConfigError(f"evaluation clue_mode must be class or enroll, got {clue_mode!r}")
    model.eval()
    rng = seeded_rng(seed)
    num_classes = model.config.num_classes
    rows: list[dict] = []
    with torch.no_grad():
        for example_id, record in enumerate(manifest):
            mixture = read_wav(manifest.resolve(record.mixture_path))
            stems = {
                c: read_wav(manifest.resolve(path)) for c, path in record.stem_paths.items()
            }
            labels = list(record.target_spec.labels)
            estimate = model.extract(mixture, clue_embedding_for(labels, record, manifest, model, clue_mode))
            row = _score_row(example_id, "target", labels, not record.target_spec.inactive,
                             estimate, mixture, stems, classifier)
            rows.append(row)
            if probe_inactive and not record.target_spec.inactive:
                absent = sorted(set(range(num_classes)) - set(record.active_classes))
                absent = [c for c in absent if clue_mode == "class" or c in record.enrollment_paths]
                if absent:
                    probe_label = int(rng.choice(absent))
                    probe = model.extract(
                        mixture, clue_embedding_for([probe_label], record, manifest, model, clue_mode)
                    )
                    rows.append(_score_row(example_id, "inactive_probe", [probe_label], False,
                                           probe, mixture, stems, classifier))
    meta = dict(meta or {})
    meta.update({"clue_mode": clue_mode, "seed": seed, "num_records": len(manifest)})
    if vocabulary is not None:
        meta["vocabulary"] = list(vocabulary.names)
    report = EvalReport(rows=rows)
    report.summary = summarize_rows(rows, meta)
    if report_prefix is not None:
        paths = report.save(report_prefix, write_csv=write_csv)
        logger.info("wrote %s", ", ".join(str(p) for p in paths))
    return report


def _score_row(
    example_id: int,
    role: str,
    labels: Sequence[int],
    active: bool,
    estimate: Waveform,
    mixture: Waveform,
    stems: dict[int, Waveform],
    classifier: SoundEventClassifier | None,
) -> dict:
    atten_mix = metrics.attenuation_mix(estimate.samples, mixture.samples)
    row = {
        "example_id": example_id,
        "role": role,
        "labels": [int(c) for c in labels],
        "active": bool(active),
        "atten_mix_db": atten_mix,
        "detection_score": atten_mix,
        "si_sdr_db": None,
        "sdri_db": None,
        "atten_src_db": None,
    }
    if active:
        reference = np.zeros_like(mixture.samples)
        for label in labels:
            if label not in stems:
                raise ManifestError(f"active target {label} has no stem to score against")
            reference += stems[label].samples
        row["si_sdr_db"] = metrics.si_sdr(estimate.samples, reference)
        row["sdri_db"] = metrics.sdr_improvement(estimate.samples, reference, mixture.samples)
        nonzero = {c: w.samples for c, w in stems.items() if len(w) and np.any(w.samples)}
        if nonzero:
            _, weakest = metrics.min_power_stem(nonzero)
            row["atten_src_db"] = metrics.attenuation_src(estimate.samples, weakest)
    if classifier is not None:
        row["posteriors"] = [float(p) for p in classifier.classify(estimate)]
    return row
