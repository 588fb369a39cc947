"""Checkpoint container: one file holding parameters, vocabulary, the exact
config that produced them, and training metadata. Loading rebuilds a model
whose inference outputs are bit-identical to the saved one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import torch

from .classifier import SoundEventClassifier
from .config import RunConfig
from .errors import ConfigError
from .extractor import TargetSoundModel
from .separator import SoundSeparator
from .types import Vocabulary

KINDS = ("tse", "uss", "sec")


@dataclass
class ModelBundle:
    """Everything needed to rebuild and audit a trained model."""

    kind: str
    config: RunConfig
    vocabulary: Vocabulary
    state_dict: Mapping[str, torch.Tensor]
    epoch: int
    valid_loss: float
    extra: dict = field(default_factory=dict)

    def build(self) -> torch.nn.Module:
        if self.kind == "tse":
            model = TargetSoundModel(self.config.model)
        elif self.kind == "uss":
            model = SoundSeparator(self.config.model, output_count=self.extra.get("output_count", 3))
        elif self.kind == "sec":
            model = SoundEventClassifier(len(self.vocabulary), channels=self.extra.get("channels", 64))
        else:
            raise ConfigError(f"unknown checkpoint kind {self.kind!r}")
        model.load_state_dict(self.state_dict)
        model.eval()
        return model


def save_checkpoint(
    path: str | Path,
    kind: str,
    config: RunConfig,
    vocabulary: Vocabulary,
    model: torch.nn.Module,
    epoch: int,
    valid_loss: float,
    extra: dict | None = None,
) -> Path:
    if kind not in KINDS:
        raise ConfigError(f"checkpoint kind must be one of {KINDS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload: dict[str, Any] = {
        "kind": kind,
        "config": config.to_json(),
        "vocabulary": list(vocabulary.names),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "epoch": int(epoch),
        "valid_loss": float(valid_loss),
        "extra": dict(extra or {}),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> ModelBundle:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    for key in ("kind", "config", "vocabulary", "state_dict", "epoch", "valid_loss"):
        if key not in payload:
            raise ConfigError(f"{path}: malformed checkpoint, missing {key!r}")
    return ModelBundle(
        kind=payload["kind"],
        config=RunConfig.from_json(payload["config"]),
        vocabulary=Vocabulary(payload["vocabulary"]),
        state_dict=payload["state_dict"],
        epoch=payload["epoch"],
        valid_loss=payload["valid_loss"],
        extra=payload.get("extra", {}),
    )
