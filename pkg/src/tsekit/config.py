"""Run configuration: model, loss, optimizer, and simulation settings.

Configs are frozen dataclasses loadable from TOML files; CLI flags override
file values field by field (flags win).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError

CLUE_MODES = ("class", "enroll", "mixed")
TASKS = ("single", "multi")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters for the extractor (and baseline stacks).

    Attributes:
        num_classes: vocabulary size N (columns of the embedding matrix).
        clue_mode: which clue encoders the model carries: class | enroll | mixed.
        win_length: codec analysis window L in samples.
        hop_length: codec hop in samples.
        feature_dim: codec feature dimension D; equals the embedding dimension.
        bottleneck_dim: TCN channel width B; must equal feature_dim so the
            conditioning product is well-formed.
        hidden_dim: depthwise-conv hidden channels H inside each block.
        kernel_size: depthwise kernel size P.
        blocks_per_stack: X blocks per stack, dilations 2^0 .. 2^(X-1).
        mixture_stacks: clue-independent stacks before conditioning.
        mask_stacks: stacks after conditioning, feeding the mask head.
        enroll_blocks: blocks in the enrollment summary stack.
    """

    num_classes: int
    clue_mode: str = "class"
    win_length: int = 20
    hop_length: int = 10
    feature_dim: int = 256
    bottleneck_dim: int = 256
    hidden_dim: int = 512
    kernel_size: int = 3
    blocks_per_stack: int = 8
    mixture_stacks: int = 1
    mask_stacks: int = 7
    enroll_blocks: int = 4

    def __post_init__(self):
        if self.clue_mode not in CLUE_MODES:
            raise ConfigError(f"clue_mode must be one of {CLUE_MODES}, got {self.clue_mode!r}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        for name in (
            "win_length", "hop_length", "feature_dim", "bottleneck_dim",
            "hidden_dim", "kernel_size", "blocks_per_stack", "mixture_stacks",
            "mask_stacks", "enroll_blocks",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.bottleneck_dim != self.feature_dim:
            raise ConfigError(
                "bottleneck_dim must equal feature_dim: the conditioning layer "
                "multiplies bottleneck frames by a feature_dim embedding"
            )
        if self.hop_length > self.win_length:
            raise ConfigError("hop_length must not exceed win_length")


def toy_model_config(num_classes: int, clue_mode: str = "class") -> ModelConfig:
    """Small configuration sized for minutes-scale CPU training."""
    return ModelConfig(
        num_classes=num_classes,
        clue_mode=clue_mode,
        win_length=16,
        hop_length=8,
        feature_dim=64,
        bottleneck_dim=64,
        hidden_dim=128,
        kernel_size=3,
        blocks_per_stack=4,
        mixture_stacks=1,
        mask_stacks=2,
        enroll_blocks=4,
    )


@dataclass(frozen=True)
class LossConfig:
    """Objective constants.

    Attributes:
        eta_db: soft threshold of the extraction loss in dB; tau = 10^(-eta/10).
        tau_inactive: soft threshold of the inactive-target loss.
        alpha: multi-task weight between class-label and enrollment passes.
    """

    eta_db: float = 30.0
    tau_inactive: float = 1e-2
    alpha: float = 0.5

    def __post_init__(self):
        if self.eta_db <= 0:
            raise ConfigError("eta_db must be positive")
        if self.tau_inactive <= 0:
            raise ConfigError("tau_inactive must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")

    @property
    def tau(self) -> float:
        return 10.0 ** (-self.eta_db / 10.0)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings."""

    learning_rate: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 200
    seed: int = 0
    grad_clip: float = 5.0
    task: str = "single"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("learning_rate, batch_size, max_epochs must be positive")


@dataclass(frozen=True)
class AdaptConfig:
    """Few-shot fine-tuning settings for new-class embeddings."""

    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 8
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigError("epochs, learning_rate, batch_size must be positive")


@dataclass(frozen=True)
class SimulateConfig:
    """Scene-generation settings.

    Attributes:
        classes: ordered class names eligible to appear in scenes; their order
            defines the dataset vocabulary.
        splits: records per split name.
        duration_s: scene length in seconds.
        events_min/events_max: bounds on the number of distinct classes per scene.
        num_targets: labels per target spec (1 = single-target).
        inactive_fraction: probability the single target is absent from the scene.
        snr_db: range of scene SNR, sum of stems vs noise.
        gain_db: per-event gain range around unit level.
        event_duration_s: range of isolated source durations.
        pool_size: isolated samples synthesized per class (events + enrollments).
        pool_range: half-open [lo, hi) of pool indices scenes may use as
            sources; None uses the whole pool. Enrollment sampling always
            draws from the whole pool (minus the sources actually used), so
            a restricted range keeps test-scene sources disjoint from
            adaptation enrollments.
        target_class: when set, every scene contains and targets this class.
        seed: dataset seed; (seed, config) fully determines the output.
        bank_seed: seed of the per-class sample pools, shared across splits.
    """

    classes: tuple[str, ...]
    splits: Mapping[str, int] = field(default_factory=lambda: {"train": 200, "valid": 50, "test": 50})
    duration_s: float = 6.0
    events_min: int = 3
    events_max: int = 3
    num_targets: int = 1
    inactive_fraction: float = 0.1
    snr_db: tuple[float, float] = (15.0, 25.0)
    gain_db: tuple[float, float] = (-3.0, 3.0)
    event_duration_s: tuple[float, float] = (2.0, 5.0)
    pool_size: int = 10
    pool_range: tuple[int, int] | None = None
    target_class: str | None = None
    seed: int = 0
    bank_seed: int = 7

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "snr_db", tuple(self.snr_db))
        object.__setattr__(self, "gain_db", tuple(self.gain_db))
        object.__setattr__(self, "event_duration_s", tuple(self.event_duration_s))
        if not self.classes:
            raise ConfigError("classes must be non-empty")
        if self.events_min < 1 or self.events_max < self.events_min:
            raise ConfigError("need 1 <= events_min <= events_max")
        if self.events_max > len(self.classes):
            raise ConfigError("events_max exceeds number of available classes")
        if not 0.0 <= self.inactive_fraction < 1.0:
            raise ConfigError("inactive_fraction must lie in [0, 1)")
        if self.num_targets < 1 or self.num_targets > self.events_min:
            raise ConfigError("num_targets must lie in [1, events_min]")
        if self.num_targets > 1 and self.inactive_fraction > 0:
            raise ConfigError("inactive targets are only defined for single-target specs")
        if self.target_class is not None and self.target_class not in self.classes:
            raise ConfigError(f"target_class {self.target_class!r} not in classes")
        if self.event_duration_s[0] > self.event_duration_s[1] or self.event_duration_s[0] <= 0:
            raise ConfigError("event_duration_s range invalid")
        if self.event_duration_s[1] > self.duration_s:
            raise ConfigError("event duration exceeds scene duration")
        if self.pool_size < 2:
            raise ConfigError("pool_size must be >= 2 so enrollments can differ from mixture sources")
        if self.pool_range is not None:
            object.__setattr__(self, "pool_range", tuple(self.pool_range))
            lo, hi = self.pool_range
            if not 0 <= lo < hi <= self.pool_size:
                raise ConfigError("pool_range must satisfy 0 <= lo < hi <= pool_size")


def _dataclass_from_mapping(cls, data: Mapping[str, Any], where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    """Everything one command needs: sub-configs plus dataset paths."""

    model: ModelConfig
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    data_dir: str = ""
    out_dir: str = ""

    def to_json(self) -> dict:
        return {
            "model": asdict(self.model),
            "loss": asdict(self.loss),
            "train": asdict(self.train),
            "adapt": asdict(self.adapt),
            "data_dir": self.data_dir,
            "out_dir": self.out_dir,
        }

    @staticmethod
    def from_json(obj: Mapping) -> "RunConfig":
        return RunConfig(
            model=_dataclass_from_mapping(ModelConfig, obj["model"], "model"),
            loss=_dataclass_from_mapping(LossConfig, obj.get("loss", {}), "loss"),
            train=_dataclass_from_mapping(TrainConfig, obj.get("train", {}), "train"),
            adapt=_dataclass_from_mapping(AdaptConfig, obj.get("adapt", {}), "adapt"),
            data_dir=obj.get("data_dir", ""),
            out_dir=obj.get("out_dir", ""),
        )


def _load_toml(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc


def _coerce(value: str, target):
    if isinstance(target, bool):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean from {value!r}")
    if isinstance(target, int):
        return int(value)
    if isinstance(target, float):
        return float(value)
    if isinstance(target, (tuple, list)):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        elem = target[0] if len(target) else ""
        return tuple(_coerce(p, elem) for p in parts)
    return value


def _copy_tree(node):
    if isinstance(node, Mapping):
        return {k: _copy_tree(v) for k, v in node.items()}
    return node


def apply_overrides(sections: dict, overrides: Mapping[str, str]) -> dict:
    """Apply ``section.key=value`` strings on top of TOML sections; flags win.

    Keys may be arbitrarily nested (``simulate.splits.train=16``).
    """
    out = _copy_tree(sections)
    for dotted, raw in overrides.items():
        parts = dotted.split(".")
        if len(parts) < 2:
            raise ConfigError(f"override {dotted!r} must be section.key")
        node = out
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"override target {part!r} is not a section")
            node = child
        key = parts[-1]
        if key in node and not isinstance(node[key], (dict, type(None))):
            node[key] = _coerce(raw, node[key])
        else:
            node[key] = _infer_literal(raw)
    return out


def _infer_literal(raw: str):
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    if "," in raw:
        return tuple(_infer_literal(p.strip()) for p in raw.split(",") if p.strip())
    return raw


def load_run_config(
    path: str | Path,
    overrides: Mapping[str, str] | None = None,
    defaults: Mapping[str, Mapping[str, Any]] | None = None,
) -> RunConfig:
    """Build a RunConfig from a TOML file with optional CLI overrides.

    ``defaults`` fill in keys the file leaves unset (e.g. the vocabulary
    size implied by a dataset); explicit file values and overrides win.
    """
    sections = _load_toml(path)
    for name, values in (defaults or {}).items():
        target = sections.setdefault(name, {})
        if isinstance(target, dict):
            for key, value in values.items():
                target.setdefault(key, value)
    sections = apply_overrides(sections, overrides or {})
    if "model" not in sections:
        raise ConfigError(f"{path}: missing [model] section")
    extra = {k: sections[k] for k in ("data_dir", "out_dir") if k in sections}
    return RunConfig(
        model=_dataclass_from_mapping(ModelConfig, sections["model"], "model"),
        loss=_dataclass_from_mapping(LossConfig, sections.get("loss", {}), "loss"),
        train=_dataclass_from_mapping(TrainConfig, sections.get("train", {}), "train"),
        adapt=_dataclass_from_mapping(AdaptConfig, sections.get("adapt", {}), "adapt"),
        **extra,
    )


def load_simulate_config(path: str | Path, overrides: Mapping[str, str] | None = None) -> SimulateConfig:
    sections = apply_overrides(_load_toml(path), overrides or {})
    if "simulate" not in sections:
        raise ConfigError(f"{path}: missing [simulate] section")
    section = dict(sections["simulate"])
    if "classes" not in section:
        from .simulate import default_class_names

        section["classes"] = default_class_names()
    return _dataclass_from_mapping(SimulateConfig, section, "simulate")


def replace_config(cfg, **updates):
    """dataclasses.replace with ConfigError on unknown fields."""
    known = {f.name for f in fields(cfg)}
    unknown = set(updates) - known
    if unknown:
        raise ConfigError(f"unknown config fields {sorted(unknown)}")
    return replace(cfg, **updates)
