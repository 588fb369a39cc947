"""Core domain types: waveforms, clues, mixtures, manifests, and seeded RNG.

All audio in the toolkit is mono at a fixed 8 kHz rate. Types are immutable
after construction and safe to share across workers; random generators are
single-owner streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import ManifestError, VocabularyError

SAMPLE_RATE = 8000


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream; same seed gives the same draws everywhere."""
    return np.random.Generator(np.random.PCG64(seed))


def substream_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent child stream for (seed, key); used for per-record sampling."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(key))))


@dataclass(frozen=True)
class Waveform:
    """Mono audio signal: sample array plus its fixed rate.

    Samples are real-valued in [-1, 1] nominally; finite values enforced.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def energy(self) -> float:
        return float(np.sum(self.samples**2))

    @staticmethod
    def zeros(num_samples: int, sample_rate: int = SAMPLE_RATE) -> "Waveform":
        return Waveform(np.zeros(num_samples), sample_rate)


def check_same_rate(*waveforms: Waveform) -> int:
    rates = {w.sample_rate for w in waveforms}
    if len(rates) > 1:
        raise ValueError(f"sample rates differ: {sorted(rates)}")
    return rates.pop()


@dataclass(frozen=True)
class LabelSet:
    """Clue variant: target identified by a set of known class indices."""

    indices: frozenset[int]

    def __init__(self, indices: Iterable[int]):
        object.__setattr__(self, "indices", frozenset(int(i) for i in indices))

    def validate(self, num_classes: int) -> None:
        for i in self.indices:
            if not 0 <= i < num_classes:
                raise VocabularyError(f"class id {i} outside vocabulary of size {num_classes}")


@dataclass(frozen=True)
class EnrollmentSet:
    """Clue variant: target identified by one or more enrollment recordings."""

    audios: tuple[Waveform, ...]

    def __init__(self, audios: Sequence[Waveform]):
        audios = tuple(audios)
        if not audios:
            raise ValueError("enrollment set must be non-empty")
        object.__setattr__(self, "audios", audios)


Clue = Union[LabelSet, EnrollmentSet]


@dataclass(frozen=True)
class TargetSpec:
    """Which classes a mixture's extraction target refers to.

    ``inactive`` marks targets that are absent from the mixture; the correct
    extraction output is then silence.
    """

    labels: tuple[int, ...]
    inactive: bool = False

    def __init__(self, labels: Iterable[int], inactive: bool = False):
        object.__setattr__(self, "labels", tuple(sorted({int(i) for i in labels})))
        object.__setattr__(self, "inactive", bool(inactive))

    def to_json(self) -> dict:
        return {"labels": list(self.labels), "inactive": self.inactive}

    @staticmethod
    def from_json(obj: Mapping) -> "TargetSpec":
        return TargetSpec(obj["labels"], obj.get("inactive", False))


@dataclass(frozen=True)
class MixtureExample:
    """One realized mixture with its ground-truth decomposition.

    The mixture equals the sum of the per-class stems plus the noise; only
    active classes carry stems.
    """

    mixture: Waveform
    stems: Mapping[int, Waveform]
    noise: Waveform
    target_spec: TargetSpec
    duration_s: float

    @property
    def active_classes(self) -> frozenset[int]:
        return frozenset(c for c, w in self.stems.items() if len(w) and np.any(w.samples))

    def reconstruction_error(self) -> float:
        """Relative L2 error of mixture minus (sum of stems + noise)."""
        total = self.noise.samples.copy()
        for stem in self.stems.values():
            if len(stem):
                total += stem.samples
        num = float(np.linalg.norm(self.mixture.samples - total))
        den = float(np.linalg.norm(self.mixture.samples))
        return num / den if den > 0 else num

    def validate(self, rel_tol: float = 1e-6) -> None:
        check_same_rate(self.mixture, self.noise, *self.stems.values())
        err = self.reconstruction_error()
        if err > rel_tol:
            raise ValueError(f"mixture does not equal stems+noise: rel error {err:.3g}")


@dataclass(frozen=True)
class ManifestRecord:
    """One dataset entry; paths are stored relative to the manifest file."""

    mixture_path: str
    stem_paths: Mapping[int, str]
    active_classes: tuple[int, ...]
    target_spec: TargetSpec
    enrollment_paths: Mapping[int, str]
    split: str
    noise_path: str | None = None

    def to_json(self) -> dict:
        obj = {
            "mixture_path": self.mixture_path,
            "stem_paths": {str(k): v for k, v in sorted(self.stem_paths.items())},
            "active_classes": sorted(self.active_classes),
            "target_spec": self.target_spec.to_json(),
            "enrollment_paths": {str(k): v for k, v in sorted(self.enrollment_paths.items())},
            "split": self.split,
        }
        if self.noise_path is not None:
            obj["noise_path"] = self.noise_path
        return obj

    @staticmethod
    def from_json(obj: Mapping) -> "ManifestRecord":
        return ManifestRecord(
            mixture_path=obj["mixture_path"],
            stem_paths={int(k): v for k, v in obj.get("stem_paths", {}).items()},
            active_classes=tuple(int(c) for c in obj.get("active_classes", [])),
            target_spec=TargetSpec.from_json(obj["target_spec"]),
            enrollment_paths={int(k): v for k, v in obj.get("enrollment_paths", {}).items()},
            split=obj.get("split", ""),
            noise_path=obj.get("noise_path"),
        )

    def all_class_ids(self) -> set[int]:
        ids = set(self.stem_paths) | set(self.active_classes) | set(self.enrollment_paths)
        ids.update(self.target_spec.labels)
        return ids

    def referenced_paths(self) -> list[str]:
        paths = [self.mixture_path, *self.stem_paths.values(), *self.enrollment_paths.values()]
        if self.noise_path is not None:
            paths.append(self.noise_path)
        return paths


@dataclass(frozen=True)
class Manifest:
    """Ordered collection of dataset records plus their base directory."""

    records: tuple[ManifestRecord, ...]
    base_dir: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, rel_path: str) -> Path:
        return self.base_dir / rel_path

    def with_records(self, records: Sequence[ManifestRecord]) -> "Manifest":
        return replace(self, records=tuple(records))


def load_manifest(path: str | Path, num_classes: int | None = None, check_paths: bool = True) -> Manifest:
    """Read a JSONL manifest, validating records line by line.

    Raises ManifestError naming the line on parse failure, VocabularyError if
    a class id falls outside ``num_classes``, and ManifestError for missing
    referenced files when ``check_paths`` is set.
    """
    path = Path(path)
    base = path.parent
    records: list[ManifestRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                record = ManifestRecord.from_json(obj)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if num_classes is not None:
                for cid in record.all_class_ids():
                    if not 0 <= cid < num_classes:
                        raise VocabularyError(
                            f"{path}:{lineno}: class id {cid} outside vocabulary of size {num_classes}"
                        )
            if check_paths:
                for rel in record.referenced_paths():
                    if not (base / rel).exists():
                        raise ManifestError(f"{path}:{lineno}: missing referenced file {rel}")
            records.append(record)
    return Manifest(records=tuple(records), base_dir=base)


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in manifest.records:
            fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")


class Vocabulary:
    """Ordered class-name list; index in the list is the class id."""

    def __init__(self, names: Sequence[str]):
        names = list(names)
        if len(set(names)) != len(names):
            raise VocabularyError("duplicate class names in vocabulary")
        self.names = names
        self._index = {n: i for i, n in enumerate(names)}

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.names == other.names

    def id_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise VocabularyError(f"unknown class name {name!r}") from None

    def name_of(self, class_id: int) -> str:
        if not 0 <= class_id < len(self.names):
            raise VocabularyError(f"class id {class_id} outside vocabulary of size {len(self.names)}")
        return self.names[class_id]

    def extended(self, new_names: Sequence[str]) -> "Vocabulary":
        for name in new_names:
            if name in self._index:
                raise VocabularyError(f"class name {name!r} already in vocabulary")
        return Vocabulary(self.names + list(new_names))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(n + "\n" for n in self.names), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "Vocabulary":
        lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
        return Vocabulary([ln for ln in lines if ln])
