"""Procedural sound-scene generation with ground-truth stems.

Classes are synthetic event types in disjoint frequency bands (tones, linear
chirps, amplitude-modulated tones, noise bursts), so they stay acoustically
separable by construction. Each class owns a finite pool of isolated samples
used both as scene events and as enrollment recordings.

Mixtures are assembled on the 16-bit PCM grid: every stem and the noise are
quantized first and the mixture is their exact sum, so the decomposition
survives the trip through WAV files bit for bit.

Determinism: a dataset is fully determined by (seed, config). Every record
draws from its own (seed, split, index) sub-stream and the class pools from
(bank_seed, class name, variant).
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import quantize_to_grid, write_wav
from .config import SimulateConfig
from .errors import ConfigError
from .types import (
    SAMPLE_RATE,
    Manifest,
    ManifestRecord,
    MixtureExample,
    TargetSpec,
    Vocabulary,
    Waveform,
    substream_rng,
    write_manifest,
)

logger = logging.getLogger(__name__)

KINDS = ("tone", "chirp", "am", "noise")
BAND_HALF_WIDTH_HZ = 80.0
SOURCE_RMS = 0.1
PEAK_HEADROOM = 0.99


def default_class_names(count: int = 12, start_hz: float = 250.0, spacing_hz: float = 230.0) -> list[str]:
    """Band-disjoint vocabulary: kind cycles tone/chirp/am/noise up the spectrum."""
    return [f"{KINDS[i % len(KINDS)]}_{int(start_hz + i * spacing_hz)}" for i in range(count)]


def parse_class_name(name: str) -> tuple[str, float]:
    kind, _, center = name.rpartition("_")
    if kind not in KINDS:
        raise ConfigError(f"class name {name!r} must look like '<kind>_<center_hz>' with kind in {KINDS}")
    try:
        return kind, float(center)
    except ValueError:
        raise ConfigError(f"class name {name!r} has a non-numeric center frequency") from None


def _fade(samples: np.ndarray, sample_rate: int) -> np.ndarray:
    n_fade = min(int(0.02 * sample_rate), len(samples) // 4)
    if n_fade > 0:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(n_fade) / n_fade)
        samples[:n_fade] *= ramp
        samples[-n_fade:] *= ramp[::-1]
    return samples


def _render_source(kind: str, center_hz: float, duration_s: float, rng: np.random.Generator,
                   sample_rate: int) -> np.ndarray:
    n = max(int(round(duration_s * sample_rate)), 1)
    t = np.arange(n) / sample_rate
    phase = rng.uniform(0, 2 * np.pi)
    if kind == "tone":
        freq = center_hz + rng.uniform(-60.0, 60.0)
        x = np.sin(2 * np.pi * freq * t + phase)
    elif kind == "chirp":
        f0, f1 = center_hz - BAND_HALF_WIDTH_HZ, center_hz + BAND_HALF_WIDTH_HZ
        if rng.random() < 0.5:
            f0, f1 = f1, f0
        x = np.sin(2 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2 * duration_s)) + phase)
    elif kind == "am":
        freq = center_hz + rng.uniform(-40.0, 40.0)
        rate = rng.uniform(3.0, 9.0)
        depth = rng.uniform(0.5, 0.9)
        envelope = 1.0 + depth * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        x = envelope * np.sin(2 * np.pi * freq * t + phase)
    elif kind == "noise":
        white = rng.standard_normal(n)
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        band = (freqs >= center_hz - BAND_HALF_WIDTH_HZ) & (freqs <= center_hz + BAND_HALF_WIDTH_HZ)
        x = np.fft.irfft(spectrum * band, n)
    else:
        raise ConfigError(f"unknown class kind {kind!r}")
    x = _fade(x, sample_rate)
    rms = float(np.sqrt(np.mean(x**2)))
    if rms > 0:
        x = x * (SOURCE_RMS / rms)
    return quantize_to_grid(x)


class ToyClassBank:
    """Finite per-class pools of isolated synthetic samples.

    A pool member is addressed by (class id, pool index); content depends
    only on (bank seed, class name, pool index), never on vocabulary order.
    """

    def __init__(self, class_names, pool_size: int = 10,
                 duration_range: tuple[float, float] = (2.0, 5.0),
                 sample_rate: int = SAMPLE_RATE, seed: int = 7):
        self.class_names = list(class_names)
        self.pool_size = pool_size
        self.duration_range = duration_range
        self.sample_rate = sample_rate
        self.seed = seed
        self._cache: dict[tuple[int, int], Waveform] = {}

    def source(self, class_id: int, pool_index: int) -> Waveform:
        if not 0 <= pool_index < self.pool_size:
            raise ValueError(f"pool index {pool_index} outside pool of size {self.pool_size}")
        key = (class_id, pool_index)
        if key not in self._cache:
            name = self.class_names[class_id]
            kind, center = parse_class_name(name)
            rng = substream_rng(self.seed, zlib.crc32(name.encode()), pool_index)
            duration = rng.uniform(*self.duration_range)
            self._cache[key] = Waveform(
                _render_source(kind, center, duration, rng, self.sample_rate), self.sample_rate
            )
        return self._cache[key]


def sample_enrollment(bank: ToyClassBank, class_id: int, rng: np.random.Generator,
                      exclude: set[int] | None = None) -> tuple[int, Waveform]:
    """Draw a pool member not used as a source in the mixture at hand."""
    exclude = exclude or set()
    eligible = [k for k in range(bank.pool_size) if k not in exclude]
    if not eligible:
        raise ValueError(f"enrollment pool exhausted for class {class_id}")
    pick = eligible[int(rng.integers(len(eligible)))]
    return pick, bank.source(class_id, pick)


@dataclass(frozen=True)
class EventSpec:
    """One placed event: which pool member, where, and how loud."""

    class_id: int
    pool_index: int
    onset_s: float
    gain_db: float


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one mixture: events, noise level, and the extraction target."""

    duration_s: float
    events: tuple[EventSpec, ...]
    snr_db: float
    target_spec: TargetSpec

    @property
    def event_classes(self) -> frozenset[int]:
        return frozenset(e.class_id for e in self.events)


def sample_scene_spec(rng: np.random.Generator, config: SimulateConfig,
                      bank: ToyClassBank) -> SceneSpec:
    """Draw scene classes without replacement, place events, pick the target.

    With probability inactive_fraction the (single) target class is drawn
    from outside the scene, so the correct output is silence.
    """
    all_ids = list(range(len(config.classes)))
    num_events = int(rng.integers(config.events_min, config.events_max + 1))
    forced = config.classes.index(config.target_class) if config.target_class else None
    if forced is not None:
        others = [i for i in all_ids if i != forced]
        chosen = [forced] + list(rng.choice(others, size=num_events - 1, replace=False))
    else:
        chosen = list(rng.choice(all_ids, size=num_events, replace=False))

    lo, hi = config.pool_range if config.pool_range else (0, config.pool_size)
    events = []
    for class_id in chosen:
        pool_index = int(rng.integers(lo, hi))
        duration = bank.source(class_id, pool_index).duration_s
        max_onset = max(config.duration_s - duration, 0.0)
        events.append(EventSpec(
            class_id=int(class_id),
            pool_index=pool_index,
            onset_s=float(rng.uniform(0.0, max_onset)),
            gain_db=float(rng.uniform(*config.gain_db)),
        ))

    snr_db = float(rng.uniform(*config.snr_db))
    if forced is not None:
        labels, inactive = [forced], False
    elif config.num_targets == 1:
        if rng.random() < config.inactive_fraction:
            absent = [i for i in all_ids if i not in chosen]
            if not absent:
                raise ConfigError("inactive targets need more classes than events per scene")
            labels, inactive = [int(rng.choice(absent))], True
        else:
            labels, inactive = [int(rng.choice(chosen))], False
    else:
        labels = [int(i) for i in rng.choice(chosen, size=config.num_targets, replace=False)]
        inactive = False
    return SceneSpec(
        duration_s=config.duration_s,
        events=tuple(events),
        snr_db=snr_db,
        target_spec=TargetSpec(labels, inactive),
    )


def _lowpass_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    # moving-average smoothing stands in for a stationary low-passed ambience
    white = rng.standard_normal(n + 7)
    return np.convolve(white, np.ones(8) / 8.0, mode="valid")


def synthesize_mixture(spec: SceneSpec, rng: np.random.Generator, bank: ToyClassBank,
                       ) -> tuple[MixtureExample, dict[int, set[int]]]:
    """Realize a scene: place events into per-class stems, scale noise to the
    requested SNR, and sum everything on the PCM grid.

    Returns the example plus the pool indices consumed per class, so
    enrollment sampling can exclude them.
    """
    sample_rate = bank.sample_rate
    n = int(round(spec.duration_s * sample_rate))
    stems: dict[int, np.ndarray] = {}
    used: dict[int, set[int]] = {}
    for event in spec.events:
        source = bank.source(event.class_id, event.pool_index)
        start = int(round(event.onset_s * sample_rate))
        seg = source.samples * 10.0 ** (event.gain_db / 20.0)
        stem = stems.setdefault(event.class_id, np.zeros(n))
        end = min(start + len(seg), n)
        stem[start:end] += seg[: end - start]
        used.setdefault(event.class_id, set()).add(event.pool_index)

    noise = _lowpass_noise(n, rng)
    stem_sum = np.sum(list(stems.values()), axis=0) if stems else np.zeros(n)
    stem_pow = float(np.dot(stem_sum, stem_sum))
    noise_pow = float(np.dot(noise, noise))
    if stem_pow > 0:
        noise = noise * np.sqrt(stem_pow / (noise_pow * 10.0 ** (spec.snr_db / 10.0)))
    else:
        noise = noise * (SOURCE_RMS / np.sqrt(noise_pow / n))

    peak = float(np.max(np.abs(stem_sum + noise), initial=0.0))
    if peak > PEAK_HEADROOM:
        # common factor preserves the realized SNR exactly
        scale = PEAK_HEADROOM / peak
        logger.warning("scene peak %.3f exceeds headroom; renormalizing by %.3f", peak, scale)
        stems = {c: s * scale for c, s in stems.items()}
        noise = noise * scale

    grid_stems = {c: Waveform(quantize_to_grid(s), sample_rate) for c, s in stems.items()}
    grid_noise = Waveform(quantize_to_grid(noise), sample_rate)
    total = grid_noise.samples.copy()
    for stem in grid_stems.values():
        total += stem.samples
    for label in spec.target_spec.labels:
        if label not in grid_stems:
            grid_stems[label] = Waveform.zeros(0, sample_rate)
    example = MixtureExample(
        mixture=Waveform(total, sample_rate),
        stems=grid_stems,
        noise=grid_noise,
        target_spec=spec.target_spec,
        duration_s=spec.duration_s,
    )
    return example, used


_SPLIT_SALT = 0x5EED


def record_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return substream_rng(seed, _SPLIT_SALT, zlib.crc32(split.encode()), index)


def materialize_dataset(config: SimulateConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write WAV files, enrollment pools, vocabulary, and JSONL manifests.

    Layout: <out>/vocab.txt, <out>/enroll/<class>/<k>.wav,
    <out>/audio/<split>/<index>_{mix,noise,stem<c>}.wav, <out>/<split>.jsonl.
    Same (seed, config) regenerates byte-identical content.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bank = ToyClassBank(
        config.classes, pool_size=config.pool_size,
        duration_range=config.event_duration_s, seed=config.bank_seed,
    )
    vocab = Vocabulary(list(config.classes))
    vocab.save(out_dir / "vocab.txt")

    enroll_paths: dict[tuple[int, int], str] = {}
    for class_id, name in enumerate(config.classes):
        for k in range(config.pool_size):
            rel = f"enroll/{name}/{k}.wav"
            write_wav(out_dir / rel, bank.source(class_id, k))
            enroll_paths[(class_id, k)] = rel

    manifest_paths: dict[str, Path] = {}
    for split, count in config.splits.items():
        records = []
        for index in range(count):
            rng = record_rng(config.seed, split, index)
            spec = sample_scene_spec(rng, config, bank)
            example, used = synthesize_mixture(spec, rng, bank)
            example.validate()
            prefix = f"audio/{split}/{index:05d}"
            write_wav(out_dir / f"{prefix}_mix.wav", example.mixture)
            write_wav(out_dir / f"{prefix}_noise.wav", example.noise)
            stem_paths = {}
            for class_id, stem in example.stems.items():
                if len(stem) == 0:
                    continue
                stem_paths[class_id] = f"{prefix}_stem{class_id}.wav"
                write_wav(out_dir / stem_paths[class_id], stem)
            # cover every class so any of them can serve as an evaluation
            # clue (including inactive probes), never reusing a source that
            # is already in the mixture
            enrollment = {}
            for class_id in range(len(config.classes)):
                pick, _ = sample_enrollment(bank, class_id, rng, exclude=used.get(class_id))
                enrollment[class_id] = enroll_paths[(class_id, pick)]
            records.append(ManifestRecord(
                mixture_path=f"{prefix}_mix.wav",
                stem_paths=stem_paths,
                active_classes=tuple(sorted(spec.event_classes)),
                target_spec=spec.target_spec,
                enrollment_paths=enrollment,
                split=split,
                noise_path=f"{prefix}_noise.wav",
            ))
        manifest_paths[split] = out_dir / f"{split}.jsonl"
        write_manifest(Manifest(tuple(records), base_dir=out_dir), manifest_paths[split])
        logger.info("wrote %d %s records to %s", count, split, manifest_paths[split])
    return manifest_paths
