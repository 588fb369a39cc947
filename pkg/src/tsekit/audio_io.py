"""WAV file I/O: 16-bit PCM, mono, fixed sample rate.

Float samples map to the int16 grid via round-half-to-even scaling by 32768;
values on that grid survive a write/read round trip bitwise. Mixtures are
built from grid-aligned stems so the on-disk decomposition stays exact.
"""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

from .errors import AudioFormatError
from .types import SAMPLE_RATE, Waveform

PCM_SCALE = 32768.0
PCM_MAX = 32767
PCM_MIN = -32768


def quantize_to_grid(samples: np.ndarray) -> np.ndarray:
    """Snap float samples to exact int16-representable values (still float64)."""
    ints = np.clip(np.rint(np.asarray(samples, dtype=np.float64) * PCM_SCALE), PCM_MIN, PCM_MAX)
    return ints / PCM_SCALE


def to_int16(samples: np.ndarray) -> np.ndarray:
    ints = np.clip(np.rint(np.asarray(samples, dtype=np.float64) * PCM_SCALE), PCM_MIN, PCM_MAX)
    return ints.astype(np.int16)


def from_int16(ints: np.ndarray) -> np.ndarray:
    return ints.astype(np.float64) / PCM_SCALE


def write_wav(path: str | Path, waveform: Waveform) -> None:
    """Write mono 16-bit PCM; overwrites any existing file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = to_int16(waveform.samples)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate)
        wf.writeframes(data.tobytes())


def read_wav(path: str | Path, expect_rate: int | None = SAMPLE_RATE) -> Waveform:
    """Read mono 16-bit PCM into float64 in [-1, 1).

    Raises AudioFormatError on wrong channel count, sample width, or rate.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a readable WAV file: {exc}") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, got sample width {width}")
    if expect_rate is not None and rate != expect_rate:
        raise AudioFormatError(f"{path}: expected {expect_rate} Hz, got {rate}")
    ints = np.frombuffer(frames, dtype="<i2")
    return Waveform(from_int16(ints), sample_rate=rate)
