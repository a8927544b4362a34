"""Mono WAV reading and writing.

Accepts 16-bit PCM and 32-bit float files; everything else (including a
sample-rate mismatch) is an error, resampling is out of scope.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile


def read_wav(path: str | Path, expected_rate: int | None = None) -> np.ndarray:
    """Load a mono WAV file as float32 samples in [-1, 1].

    Raises ValueError for non-mono data, unsupported sample formats, or a
    sample rate different from ``expected_rate``.
    """
    rate, data = wavfile.read(str(path))
    if expected_rate is not None and rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} != configured {expected_rate}")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        return data.astype(np.float32) / 32768.0
    if data.dtype == np.float32:
        return data.copy()
    raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float32 samples to a 32-bit float mono WAV file."""
    samples = np.asarray(samples, dtype=np.float32)
    if samples.ndim != 1:
        raise ValueError("expected a 1-D sample array")
    wavfile.write(str(path), sample_rate, samples)
