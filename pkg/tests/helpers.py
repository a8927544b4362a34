"""Shared toy/miniature configurations and oracle utilities for the tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from specodec.audio import write_wav
from specodec.config import CodecConfig, DiscriminatorConfig, SignalConfig, TrainConfig
from specodec.data import ManifestEntry, write_manifest

# Desk-scale configs: small enough for CPU test runs, structurally identical
# to the full 48 kHz operating point.
TOY_SIG = SignalConfig(sample_rate=8000, frame_length=64, frame_shift=16, fft_size=128)
TOY_CODEC = CodecConfig(
    num_blocks=2,
    kernel_size=7,
    channel_size=32,
    latent_dim=8,
    down_up_ratio=8,
    codebook_size=64,
    num_quantizers=2,
)
TOY_DISC = DiscriminatorConfig(
    periods=(2, 3),
    resolutions=((128, 32), (64, 16)),
    period_base_channels=4,
    period_max_channels=16,
    resolution_channels=4,
)

# Miniature model for gradient checks: 4 spectral bins, 2 frames, width 8.
MINI_SIG = SignalConfig(sample_rate=48, frame_length=6, frame_shift=3, fft_size=6)
MINI_CODEC = CodecConfig(
    num_blocks=1,
    kernel_size=7,
    channel_size=8,
    latent_dim=4,
    down_up_ratio=2,
    codebook_size=8,
    num_quantizers=2,
)


def toy_train_cfg(steps: int, seed: int = 7, **overrides) -> TrainConfig:
    defaults = dict(
        crop_length=2048,
        batch_size=4,
        steps_per_stage=steps,
        seed=seed,
        dead_code_steps=50,
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


def make_clip(rng: np.random.Generator, num_samples: int, sample_rate: int) -> np.ndarray:
    """Deterministic utterance-like clip: decaying harmonics plus noise."""
    t = np.arange(num_samples) / sample_rate
    f0 = float(rng.uniform(80, 260))
    wave = np.zeros(num_samples)
    for k in range(1, 4):
        wave += (0.4 / k) * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    envelope = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t)
    wave = wave * envelope + 0.02 * rng.standard_normal(num_samples)
    return wave.astype(np.float32)


def build_toy_corpus(
    directory: Path,
    sig: SignalConfig = TOY_SIG,
    num_clips: int = 10,
    min_samples: int = 4000,
    seed: int = 0,
) -> Path:
    """Write clips and a manifest; returns the manifest path."""
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(num_clips):
        n = min_samples + 160 * i
        wave = make_clip(rng, n, sig.sample_rate)
        path = directory / f"clip{i:02d}.wav"
        write_wav(path, wave, sig.sample_rate)
        entries.append(ManifestEntry(f"clip{i:02d}", str(path), n / sig.sample_rate))
    manifest = directory / "manifest.jsonl"
    write_manifest(manifest, entries)
    return manifest


def central_difference(fn, x: torch.Tensor, index: tuple, h: float = 1e-6) -> float:
    """Two-sided finite-difference derivative of scalar ``fn`` at one coordinate."""
    plus = x.clone()
    plus[index] += h
    minus = x.clone()
    minus[index] -= h
    return (float(fn(plus).detach()) - float(fn(minus).detach())) / (2 * h)


def max_relative_grad_error(
    fn,
    x: torch.Tensor,
    num_coords: int | None = None,
    h: float = 1e-6,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative mismatch between autograd and central differences.

    ``x`` must be float64; coordinates are sampled without replacement when
    ``num_coords`` is given, otherwise all are checked.
    """
    assert x.dtype == torch.float64, "finite differences need float64"
    leaf = x.clone().requires_grad_(True)
    fn(leaf).backward()
    analytic = leaf.grad.detach()

    flat_indices = np.arange(x.numel())
    if num_coords is not None and num_coords < x.numel():
        rng = rng or np.random.default_rng(0)
        flat_indices = rng.choice(flat_indices, size=num_coords, replace=False)

    scale = max(float(analytic.abs().max()), 1e-6)
    worst = 0.0
    for flat in flat_indices:
        index = np.unravel_index(int(flat), x.shape)
        numeric = central_difference(fn, x.detach(), index, h=h)
        err = abs(float(analytic[index]) - numeric) / max(
            abs(numeric), abs(float(analytic[index])), 1e-3 * scale
        )
        worst = max(worst, err)
    return worst
