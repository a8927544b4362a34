#!/usr/bin/env python3
"""Generate a small synthetic corpus (WAV clips + JSONL manifest).

Clips are harmonic tones with slow amplitude envelopes plus noise, enough to
exercise the full training and evaluation stack without any external data.

    python scripts/make_toy_corpus.py out_dir --clips 10 --sample-rate 8000
"""

import argparse
from pathlib import Path

import numpy as np

from specodec.audio import write_wav
from specodec.data import ManifestEntry, write_manifest


def make_clip(rng: np.random.Generator, num_samples: int, sample_rate: int) -> np.ndarray:
    t = np.arange(num_samples) / sample_rate
    f0 = float(rng.uniform(80, 260))
    wave = np.zeros(num_samples)
    for k in range(1, 4):
        wave += (0.4 / k) * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    envelope = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.5, 2.0) * t)
    wave = wave * envelope + 0.02 * rng.standard_normal(num_samples)
    return wave.astype(np.float32)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--clips", type=int, default=10)
    parser.add_argument("--sample-rate", type=int, default=8000)
    parser.add_argument("--min-seconds", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    args.out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    entries = []
    for i in range(args.clips):
        num_samples = int(args.min_seconds * args.sample_rate) + 160 * i
        wave = make_clip(rng, num_samples, args.sample_rate)
        path = args.out_dir / f"clip{i:02d}.wav"
        write_wav(path, wave, args.sample_rate)
        entries.append(
            ManifestEntry(f"clip{i:02d}", str(path), num_samples / args.sample_rate)
        )
    manifest = args.out_dir / "manifest.jsonl"
    write_manifest(manifest, entries)
    print(f"wrote {len(entries)} clips and {manifest}")


if __name__ == "__main__":
    main()
