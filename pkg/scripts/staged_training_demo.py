#!/usr/bin/env python3
"""Run the full staged paradigm on a toy corpus and compare both stages.

Joint stage -> latent export -> individual stage, then objective metrics for
each checkpoint over the same corpus.  Everything runs on CPU in a few
minutes with the default toy settings.

    python scripts/make_toy_corpus.py /tmp/toy
    python scripts/staged_training_demo.py /tmp/toy/manifest.jsonl /tmp/toy/run --steps 500
"""

import argparse
from pathlib import Path

import torch

from specodec import training
from specodec.config import CodecConfig, DiscriminatorConfig, SignalConfig, TrainConfig
from specodec.metrics import evaluate_corpus, format_report_table

TOY_SIG = SignalConfig(sample_rate=8000, frame_length=64, frame_shift=16, fft_size=128)
TOY_CODEC = CodecConfig(
    num_blocks=2, channel_size=32, latent_dim=8, codebook_size=64, num_quantizers=2
)
TOY_DISC = DiscriminatorConfig(
    periods=(2, 3),
    resolutions=((128, 32), (64, 16)),
    period_base_channels=4,
    period_max_channels=16,
    resolution_channels=4,
)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("manifest", type=Path)
    parser.add_argument("work_dir", type=Path)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    torch.set_num_threads(1)
    args.work_dir.mkdir(parents=True, exist_ok=True)
    train_cfg = TrainConfig(
        crop_length=2048,
        batch_size=4,
        steps_per_stage=args.steps,
        seed=args.seed,
        dead_code_steps=50,
    )

    print(f"== joint stage ({args.steps} steps) ==")
    joint = training.train_joint(
        args.manifest,
        TOY_CODEC,
        train_cfg,
        signal_cfg=TOY_SIG,
        disc_cfg=TOY_DISC,
        log_path=args.work_dir / "loss_log_joint.jsonl",
    )
    joint.save(args.work_dir / "joint.pt")

    print("== exporting latents ==")
    cache = training.export_latents(joint, args.manifest, args.work_dir / "cache")
    print(f"cached {len(cache)} utterances (hash {cache.checkpoint_hash[:12]})")

    print(f"== individual stage ({args.steps} steps) ==")
    individual = training.train_individual(
        joint,
        cache,
        train_cfg,
        log_path=args.work_dir / "loss_log_individual.jsonl",
    )
    individual.save(args.work_dir / "individual.pt")

    for name, ckpt in (("joint", joint), ("individual", individual)):
        aggregate, _ = evaluate_corpus(
            args.manifest, ckpt, out_path=args.work_dir / f"metrics_{name}.jsonl"
        )
        print(f"\n-- {name} checkpoint --")
        print(format_report_table(aggregate))


if __name__ == "__main__":
    main()
