"""Command-line interface.

Subcommands map 1:1 onto the library operations: ``train-joint``,
``export-latents``, ``train-individual``, ``train-iterative``, ``encode``,
``decode``, ``evaluate``, ``info``, plus ``report`` for summarizing a loss
log.  Every command accepts ``--config PATH`` and repeated
``--set section.key=value`` overrides; ``--seed`` flows into all stochastic
components.  Exit code is 0 on success and nonzero with a stderr diagnostic
otherwise.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import bitstream, training
from .checkpoint import StageCheckpoint
from .config import RunConfig
from .errors import SpecodecError
from .losses import LossReport
from .metrics import evaluate_corpus, format_report_table, run_external_scorer
from .pipeline import CodecPipeline


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key-value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="seed for all stochastic components")


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config, args.overrides)
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specodec",
        description="Amplitude/phase spectral audio codec with staged training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-joint", help="run the joint training stage")
    _add_common(p)
    p.add_argument("--manifest", help="JSONL data manifest")
    p.add_argument("--out", help="output checkpoint path")
    p.add_argument("--log", help="loss-report JSONL path")

    p = sub.add_parser("export-latents", help="tokenize the training set with a joint checkpoint")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="cache directory")

    p = sub.add_parser("train-individual", help="run the individual training stage")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="joint checkpoint")
    p.add_argument("--cache", required=True, help="latent cache directory")
    p.add_argument("--out", help="output checkpoint path")
    p.add_argument("--log", help="loss-report JSONL path")

    p = sub.add_parser("train-iterative", help="repeat the staged paradigm")
    _add_common(p)
    p.add_argument("--ckpt", required=True, help="starting checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--work-dir", required=True)
    p.add_argument("--no-evaluate", action="store_true")

    p = sub.add_parser("encode", help="compress a WAV file to a bitstream")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("input", help="input WAV")
    p.add_argument("output", help="output .apc bitstream")

    p = sub.add_parser("decode", help="decompress a bitstream to a WAV file")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("input", help="input .apc bitstream")
    p.add_argument("output", help="output WAV")

    p = sub.add_parser("evaluate", help="objective metrics over a manifest")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="per-utterance JSONL report path")
    p.add_argument("--decoded-dir", help="keep decoded WAVs here for external scorers")
    p.add_argument(
        "--scorer",
        help="external command run as 'CMD DECODED_DIR' after decoding "
        "(requires --decoded-dir); its stdout is printed verbatim",
    )

    p = sub.add_parser("info", help="print bitstream header fields")
    p.add_argument("input", help=".apc bitstream")

    p = sub.add_parser("report", help="summarize a loss-report log")
    p.add_argument("input", help="loss-report JSONL")
    return parser


def _cmd_train_joint(args) -> int:
    cfg = _load_config(args)
    manifest = args.manifest or cfg.paths.get("manifest")
    if manifest is None:
        raise ValueError("no manifest given (use --manifest or paths.manifest)")
    out = Path(args.out or cfg.paths.get("joint_checkpoint", "joint.pt"))
    log_path = Path(args.log) if args.log else out.with_suffix(".loss_log.jsonl")
    ckpt = training.train_joint(
        manifest,
        cfg.codec,
        cfg.train,
        signal_cfg=cfg.signal,
        loss_weights=cfg.loss,
        disc_cfg=cfg.disc,
        log_path=log_path,
    )
    ckpt.save(out)
    print(f"wrote {ckpt.stage_tag} checkpoint to {out} (loss log: {log_path})")
    return 0


def _cmd_export_latents(args) -> int:
    ckpt = StageCheckpoint.load(args.ckpt)
    cache = training.export_latents(ckpt, args.manifest, args.out)
    print(f"cached {len(cache)} utterances in {args.out} (hash {cache.checkpoint_hash[:12]})")
    return 0


def _cmd_train_individual(args) -> int:
    cfg = _load_config(args)
    joint = StageCheckpoint.load(args.ckpt)
    cache = training.LatentCache.load(args.cache)
    out = Path(args.out or cfg.paths.get("individual_checkpoint", "individual.pt"))
    log_path = Path(args.log) if args.log else out.with_suffix(".loss_log.jsonl")
    ckpt = training.train_individual(joint, cache, cfg.train, log_path=log_path)
    ckpt.save(out)
    print(f"wrote {ckpt.stage_tag} checkpoint to {out} (loss log: {log_path})")
    return 0


def _cmd_train_iterative(args) -> int:
    cfg = _load_config(args)
    start = StageCheckpoint.load(args.ckpt)
    checkpoints = training.train_iterative(
        start,
        args.manifest,
        cfg.train,
        args.iterations,
        work_dir=args.work_dir,
        evaluate=not args.no_evaluate,
    )
    for ckpt in checkpoints:
        path = Path(args.work_dir) / f"{ckpt.stage_tag.replace('/', '_')}.pt"
        ckpt.save(path)
        print(f"wrote {ckpt.stage_tag} checkpoint to {path}")
    return 0


def _cmd_encode(args) -> int:
    pipeline = CodecPipeline.from_checkpoint(args.ckpt)
    header = pipeline.encode_file(args.input, args.output)
    print(
        f"encoded {args.input} -> {args.output} "
        f"({header.latent_frames} latent frames, {header.bitrate_kbps} kbps)"
    )
    return 0


def _cmd_decode(args) -> int:
    pipeline = CodecPipeline.from_checkpoint(args.ckpt)
    samples = pipeline.decode_file(args.input, args.output)
    print(f"decoded {args.input} -> {args.output} ({samples} samples)")
    return 0


def _cmd_evaluate(args) -> int:
    if args.scorer and not args.decoded_dir:
        raise ValueError("--scorer requires --decoded-dir")
    aggregate, per_utterance = evaluate_corpus(
        args.manifest, args.ckpt, out_path=args.out, decoded_dir=args.decoded_dir
    )
    print(format_report_table(aggregate))
    if args.out:
        print(f"wrote {len(per_utterance)} per-utterance records to {args.out}")
    if args.scorer:
        print(run_external_scorer(args.scorer, args.decoded_dir), end="")
    return 0


def _cmd_info(args) -> int:
    _, header = bitstream.read_file(args.input)
    for field in dataclasses.fields(header):
        print(f"{field.name}: {getattr(header, field.name)}")
    print(f"payload_bytes: {header.payload_bytes}")
    print(f"bitrate_kbps: {header.bitrate_kbps}")
    return 0


def _cmd_report(args) -> int:
    reports = [
        LossReport.from_json_line(line)
        for line in Path(args.input).read_text().splitlines()
        if line.strip()
    ]
    if not reports:
        raise ValueError(f"no loss reports in {args.input}")
    names = list(reports[0].terms)
    print(f"{'term':>16}  {'weight':>8}  {'first':>12}  {'last':>12}  {'mean':>12}")
    for name in names:
        values = [r.terms[name] for r in reports]
        print(
            f"{name:>16}  {reports[-1].weights[name]:>8.3f}  {values[0]:>12.5f}  "
            f"{values[-1]:>12.5f}  {float(np.mean(values)):>12.5f}"
        )
    totals = [r.total for r in reports]
    print(
        f"{'total':>16}  {'':>8}  {totals[0]:>12.5f}  {totals[-1]:>12.5f}  "
        f"{float(np.mean(totals)):>12.5f}"
    )
    return 0


_COMMANDS = {
    "train-joint": _cmd_train_joint,
    "export-latents": _cmd_export_latents,
    "train-individual": _cmd_train_individual,
    "train-iterative": _cmd_train_iterative,
    "encode": _cmd_encode,
    "decode": _cmd_decode,
    "evaluate": _cmd_evaluate,
    "info": _cmd_info,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (SpecodecError, ValueError, OSError, subprocess.CalledProcessError) as exc:
        print(f"specodec {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
