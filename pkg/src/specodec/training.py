"""Two-stage joint/individual training orchestration.

Joint stage: encoder, quantizer, decoder, and discriminators optimize
together on spectral, quantization, and adversarial objectives.  Individual
stage: the encoder and quantizer are frozen, their quantized latents for the
whole training set are exported once to a cache, the decoder and
discriminators are reinitialized from the seed and trained from scratch on
the cached latents, and the quantization loss is discarded (its weight is
recorded as zero in every step report).  The optional iterative mode repeats
joint fine-tune -> export -> individual, tagging checkpoints ``iteration-k``.

Both stages use decoupled-weight-decay Adam with the configured betas and an
exponential per-epoch learning-rate decay, restarted at the start of each
stage.  All randomness (crop positions, data order, reinitialization) is
derived from ``TrainConfig.seed``, so repeated runs are bit-identical.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import frontend
from .checkpoint import FROZEN_IN_INDIVIDUAL, StageCheckpoint
from .config import (
    CodecConfig,
    DiscriminatorConfig,
    LossWeights,
    SignalConfig,
    TrainConfig,
)
from .data import ManifestEntry, load_clips, read_manifest
from .discriminators import DiscriminatorBank
from .errors import CacheMismatchError
from .losses import (
    LossReport,
    adversarial_terms,
    quantization_loss,
    spectral_losses_batch,
    term_weights,
)
from .metrics import evaluate_corpus
from .model import CodecModel, Decoder, _init_weights
from .pipeline import CodecPipeline
from .quantizer import TokenSequence, dequantize

log = logging.getLogger(__name__)

CACHE_INDEX = "index.json"
CACHE_FORMAT_VERSION = 1


def latent_provider_hash(ckpt: StageCheckpoint) -> str:
    """Hash binding a latent cache to the producing encoder and quantizer."""
    config_blob = json.dumps(
        {
            "signal": dataclasses.asdict(ckpt.signal_cfg),
            "codec": dataclasses.asdict(ckpt.codec_cfg),
        },
        sort_keys=True,
    )
    import hashlib

    digest = hashlib.sha256()
    digest.update(ckpt.encoder_quantizer_hash().encode())
    digest.update(config_blob.encode())
    return digest.hexdigest()


@dataclass(frozen=True)
class CacheEntry:
    utterance_id: str
    token_file: str
    latent_frames: int
    original_samples: int
    audio_path: str


@dataclass
class LatentCache:
    """Directory of per-utterance token files plus an index bound to a checkpoint."""

    root: Path
    checkpoint_hash: str
    entries: dict

    @classmethod
    def load(cls, root: str | Path) -> "LatentCache":
        root = Path(root)
        index = json.loads((root / CACHE_INDEX).read_text())
        if index.get("format_version") != CACHE_FORMAT_VERSION:
            raise ValueError(f"unsupported cache format in {root}")
        entries = {
            utt_id: CacheEntry(utterance_id=utt_id, **record)
            for utt_id, record in index["entries"].items()
        }
        return cls(root=root, checkpoint_hash=index["checkpoint_hash"], entries=entries)

    def tokens(self, utterance_id: str) -> TokenSequence:
        entry = self.entries[utterance_id]
        values = np.load(self.root / entry.token_file)
        return TokenSequence(torch.from_numpy(values.astype(np.int64)))

    def __len__(self) -> int:
        return len(self.entries)


def export_latents(
    ckpt: StageCheckpoint,
    manifest_path: str | Path,
    cache_dir: str | Path,
) -> LatentCache:
    """Tokenize every manifest utterance with the checkpoint's fixed encoder.

    Tokens are computed in evaluation mode, one ``.npy`` file per utterance,
    and the index records the producing-checkpoint hash.
    """
    if ckpt.stage != "joint":
        raise ValueError(f"latents are exported from a joint checkpoint, got {ckpt.stage_tag}")
    entries = read_manifest(manifest_path)
    if not entries:
        raise ValueError(f"empty manifest {manifest_path}")

    cache_dir = Path(cache_dir)
    (cache_dir / "tokens").mkdir(parents=True, exist_ok=True)
    pipeline = CodecPipeline.from_checkpoint(ckpt)

    index_entries = {}
    for entry in entries:
        wave = np.asarray(
            load_clips([entry], ckpt.signal_cfg.sample_rate)[entry.utterance_id]
        )
        tokens, original_samples = pipeline.compress(wave)
        token_file = f"tokens/{entry.utterance_id}.npy"
        np.save(cache_dir / token_file, tokens.indices.numpy().astype(np.int32))
        index_entries[entry.utterance_id] = {
            "token_file": token_file,
            "latent_frames": tokens.num_frames,
            "original_samples": original_samples,
            "audio_path": entry.audio_path,
        }

    cache_hash = latent_provider_hash(ckpt)
    index = {
        "format_version": CACHE_FORMAT_VERSION,
        "checkpoint_hash": cache_hash,
        "entries": index_entries,
    }
    (cache_dir / CACHE_INDEX).write_text(json.dumps(index, sort_keys=True, indent=1))
    return LatentCache.load(cache_dir)


class _ReportWriter:
    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self.reports: list[LossReport] = []
        self._handle = open(self.path, "w") if self.path is not None else None

    def append(self, report: LossReport) -> None:
        self.reports.append(report)
        if self._handle is not None:
            self._handle.write(report.to_json_line() + "\n")
            self._handle.flush()

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()


def _make_optimizers(
    gen_params, disc_params, train_cfg: TrainConfig
) -> tuple[torch.optim.Optimizer, torch.optim.Optimizer]:
    betas = (train_cfg.beta1, train_cfg.beta2)
    opt_g = torch.optim.AdamW(
        gen_params, lr=train_cfg.initial_lr, betas=betas, weight_decay=train_cfg.weight_decay
    )
    opt_d = torch.optim.AdamW(
        disc_params, lr=train_cfg.initial_lr, betas=betas, weight_decay=train_cfg.weight_decay
    )
    return opt_g, opt_d


def _clip(params, max_norm: float) -> None:
    if max_norm > 0:
        torch.nn.utils.clip_grad_norm_(params, max_norm)


def _adversarial_update(
    discriminator: DiscriminatorBank,
    opt_d: torch.optim.Optimizer,
    wave_real: torch.Tensor,
    wave_fake: torch.Tensor,
    grad_clip: float,
) -> float:
    real_out = discriminator(wave_real)
    fake_out = discriminator(wave_fake.detach())
    _, disc_loss, _ = adversarial_terms(real_out, fake_out)
    opt_d.zero_grad()
    disc_loss.backward()
    _clip([p for g in opt_d.param_groups for p in g["params"]], grad_clip)
    opt_d.step()
    return float(disc_loss.detach())


def _generator_terms(
    discriminator: DiscriminatorBank,
    wave_real: torch.Tensor,
    wave_fake: torch.Tensor,
    pred_la: torch.Tensor,
    pred_ph: torch.Tensor,
    target_la: torch.Tensor,
    target_ph: torch.Tensor,
    quant_term: torch.Tensor,
    mel_weights: torch.Tensor,
) -> dict:
    amp, phase, mel, cplx = spectral_losses_batch(
        pred_la.transpose(1, 2),
        pred_ph.transpose(1, 2),
        target_la.transpose(1, 2),
        target_ph.transpose(1, 2),
        mel_weights,
    )
    gen_adv, _, fm = adversarial_terms(discriminator(wave_real), discriminator(wave_fake))
    return {
        "amplitude": amp,
        "phase": phase,
        "mel": mel,
        "complex": cplx,
        "quantization": quant_term,
        "adversarial": gen_adv,
        "feature_matching": fm,
    }


def _apply_generator_update(
    terms: dict,
    weights_eff: dict,
    opt_g: torch.optim.Optimizer,
    grad_clip: float,
) -> None:
    total = sum(weights_eff[name] * terms[name] for name in terms)
    opt_g.zero_grad()
    total.backward()
    _clip([p for g in opt_g.param_groups for p in g["params"]], grad_clip)
    opt_g.step()


def _checkpoint_from(
    stage: str,
    iteration: int,
    generator: CodecModel,
    discriminator: DiscriminatorBank,
    opt_g,
    opt_d,
    signal_cfg,
    codec_cfg,
    train_cfg,
    loss_weights,
    disc_cfg,
) -> StageCheckpoint:
    return StageCheckpoint(
        stage=stage,
        iteration=iteration,
        seed=train_cfg.seed,
        frozen_manifest=FROZEN_IN_INDIVIDUAL if stage == "individual" else (),
        signal_cfg=signal_cfg,
        codec_cfg=codec_cfg,
        train_cfg=train_cfg,
        loss_weights=loss_weights,
        disc_cfg=disc_cfg,
        generator_state={k: v.detach().clone() for k, v in generator.state_dict().items()},
        discriminator_state={
            k: v.detach().clone() for k, v in discriminator.state_dict().items()
        },
        opt_g_state=opt_g.state_dict(),
        opt_d_state=opt_d.state_dict(),
    )


def train_joint(
    manifest_path: str | Path,
    codec_cfg: CodecConfig,
    train_cfg: TrainConfig,
    signal_cfg: SignalConfig | None = None,
    loss_weights: LossWeights | None = None,
    disc_cfg: DiscriminatorConfig | None = None,
    log_path: str | Path | None = None,
    start: StageCheckpoint | None = None,
    iteration: int = 0,
) -> StageCheckpoint:
    """Joint optimization of encoder, quantizer, decoder, and discriminators.

    ``start`` continues from an existing checkpoint's parameters (used by
    the iterative mode); otherwise everything initializes from the seed.
    """
    signal_cfg = signal_cfg or SignalConfig()
    loss_weights = loss_weights or LossWeights()
    disc_cfg = disc_cfg or DiscriminatorConfig()
    if train_cfg.crop_length % signal_cfg.frame_shift != 0:
        raise ValueError("crop_length must be a multiple of frame_shift")

    entries = read_manifest(manifest_path)
    if not entries:
        raise ValueError(f"empty manifest {manifest_path}")

    torch.manual_seed(train_cfg.seed)
    if start is not None:
        generator = start.build_generator()
        discriminator = start.build_discriminator()
    else:
        generator = CodecModel(
            codec_cfg,
            signal_cfg,
            ema_decay=train_cfg.ema_decay,
            dead_code_steps=train_cfg.dead_code_steps,
        )
        discriminator = DiscriminatorBank(disc_cfg)

    clips = load_clips(entries, signal_cfg.sample_rate)
    usable = []
    for entry in entries:
        if len(clips[entry.utterance_id]) >= train_cfg.crop_length:
            usable.append(entry.utterance_id)
        else:
            log.warning(
                "skipping %s: %d samples < crop_length %d",
                entry.utterance_id,
                len(clips[entry.utterance_id]),
                train_cfg.crop_length,
            )
    if not usable:
        raise ValueError("every clip is shorter than crop_length; nothing to train on")

    opt_g, opt_d = _make_optimizers(
        generator.parameters(), discriminator.parameters(), train_cfg
    )
    sched_g = torch.optim.lr_scheduler.ExponentialLR(opt_g, train_cfg.lr_decay_per_epoch)
    sched_d = torch.optim.lr_scheduler.ExponentialLR(opt_d, train_cfg.lr_decay_per_epoch)
    mel_weights = frontend.mel_filterbank(signal_cfg)
    weights_eff = term_weights(loss_weights)
    rng = np.random.default_rng(train_cfg.seed)
    writer = _ReportWriter(log_path)

    generator.train()
    discriminator.train()
    step = 0
    epoch = 0
    try:
        while step < train_cfg.steps_per_stage:
            order = rng.permutation(usable)
            for offset in range(0, len(order), train_cfg.batch_size):
                if step >= train_cfg.steps_per_stage:
                    break
                batch_ids = order[offset : offset + train_cfg.batch_size]
                waves = []
                for utt_id in batch_ids:
                    clip = clips[utt_id]
                    at = rng.integers(0, len(clip) - train_cfg.crop_length + 1)
                    waves.append(clip[at : at + train_cfg.crop_length])
                wave_real = torch.from_numpy(np.stack(waves))

                target_la, target_ph = frontend.analyze_batch(wave_real, signal_cfg)
                padded_la, orig_frames = frontend.pad_frames_to_multiple(
                    target_la, codec_cfg.down_up_ratio
                )
                padded_ph, _ = frontend.pad_frames_to_multiple(
                    target_ph, codec_cfg.down_up_ratio
                )
                out = generator(padded_la, padded_ph)
                pred_la = out.log_amplitude[..., :orig_frames]
                pred_ph = out.phase[..., :orig_frames]
                wave_fake = frontend.synthesize_batch(pred_la, pred_ph, signal_cfg)

                disc_loss = _adversarial_update(
                    discriminator, opt_d, wave_real, wave_fake, train_cfg.grad_clip
                )
                terms = _generator_terms(
                    discriminator,
                    wave_real,
                    wave_fake,
                    pred_la,
                    pred_ph,
                    target_la,
                    target_ph,
                    quantization_loss(out.stage_inputs, out.stage_outputs),
                    mel_weights,
                )
                _apply_generator_update(terms, weights_eff, opt_g, train_cfg.grad_clip)

                writer.append(
                    LossReport.build(
                        {name: float(value.detach() if hasattr(value, 'detach') else value)
                         for name, value in terms.items()},
                        weights_eff,
                        extras={
                            "stage": "joint",
                            "iteration": iteration,
                            "step": step,
                            "epoch": epoch,
                            "lr": opt_g.param_groups[0]["lr"],
                            "disc_loss": disc_loss,
                        },
                    )
                )
                step += 1
            else:
                epoch += 1
                sched_g.step()
                sched_d.step()
                continue
            break  # steps_per_stage reached mid-epoch
    finally:
        writer.close()

    return _checkpoint_from(
        "joint",
        iteration,
        generator,
        discriminator,
        opt_g,
        opt_d,
        signal_cfg,
        codec_cfg,
        train_cfg,
        loss_weights,
        disc_cfg,
    )


def train_individual(
    joint_ckpt: StageCheckpoint,
    cache: LatentCache,
    train_cfg: TrainConfig,
    log_path: str | Path | None = None,
    iteration: int = 0,
) -> StageCheckpoint:
    """Retrain decoder and discriminators from scratch on cached latents.

    The encoder and quantizer are copied bit-exactly from ``joint_ckpt`` and
    excluded from the optimizer; the quantization loss is discarded (weight
    recorded as 0 in every report).  A cache produced by a different
    checkpoint raises :class:`CacheMismatchError` rather than recomputing.
    """
    expected_hash = latent_provider_hash(joint_ckpt)
    if cache.checkpoint_hash != expected_hash:
        raise CacheMismatchError(
            f"cache was produced by {cache.checkpoint_hash[:12]}..., "
            f"checkpoint is {expected_hash[:12]}..."
        )

    signal_cfg = joint_ckpt.signal_cfg
    codec_cfg = joint_ckpt.codec_cfg
    disc_cfg = joint_ckpt.disc_cfg
    loss_weights = joint_ckpt.loss_weights.for_individual_stage()
    if train_cfg.crop_length % signal_cfg.frame_shift != 0:
        raise ValueError("crop_length must be a multiple of frame_shift")

    # Fresh decoder and discriminators from the stage seed; frozen modules
    # keep the joint parameters bit-exactly.
    torch.manual_seed(train_cfg.seed + 1)
    generator = joint_ckpt.build_generator()
    generator.decoder = Decoder(codec_cfg, signal_cfg)
    generator.decoder.apply(_init_weights)
    discriminator = DiscriminatorBank(disc_cfg)

    for name, parameter in generator.named_parameters():
        parameter.requires_grad_(name.startswith("decoder."))
    generator.encoder.eval()
    generator.quantizer.eval()
    generator.decoder.train()
    discriminator.train()

    opt_g, opt_d = _make_optimizers(
        generator.decoder.parameters(), discriminator.parameters(), train_cfg
    )
    sched_g = torch.optim.lr_scheduler.ExponentialLR(opt_g, train_cfg.lr_decay_per_epoch)
    sched_d = torch.optim.lr_scheduler.ExponentialLR(opt_d, train_cfg.lr_decay_per_epoch)

    ratio = codec_cfg.down_up_ratio
    shift = signal_cfg.frame_shift
    crop_frames = -(-train_cfg.crop_length // shift)
    crop_latent = -(-crop_frames // ratio)
    window_samples = crop_latent * ratio * shift

    books = generator.codebooks
    entries = list(cache.entries.values())
    clips = {
        e.utterance_id: torch.from_numpy(
            np.asarray(load_clips(
                [ManifestEntry(e.utterance_id, e.audio_path, 0.0)],
                signal_cfg.sample_rate,
            )[e.utterance_id])
        )
        for e in entries
    }
    usable = []
    for entry in entries:
        if entry.original_samples >= window_samples:
            usable.append(entry.utterance_id)
        else:
            log.warning(
                "skipping %s: %d samples < latent-aligned window %d",
                entry.utterance_id,
                entry.original_samples,
                window_samples,
            )
    if not usable:
        raise ValueError("every cached utterance is shorter than the training window")
    tokens_by_id = {utt_id: cache.tokens(utt_id) for utt_id in usable}

    mel_weights = frontend.mel_filterbank(signal_cfg)
    weights_eff = term_weights(loss_weights)
    rng = np.random.default_rng(train_cfg.seed + 1)
    writer = _ReportWriter(log_path)

    step = 0
    epoch = 0
    try:
        while step < train_cfg.steps_per_stage:
            order = rng.permutation(usable)
            for offset in range(0, len(order), train_cfg.batch_size):
                if step >= train_cfg.steps_per_stage:
                    break
                batch_ids = order[offset : offset + train_cfg.batch_size]
                latents = []
                waves = []
                for utt_id in batch_ids:
                    entry = cache.entries[utt_id]
                    max_start = (entry.original_samples - window_samples) // (ratio * shift)
                    start_lat = int(rng.integers(0, max_start + 1))
                    window = tokens_by_id[utt_id].indices[
                        start_lat : start_lat + crop_latent
                    ]
                    latents.append(dequantize(TokenSequence(window), books).values.T)
                    at = start_lat * ratio * shift
                    waves.append(clips[utt_id][at : at + window_samples])
                latent_batch = torch.stack(latents)
                wave_real = torch.stack(waves)

                target_la, target_ph = frontend.analyze_batch(wave_real, signal_cfg)
                pred_la, pred_ph = generator.decoder(latent_batch)
                wave_fake = frontend.synthesize_batch(pred_la, pred_ph, signal_cfg)

                disc_loss = _adversarial_update(
                    discriminator, opt_d, wave_real, wave_fake, train_cfg.grad_clip
                )
                terms = _generator_terms(
                    discriminator,
                    wave_real,
                    wave_fake,
                    pred_la,
                    pred_ph,
                    target_la,
                    target_ph,
                    torch.zeros(()),
                    mel_weights,
                )
                _apply_generator_update(terms, weights_eff, opt_g, train_cfg.grad_clip)

                writer.append(
                    LossReport.build(
                        {name: float(value.detach() if hasattr(value, 'detach') else value)
                         for name, value in terms.items()},
                        weights_eff,
                        extras={
                            "stage": "individual",
                            "iteration": iteration,
                            "step": step,
                            "epoch": epoch,
                            "lr": opt_g.param_groups[0]["lr"],
                            "disc_loss": disc_loss,
                        },
                    )
                )
                step += 1
            else:
                epoch += 1
                sched_g.step()
                sched_d.step()
                continue
            break
    finally:
        writer.close()

    return _checkpoint_from(
        "individual",
        iteration,
        generator,
        discriminator,
        opt_g,
        opt_d,
        signal_cfg,
        codec_cfg,
        train_cfg,
        joint_ckpt.loss_weights,
        disc_cfg,
    )


def train_iterative(
    start_ckpt: StageCheckpoint,
    manifest_path: str | Path,
    train_cfg: TrainConfig,
    iterations: int,
    work_dir: str | Path,
    evaluate: bool = True,
) -> list[StageCheckpoint]:
    """Repeat (joint fine-tune -> export -> individual) ``iterations`` times.

    Each iteration fine-tunes from the previous checkpoint, exports latents
    from its own joint checkpoint (the cache hash chain enforces this), and
    appends one metric report row per iteration to
    ``work_dir/iteration_reports.jsonl``.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    report_path = work_dir / "iteration_reports.jsonl"

    checkpoints: list[StageCheckpoint] = []
    current = start_ckpt
    with open(report_path, "w") as report_handle:
        for k in range(1, iterations + 1):
            iter_dir = work_dir / f"iteration-{k}"
            iter_dir.mkdir(exist_ok=True)
            iter_cfg = dataclasses.replace(train_cfg, seed=train_cfg.seed + 100 * k)
            joint = train_joint(
                manifest_path,
                current.codec_cfg,
                iter_cfg,
                signal_cfg=current.signal_cfg,
                loss_weights=current.loss_weights,
                disc_cfg=current.disc_cfg,
                log_path=iter_dir / "loss_log_joint.jsonl",
                start=current,
                iteration=k,
            )
            cache = export_latents(joint, manifest_path, iter_dir / "cache")
            individual = train_individual(
                joint,
                cache,
                iter_cfg,
                log_path=iter_dir / "loss_log_individual.jsonl",
                iteration=k,
            )
            checkpoints.extend([joint, individual])
            current = individual

            record = {"iteration": k, "cache_hash": cache.checkpoint_hash}
            if evaluate:
                aggregate, _ = evaluate_corpus(manifest_path, individual)
                record.update(aggregate.to_dict())
            report_handle.write(json.dumps(record) + "\n")
            report_handle.flush()
    return checkpoints
