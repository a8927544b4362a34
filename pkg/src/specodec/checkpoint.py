"""Versioned training checkpoints.

A checkpoint bundles both configs, generator and discriminator parameters
(codebooks included), optimizer state, the stage tag, and the frozen-module
manifest.  Serialization keeps to tensors and plain containers so files load
under ``torch.load(weights_only=True)``.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .config import (
    CodecConfig,
    DiscriminatorConfig,
    LossWeights,
    SignalConfig,
    TrainConfig,
)
from .discriminators import DiscriminatorBank
from .errors import CheckpointMismatchError
from .model import CodecModel

FORMAT_VERSION = 1

FROZEN_IN_INDIVIDUAL = ("encoder", "quantizer")


def state_dict_hash(state: dict, prefixes: tuple[str, ...] = ()) -> str:
    """SHA-256 over name-sorted tensors, optionally filtered by prefix."""
    digest = hashlib.sha256()
    for name in sorted(state):
        if prefixes and not name.startswith(prefixes):
            continue
        tensor = state[name].detach().cpu().contiguous()
        digest.update(name.encode())
        digest.update(str(tuple(tensor.shape)).encode())
        digest.update(str(tensor.dtype).encode())
        digest.update(tensor.numpy().tobytes())
    return digest.hexdigest()


@dataclass
class StageCheckpoint:
    """Parameter snapshot tagged with its training stage.

    ``stage`` is ``"joint"`` or ``"individual"``; ``iteration`` is 0 for the
    base staged run and k for the k-th iterative repetition.
    """

    stage: str
    signal_cfg: SignalConfig
    codec_cfg: CodecConfig
    train_cfg: TrainConfig
    loss_weights: LossWeights
    disc_cfg: DiscriminatorConfig
    generator_state: dict
    discriminator_state: dict
    opt_g_state: dict = field(default_factory=dict)
    opt_d_state: dict = field(default_factory=dict)
    frozen_manifest: tuple[str, ...] = ()
    iteration: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.stage not in ("joint", "individual"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.stage == "individual" and tuple(self.frozen_manifest) != FROZEN_IN_INDIVIDUAL:
            raise ValueError("individual-stage checkpoints must freeze encoder and quantizer")
        if self.stage == "joint" and self.frozen_manifest:
            raise ValueError("joint-stage checkpoints freeze nothing")

    @property
    def stage_tag(self) -> str:
        if self.iteration == 0:
            return self.stage
        return f"iteration-{self.iteration}/{self.stage}"

    def encoder_quantizer_hash(self) -> str:
        return state_dict_hash(self.generator_state, prefixes=("encoder.", "quantizer."))

    def decoder_hash(self) -> str:
        return state_dict_hash(self.generator_state, prefixes=("decoder.",))

    def build_generator(self) -> CodecModel:
        model = CodecModel(
            self.codec_cfg,
            self.signal_cfg,
            ema_decay=self.train_cfg.ema_decay,
            dead_code_steps=self.train_cfg.dead_code_steps,
        )
        try:
            model.load_state_dict(self.generator_state)
        except RuntimeError as exc:
            raise CheckpointMismatchError(f"generator state does not fit config: {exc}") from exc
        return model

    def build_discriminator(self) -> DiscriminatorBank:
        bank = DiscriminatorBank(self.disc_cfg)
        try:
            bank.load_state_dict(self.discriminator_state)
        except RuntimeError as exc:
            raise CheckpointMismatchError(
                f"discriminator state does not fit config: {exc}"
            ) from exc
        return bank

    def save(self, path: str | Path) -> None:
        payload = {
            "format_version": FORMAT_VERSION,
            "stage": self.stage,
            "iteration": self.iteration,
            "seed": self.seed,
            "frozen_manifest": list(self.frozen_manifest),
            "signal_cfg": dataclasses.asdict(self.signal_cfg),
            "codec_cfg": dataclasses.asdict(self.codec_cfg),
            "train_cfg": dataclasses.asdict(self.train_cfg),
            "loss_weights": dataclasses.asdict(self.loss_weights),
            "disc_cfg": dataclasses.asdict(self.disc_cfg),
            "generator_state": self.generator_state,
            "discriminator_state": self.discriminator_state,
            "opt_g_state": self.opt_g_state,
            "opt_d_state": self.opt_d_state,
        }
        torch.save(payload, str(path))

    @classmethod
    def load(cls, path: str | Path) -> "StageCheckpoint":
        payload = torch.load(str(path), map_location="cpu", weights_only=True)
        version = payload.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointMismatchError(f"unsupported checkpoint format version {version}")
        disc_cfg = payload["disc_cfg"]
        disc_cfg["periods"] = tuple(disc_cfg["periods"])
        disc_cfg["resolutions"] = tuple(tuple(r) for r in disc_cfg["resolutions"])
        return cls(
            stage=payload["stage"],
            iteration=payload["iteration"],
            seed=payload["seed"],
            frozen_manifest=tuple(payload["frozen_manifest"]),
            signal_cfg=SignalConfig(**payload["signal_cfg"]),
            codec_cfg=CodecConfig(**payload["codec_cfg"]),
            train_cfg=TrainConfig(**payload["train_cfg"]),
            loss_weights=LossWeights(**payload["loss_weights"]),
            disc_cfg=DiscriminatorConfig(**disc_cfg),
            generator_state=payload["generator_state"],
            discriminator_state=payload["discriminator_state"],
            opt_g_state=payload["opt_g_state"],
            opt_d_state=payload["opt_d_state"],
        )
