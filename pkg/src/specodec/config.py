"""Configuration dataclasses and the flat key-value config file format.

Defaults follow the reference 48 kHz operating point: 320/40/1024 framing,
8-block backbones at kernel 7 / channel 512, 32-dim latents downsampled 8x,
1024-entry codebooks, 7960-sample crops, batch 16, AdamW(0.8, 0.99) at 2e-4
decayed by 0.999 per epoch.

Config files are plain text, one ``section.field = value`` per line with
``#`` comments.  Command-line ``--set section.field=value`` overrides are
applied on top.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


@dataclass(frozen=True)
class SignalConfig:
    """STFT analysis/synthesis parameters.

    ``amplitude_floor`` is applied to linear magnitudes before the natural
    log so that log-amplitudes stay finite on silence.
    """

    sample_rate: int = 48000
    frame_length: int = 320
    frame_shift: int = 40
    fft_size: int = 1024
    amplitude_floor: float = 1e-5

    def __post_init__(self) -> None:
        if min(self.sample_rate, self.frame_length, self.frame_shift, self.fft_size) <= 0:
            raise ValueError("signal config values must be strictly positive")
        if self.frame_length % self.frame_shift != 0:
            raise ValueError("frame_shift must divide frame_length")
        if self.fft_size < self.frame_length:
            raise ValueError("fft_size must be >= frame_length")
        if self.amplitude_floor <= 0:
            raise ValueError("amplitude_floor must be positive")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class CodecConfig:
    """Encoder/quantizer/decoder architecture parameters.

    ``channel_size`` is the pointwise expansion width inside each backbone
    block; the blocks themselves run at half that width.
    """

    num_blocks: int = 8
    kernel_size: int = 7
    channel_size: int = 512
    latent_dim: int = 32
    down_up_ratio: int = 8
    codebook_size: int = 1024
    num_quantizers: int = 3

    def __post_init__(self) -> None:
        values = (
            self.num_blocks,
            self.kernel_size,
            self.channel_size,
            self.latent_dim,
            self.down_up_ratio,
            self.codebook_size,
            self.num_quantizers,
        )
        if min(values) <= 0:
            raise ValueError("codec config values must be strictly positive")
        if self.codebook_size & (self.codebook_size - 1):
            raise ValueError("codebook_size must be a power of two")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.channel_size % 2 != 0:
            raise ValueError("channel_size must be even")

    @property
    def backbone_width(self) -> int:
        """Working width of the backbone blocks (expansion is channel_size)."""
        return self.channel_size // 2

    @property
    def codebook_bits(self) -> int:
        return int(math.log2(self.codebook_size))


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters shared by both training stages."""

    crop_length: int = 7960
    batch_size: int = 16
    beta1: float = 0.8
    beta2: float = 0.99
    initial_lr: float = 2e-4
    lr_decay_per_epoch: float = 0.999
    steps_per_stage: int = 1000
    seed: int = 0
    weight_decay: float = 0.01
    grad_clip: float = 0.0  # 0 disables clipping
    ema_decay: float = 0.99
    dead_code_steps: int = 100

    def __post_init__(self) -> None:
        if self.crop_length <= 0:
            raise ValueError("crop_length must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.lr_decay_per_epoch <= 1.0:
            raise ValueError("lr_decay_per_epoch must be in (0, 1]")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must be in [0, 1)")
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if self.steps_per_stage < 0:
            raise ValueError("steps_per_stage must be >= 0")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be >= 0")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the generator objective terms.

    ``w_quant`` is forced to zero during the individual training stage;
    the other defaults are tunable, not normative.
    """

    w_amp: float = 4.5
    w_phase: float = 10.0
    w_mel: float = 4.5
    w_complex: float = 4.5
    w_quant: float = 1.0
    w_adv: float = 1.0
    w_fm: float = 2.0

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    def for_individual_stage(self) -> "LossWeights":
        """Weights with the quantization term discarded."""
        return dataclasses.replace(self, w_quant=0.0)


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Multi-period and multi-resolution discriminator parameters.

    Period and resolution sets follow the canonical configurations of the
    respective discriminator families.
    """

    periods: tuple[int, ...] = (2, 3, 5, 7, 11)
    resolutions: tuple[tuple[int, int], ...] = ((512, 128), (1024, 256), (2048, 512))
    period_base_channels: int = 32
    period_max_channels: int = 1024
    resolution_channels: int = 32

    def __post_init__(self) -> None:
        if not self.periods or min(self.periods) < 1:
            raise ValueError("periods must be a non-empty tuple of positive ints")
        if not self.resolutions:
            raise ValueError("resolutions must be non-empty")
        for fft, hop in self.resolutions:
            if fft <= 0 or hop <= 0 or hop > fft:
                raise ValueError(f"bad resolution ({fft}, {hop})")


def _parse_scalar(text: str, target_type: type):
    text = text.strip()
    if target_type is bool:
        lowered = text.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean from {text!r}")
    if target_type is int:
        return int(text)
    if target_type is float:
        return float(text)
    return text


def _parse_field_value(text: str, current):
    """Coerce a config-file string to the type of the current value."""
    if isinstance(current, bool):
        return _parse_scalar(text, bool)
    if isinstance(current, int):
        return _parse_scalar(text, int)
    if isinstance(current, float):
        return _parse_scalar(text, float)
    if isinstance(current, tuple):
        items = [part.strip() for part in text.split(",") if part.strip()]
        if current and isinstance(current[0], tuple):
            pairs = []
            for item in items:
                fft, _, hop = item.partition(":")
                pairs.append((int(fft), int(hop)))
            return tuple(pairs)
        return tuple(int(item) for item in items)
    return text


@dataclass
class RunConfig:
    """All configuration for one run: signal, model, training, losses, paths."""

    signal: SignalConfig = field(default_factory=SignalConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    paths: dict = field(default_factory=dict)

    _SECTIONS = ("signal", "codec", "train", "loss", "disc", "paths")

    def validate(self) -> None:
        """Cross-field checks that individual dataclasses cannot enforce."""
        if self.train.crop_length % self.signal.frame_shift != 0:
            raise ValueError("crop_length must be a multiple of frame_shift")

    def _check_key(self, key: str) -> tuple[str, str]:
        section_name, _, field_name = key.partition(".")
        if not field_name or section_name not in self._SECTIONS:
            raise ValueError(f"unknown config key {key!r}")
        if section_name != "paths" and not hasattr(getattr(self, section_name), field_name):
            raise ValueError(f"unknown config key {key!r}")
        return section_name, field_name

    def apply_override(self, key: str, raw_value: str) -> None:
        self._apply_all({key: raw_value})

    def _apply_all(self, pending: dict) -> None:
        """Apply string overrides, rebuilding each section dataclass once so
        cross-field invariants see the final values, not intermediate ones."""
        per_section: dict[str, dict[str, str]] = {}
        for key, raw_value in pending.items():
            section_name, field_name = self._check_key(key)
            per_section.setdefault(section_name, {})[field_name] = raw_value
        for section_name, fields in per_section.items():
            if section_name == "paths":
                for field_name, raw_value in fields.items():
                    self.paths[field_name] = raw_value.strip()
                continue
            section = getattr(self, section_name)
            values = {
                field_name: _parse_field_value(raw_value, getattr(section, field_name))
                for field_name, raw_value in fields.items()
            }
            setattr(self, section_name, dataclasses.replace(section, **values))

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: Iterable[str] = ()) -> "RunConfig":
        """Build a config from defaults, an optional file, and overrides.

        Overrides are ``key=value`` strings as passed to ``--set`` and win
        over file entries.
        """
        cfg = cls()
        pending: dict[str, str] = {}
        if path is not None:
            for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                pending[key.strip()] = value
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"--set expects key=value, got {item!r}")
            pending[key.strip()] = value
        cfg._apply_all(pending)
        cfg.validate()
        return cfg

    def to_text(self) -> str:
        """Render as the flat key-value file format."""
        lines = []
        for section_name in ("signal", "codec", "train", "loss", "disc"):
            section = getattr(self, section_name)
            for f in dataclasses.fields(section):
                value = getattr(section, f.name)
                if isinstance(value, tuple):
                    if value and isinstance(value[0], tuple):
                        value = ",".join(f"{a}:{b}" for a, b in value)
                    else:
                        value = ",".join(str(v) for v in value)
                lines.append(f"{section_name}.{f.name} = {value}")
        for key, value in sorted(self.paths.items()):
            lines.append(f"paths.{key} = {value}")
        return "\n".join(lines) + "\n"
