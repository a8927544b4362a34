"""Multi-period and multi-resolution waveform discriminators.

The period branch folds the waveform at each configured period into a 2-D
map and runs a strided 2-D convolution stack; the resolution branch does the
same on magnitude spectrograms at several STFT resolutions.  Channel widths
and strides follow the canonical configurations of these discriminator
families, scaled by the config so miniature variants stay cheap in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .config import DiscriminatorConfig


@dataclass
class DiscriminatorOutput:
    """Scores and per-layer features from a bank of sub-discriminators."""

    scores: list = field(default_factory=list)
    features: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.scores) != len(self.features):
            raise ValueError("scores and features lists must have equal length")

    def __add__(self, other: "DiscriminatorOutput") -> "DiscriminatorOutput":
        return DiscriminatorOutput(self.scores + other.scores, self.features + other.features)


class PeriodDiscriminator(nn.Module):
    """Judges the waveform folded into a [length/period, period] map."""

    def __init__(self, period: int, base_channels: int = 32, max_channels: int = 1024):
        super().__init__()
        self.period = period
        channels = [min(base_channels * 4**i, max_channels) for i in range(4)]
        self.convs = nn.ModuleList()
        in_ch = 1
        for out_ch in channels:
            self.convs.append(nn.Conv2d(in_ch, out_ch, (5, 1), stride=(3, 1), padding=(2, 0)))
            in_ch = out_ch
        self.convs.append(nn.Conv2d(in_ch, in_ch, (5, 1), padding=(2, 0)))
        self.post = nn.Conv2d(in_ch, 1, (3, 1), padding=(1, 0))

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        batch, length = x.shape
        remainder = length % self.period
        if remainder:
            x = F.pad(x, (0, self.period - remainder))
        x = x.view(batch, 1, -1, self.period)
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            feats.append(x)
        score = self.post(x)
        feats.append(score)
        return score, feats


class ResolutionDiscriminator(nn.Module):
    """Judges a magnitude spectrogram at one STFT resolution."""

    def __init__(self, fft_size: int, hop: int, channels: int = 32):
        super().__init__()
        self.fft_size = fft_size
        self.hop = hop
        specs = [((3, 9), (1, 1)), ((3, 9), (1, 2)), ((3, 9), (1, 2)), ((3, 9), (1, 2)),
                 ((3, 3), (1, 1))]
        self.convs = nn.ModuleList()
        in_ch = 1
        for kernel, stride in specs:
            padding = (kernel[0] // 2, kernel[1] // 2)
            self.convs.append(nn.Conv2d(in_ch, channels, kernel, stride=stride, padding=padding))
            in_ch = channels
        self.post = nn.Conv2d(in_ch, 1, (3, 3), padding=(1, 1))

    def _spectrogram(self, x: torch.Tensor) -> torch.Tensor:
        window = torch.hann_window(self.fft_size, dtype=x.dtype)
        frames = F.pad(x, (self.fft_size // 2, self.fft_size // 2), mode="reflect")
        frames = frames.unfold(-1, self.fft_size, self.hop) * window
        spectrum = torch.fft.rfft(frames)
        return spectrum.abs().clamp(min=1e-9)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        spec = self._spectrogram(x)[:, None]  # [B, 1, frames, bins]
        feats = []
        h = spec
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
            feats.append(h)
        score = self.post(h)
        feats.append(score)
        return score, feats


class MultiPeriodDiscriminator(nn.Module):
    """One :class:`PeriodDiscriminator` per configured period."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.periods = cfg.periods
        self.branches = nn.ModuleList(
            PeriodDiscriminator(p, cfg.period_base_channels, cfg.period_max_channels)
            for p in cfg.periods
        )

    def forward(self, waveform: torch.Tensor) -> DiscriminatorOutput:
        if waveform.dim() != 2:
            raise ValueError("expected a [batch, samples] waveform")
        if waveform.shape[1] < max(self.periods):
            raise ValueError(
                f"waveform length {waveform.shape[1]} < max period {max(self.periods)}"
            )
        out = DiscriminatorOutput()
        for branch in self.branches:
            score, feats = branch(waveform)
            out.scores.append(score)
            out.features.append(feats)
        return out


class MultiResolutionDiscriminator(nn.Module):
    """One :class:`ResolutionDiscriminator` per configured STFT resolution."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.resolutions = cfg.resolutions
        self.branches = nn.ModuleList(
            ResolutionDiscriminator(fft, hop, cfg.resolution_channels)
            for fft, hop in cfg.resolutions
        )

    def forward(self, waveform: torch.Tensor) -> DiscriminatorOutput:
        if waveform.dim() != 2:
            raise ValueError("expected a [batch, samples] waveform")
        largest = max(fft for fft, _ in self.resolutions)
        if waveform.shape[1] < largest:
            raise ValueError(f"waveform length {waveform.shape[1]} < largest window {largest}")
        out = DiscriminatorOutput()
        for branch in self.branches:
            score, feats = branch(waveform)
            out.scores.append(score)
            out.features.append(feats)
        return out


class DiscriminatorBank(nn.Module):
    """MPD and MRD combined, as used during adversarial training."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.mpd = MultiPeriodDiscriminator(cfg)
        self.mrd = MultiResolutionDiscriminator(cfg)

    def forward(self, waveform: torch.Tensor) -> DiscriminatorOutput:
        return self.mpd(waveform) + self.mrd(waveform)


def miniature_discriminator_config(max_length: int) -> DiscriminatorConfig:
    """A tiny discriminator config usable on short test waveforms."""
    fft = 2 ** max(3, int(math.log2(max(max_length // 4, 8))))
    return DiscriminatorConfig(
        periods=(2, 3),
        resolutions=((fft, fft // 4),),
        period_base_channels=4,
        period_max_channels=16,
        resolution_channels=4,
    )
