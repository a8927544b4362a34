"""Encoder, decoder, and the assembled codec model.

Two parallel sub-encoders (log-amplitude and phase) run a ConvNeXt-v2-style
backbone and a single strided downsampling convolution; their outputs are
concatenated feature-wise and projected to the latent width.  The decoder
mirrors this: a 1x1 dimension-restoring convolution, a split into two
parallel sub-decoders with transposed-convolution upsampling, a linear
convolution head for the amplitude, and a pair of parallel linear
convolutions whose two-argument arctangent yields a properly wrapped phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .config import CodecConfig, SignalConfig
from .frontend import SpectralPair, wrapped_phase
from .quantizer import (
    Codebooks,
    LatentSequence,
    ResidualVectorQuantizer,
    TokenSequence,
    dequantize,
    quantize,
)


def bitrate_kbps(cfg: CodecConfig, sig: SignalConfig) -> float:
    """Bitstream rate implied by the configs: token rate x bits per frame."""
    tokens_per_second = sig.sample_rate / sig.frame_shift / cfg.down_up_ratio
    return tokens_per_second * cfg.codebook_bits * cfg.num_quantizers / 1000.0


class GRN(nn.Module):
    """Global response normalization over the time axis (channels-last)."""

    def __init__(self, dim: int):
        super().__init__()
        self.gamma = nn.Parameter(torch.zeros(dim))
        self.beta = nn.Parameter(torch.zeros(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: [B, T, C]
        gx = torch.norm(x, p=2, dim=1, keepdim=True)
        nx = gx / (gx.mean(dim=-1, keepdim=True) + 1e-6)
        return self.gamma * (x * nx) + self.beta + x


class ConvNeXtBlock(nn.Module):
    """Depthwise conv -> LayerNorm -> pointwise expand -> GELU -> GRN -> project.

    Args:
        dim: Working width of the block.
        hidden_dim: Pointwise expansion width.
        kernel_size: Depthwise kernel taps.
    """

    def __init__(self, dim: int, hidden_dim: int, kernel_size: int = 7):
        super().__init__()
        self.dwconv = nn.Conv1d(
            dim, dim, kernel_size, padding=kernel_size // 2, groups=dim
        )
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.pwconv1 = nn.Linear(dim, hidden_dim)
        self.act = nn.GELU()
        self.grn = GRN(hidden_dim)
        self.pwconv2 = nn.Linear(hidden_dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        residual = x
        x = self.dwconv(x)
        x = x.transpose(1, 2)
        x = self.norm(x)
        x = self.pwconv1(x)
        x = self.act(x)
        x = self.grn(x)
        x = self.pwconv2(x)
        x = x.transpose(1, 2)
        return residual + x


class SubEncoder(nn.Module):
    """One spectral stream: input projection, backbone, strided downsampling."""

    def __init__(self, cfg: CodecConfig, num_bins: int):
        super().__init__()
        width = cfg.backbone_width
        self.embed = nn.Conv1d(num_bins, width, cfg.kernel_size, padding=cfg.kernel_size // 2)
        self.norm = nn.LayerNorm(width, eps=1e-6)
        self.blocks = nn.ModuleList(
            ConvNeXtBlock(width, cfg.channel_size, cfg.kernel_size)
            for _ in range(cfg.num_blocks)
        )
        ratio = cfg.down_up_ratio
        self.down = nn.Conv1d(width, width, 2 * ratio, stride=ratio, padding=ratio // 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.embed(x)
        x = self.norm(x.transpose(1, 2)).transpose(1, 2)
        for block in self.blocks:
            x = block(x)
        return self.down(x)


class Encoder(nn.Module):
    """Parallel amplitude/phase sub-encoders with a 1x1 latent projection."""

    def __init__(self, cfg: CodecConfig, sig: SignalConfig):
        super().__init__()
        self.down_up_ratio = cfg.down_up_ratio
        self.amplitude = SubEncoder(cfg, sig.num_bins)
        self.phase = SubEncoder(cfg, sig.num_bins)
        self.reduce = nn.Conv1d(2 * cfg.backbone_width, cfg.latent_dim, 1)

    def forward(self, log_amplitude: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
        if log_amplitude.shape[-1] % self.down_up_ratio != 0:
            raise ValueError(
                f"frame count {log_amplitude.shape[-1]} not divisible by "
                f"down_up_ratio {self.down_up_ratio}"
            )
        features = torch.cat(
            [self.amplitude(log_amplitude), self.phase(phase)], dim=1
        )
        return self.reduce(features)


class SubDecoder(nn.Module):
    """One spectral stream: transposed-conv upsampling then the backbone."""

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        width = cfg.backbone_width
        ratio = cfg.down_up_ratio
        self.up = nn.ConvTranspose1d(width, width, 2 * ratio, stride=ratio, padding=ratio // 2)
        self.blocks = nn.ModuleList(
            ConvNeXtBlock(width, cfg.channel_size, cfg.kernel_size)
            for _ in range(cfg.num_blocks)
        )
        self.norm = nn.LayerNorm(width, eps=1e-6)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.up(x)
        for block in self.blocks:
            x = block(x)
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class Decoder(nn.Module):
    """Mirror of the encoder with amplitude and phase output heads."""

    def __init__(self, cfg: CodecConfig, sig: SignalConfig):
        super().__init__()
        width = cfg.backbone_width
        k = cfg.kernel_size
        self.restore = nn.Conv1d(cfg.latent_dim, 2 * width, 1)
        self.amplitude = SubDecoder(cfg)
        self.phase = SubDecoder(cfg)
        self.amplitude_head = nn.Conv1d(width, sig.num_bins, k, padding=k // 2)
        self.phase_head_real = nn.Conv1d(width, sig.num_bins, k, padding=k // 2)
        self.phase_head_imag = nn.Conv1d(width, sig.num_bins, k, padding=k // 2)

    def forward(self, latents: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        restored = self.restore(latents)
        amp_stream, phase_stream = restored.chunk(2, dim=1)
        log_amplitude = self.amplitude_head(self.amplitude(amp_stream))
        phase_stream = self.phase(phase_stream)
        pseudo_real = self.phase_head_real(phase_stream)
        pseudo_imag = self.phase_head_imag(phase_stream)
        phase = wrapped_phase(pseudo_imag, pseudo_real)
        return log_amplitude, phase


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv1d, nn.ConvTranspose1d, nn.Linear)):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


@dataclass
class CodecOutput:
    """Training-mode forward results for a batch."""

    log_amplitude: torch.Tensor
    phase: torch.Tensor
    tokens: torch.Tensor
    stage_inputs: list[torch.Tensor]
    stage_outputs: list[torch.Tensor]


class CodecModel(nn.Module):
    """Full encoder / residual quantizer / decoder stack.

    Parameters are immutable during inference; all single-utterance helpers
    run under ``torch.no_grad`` in eval mode and are deterministic.
    """

    def __init__(
        self,
        cfg: CodecConfig,
        sig: SignalConfig,
        ema_decay: float = 0.99,
        dead_code_steps: int = 100,
    ):
        super().__init__()
        self.cfg = cfg
        self.sig = sig
        self.encoder = Encoder(cfg, sig)
        self.quantizer = ResidualVectorQuantizer(
            cfg.num_quantizers,
            cfg.codebook_size,
            cfg.latent_dim,
            ema_decay=ema_decay,
            dead_code_steps=dead_code_steps,
        )
        self.decoder = Decoder(cfg, sig)
        self.apply(_init_weights)

    def forward(self, log_amplitude: torch.Tensor, phase: torch.Tensor) -> CodecOutput:
        latents = self.encoder(log_amplitude, phase)
        quantized, tokens, stage_inputs, stage_outputs = self.quantizer(latents)
        decoded_amplitude, decoded_phase = self.decoder(quantized)
        return CodecOutput(decoded_amplitude, decoded_phase, tokens, stage_inputs, stage_outputs)

    @property
    def codebooks(self) -> Codebooks:
        return self.quantizer.codebooks

    @torch.no_grad()
    def encode(self, pair: SpectralPair) -> LatentSequence:
        """Continuous latent for one utterance (frames must divide evenly)."""
        if pair.num_bins != self.sig.num_bins:
            raise ValueError(f"pair has {pair.num_bins} bins, expected {self.sig.num_bins}")
        was_training = self.training
        self.eval()
        try:
            latents = self.encoder(
                pair.log_amplitude.T[None], pair.phase.T[None]
            )
        finally:
            self.train(was_training)
        return LatentSequence(latents[0].T.contiguous())

    def quantize(self, latent: LatentSequence) -> tuple[TokenSequence, LatentSequence, list[float]]:
        return quantize(latent, self.codebooks)

    def dequantize(self, tokens: TokenSequence) -> LatentSequence:
        return dequantize(tokens, self.codebooks)

    @torch.no_grad()
    def decode(self, latent: LatentSequence) -> SpectralPair:
        """Decoded spectral pair; restores down_up_ratio x latent_frames frames."""
        if latent.dim != self.cfg.latent_dim:
            raise ValueError(f"latent dim {latent.dim} != config {self.cfg.latent_dim}")
        was_training = self.training
        self.eval()
        try:
            log_amplitude, phase = self.decoder(latent.values.T[None])
        finally:
            self.train(was_training)
        return SpectralPair(log_amplitude[0].T.contiguous(), phase[0].T.contiguous())

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def receptive_field_latent_frames(cfg: CodecConfig) -> int:
    """Rough per-side encoder receptive field, in latent frames."""
    frame_rf = cfg.num_blocks * (cfg.kernel_size - 1) + cfg.kernel_size + 2 * cfg.down_up_ratio
    return math.ceil(frame_rf / cfg.down_up_ratio)
