"""Waveform <-> amplitude/phase spectrum conversion.

Analysis reflect-pads by half a frame on both sides so that frame ``i`` is
centered at sample ``i * frame_shift`` and the frame count is exactly
``ceil(len / frame_shift)``.  Synthesis inverts via windowed overlap-add with
squared-window normalization and trims the padding, returning exactly
``frames * frame_shift`` samples; the round trip is exact (up to float
rounding) wherever the window envelope is positive, which the 8x overlap
guarantees.

All functions are pure and deterministic; batched variants operate on
``[batch, ...]`` tensors and are differentiable, which the training stack
relies on for losses computed after resynthesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .config import SignalConfig


@dataclass
class SpectralPair:
    """Aligned log-amplitude and wrapped-phase matrices for one utterance.

    Both matrices are ``[frames, bins]`` with ``bins = fft_size // 2 + 1``;
    amplitudes are natural-log magnitudes floored before the log, phases are
    radians in (-pi, pi].
    """

    log_amplitude: torch.Tensor
    phase: torch.Tensor

    def __post_init__(self) -> None:
        if self.log_amplitude.shape != self.phase.shape:
            raise ValueError(
                f"log_amplitude {tuple(self.log_amplitude.shape)} and "
                f"phase {tuple(self.phase.shape)} must have identical shapes"
            )
        if self.log_amplitude.dim() != 2:
            raise ValueError("SpectralPair holds a single [frames, bins] utterance")

    @property
    def num_frames(self) -> int:
        return self.log_amplitude.shape[0]

    @property
    def num_bins(self) -> int:
        return self.log_amplitude.shape[1]


def num_frames(num_samples: int, cfg: SignalConfig) -> int:
    """Frame count produced by :func:`analyze`; depends only on the length."""
    return -(-num_samples // cfg.frame_shift)


def _window(cfg: SignalConfig, dtype: torch.dtype) -> torch.Tensor:
    return torch.hann_window(cfg.frame_length, periodic=True, dtype=dtype)


def wrapped_phase(imag: torch.Tensor, real: torch.Tensor) -> torch.Tensor:
    """Two-argument arctangent remapped onto the half-open interval (-pi, pi].

    ``atan2`` returns values in [-pi, pi]; the single boundary case -pi is
    folded to +pi so phase comparisons have one canonical representative.
    """
    phase = torch.atan2(imag, real)
    pi = torch.tensor(math.pi, dtype=phase.dtype)
    return torch.where(phase <= -pi, phase + 2 * pi, phase)


def analyze_batch(waveforms: torch.Tensor, cfg: SignalConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """STFT a batch of equal-length waveforms.

    Args:
        waveforms: ``[batch, samples]`` tensor, ``samples >= frame_length``.

    Returns:
        ``(log_amplitude, phase)``, each ``[batch, bins, frames]``.
    """
    if waveforms.dim() != 2:
        raise ValueError("expected a [batch, samples] tensor")
    length = waveforms.shape[1]
    if length == 0:
        raise ValueError("empty waveform")
    if length < cfg.frame_length:
        raise ValueError(f"waveform length {length} < frame_length {cfg.frame_length}")

    frames = num_frames(length, cfg)
    pad_left = cfg.frame_length // 2
    pad_right = (frames - 1) * cfg.frame_shift + cfg.frame_length - pad_left - length
    padded = F.pad(waveforms[:, None, :], (pad_left, max(pad_right, 0)), mode="reflect")[:, 0, :]

    windowed = padded.unfold(-1, cfg.frame_length, cfg.frame_shift)[:, :frames, :]
    windowed = windowed * _window(cfg, waveforms.dtype)
    spectrum = torch.fft.rfft(windowed, n=cfg.fft_size)

    raw_magnitude = spectrum.abs()
    log_amplitude = torch.log(raw_magnitude.clamp(min=cfg.amplitude_floor))
    # Exact-zero bins carry no phase information; atan2(+-0, -0) would give pi.
    phase = torch.where(
        raw_magnitude == 0,
        torch.zeros((), dtype=waveforms.dtype),
        wrapped_phase(spectrum.imag, spectrum.real),
    )
    return log_amplitude.transpose(1, 2), phase.transpose(1, 2)


def synthesize_batch(
    log_amplitude: torch.Tensor, phase: torch.Tensor, cfg: SignalConfig
) -> torch.Tensor:
    """Inverse of :func:`analyze_batch` via windowed overlap-add.

    Args:
        log_amplitude: ``[batch, bins, frames]``.
        phase: same shape.

    Returns:
        ``[batch, frames * frame_shift]`` waveform tensor.
    """
    if log_amplitude.shape != phase.shape:
        raise ValueError("log_amplitude and phase shapes differ")
    if log_amplitude.dim() != 3 or log_amplitude.shape[1] != cfg.num_bins:
        raise ValueError(
            f"expected [batch, {cfg.num_bins}, frames], got {tuple(log_amplitude.shape)}"
        )

    batch, _, frames = log_amplitude.shape
    spectrum = torch.polar(torch.exp(log_amplitude), phase).transpose(1, 2)
    frame_time = torch.fft.irfft(spectrum, n=cfg.fft_size)[..., : cfg.frame_length]
    window = _window(cfg, frame_time.dtype)
    frame_time = frame_time * window

    out_len = (frames - 1) * cfg.frame_shift + cfg.frame_length
    accumulated = F.fold(
        frame_time.transpose(1, 2),
        output_size=(1, out_len),
        kernel_size=(1, cfg.frame_length),
        stride=(1, cfg.frame_shift),
    )[:, 0, 0, :]

    envelope = F.fold(
        (window * window).expand(1, frames, -1).transpose(1, 2),
        output_size=(1, out_len),
        kernel_size=(1, cfg.frame_length),
        stride=(1, cfg.frame_shift),
    )[0, 0, 0, :]

    pad_left = cfg.frame_length // 2
    keep = slice(pad_left, pad_left + frames * cfg.frame_shift)
    return accumulated[:, keep] / envelope[keep]


def analyze(waveform, cfg: SignalConfig) -> SpectralPair:
    """Convert one waveform to a :class:`SpectralPair`.

    Accepts a 1-D numpy array or torch tensor.
    """
    wave = torch.as_tensor(np.asarray(waveform) if not torch.is_tensor(waveform) else waveform)
    if wave.dim() != 1:
        raise ValueError("expected a 1-D waveform")
    if not wave.is_floating_point():
        wave = wave.to(torch.float32)
    log_amplitude, phase = analyze_batch(wave[None, :], cfg)
    return SpectralPair(log_amplitude[0].T.contiguous(), phase[0].T.contiguous())


def synthesize(pair: SpectralPair, cfg: SignalConfig) -> torch.Tensor:
    """Convert a :class:`SpectralPair` back to a 1-D waveform tensor."""
    if pair.num_bins != cfg.num_bins:
        raise ValueError(f"pair has {pair.num_bins} bins, config expects {cfg.num_bins}")
    wave = synthesize_batch(
        pair.log_amplitude.T[None, :, :], pair.phase.T[None, :, :], cfg
    )
    return wave[0]


def pad_frames_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, int]:
    """Right-pad the trailing (frame) axis with edge replication.

    Returns the padded tensor and the original frame count so the decoder
    output can be trimmed back.
    """
    frames = x.shape[-1]
    remainder = frames % multiple
    if remainder == 0:
        return x, frames
    pad = multiple - remainder
    flat = x.reshape(-1, 1, frames)
    padded = F.pad(flat, (0, pad), mode="replicate")
    return padded.reshape(*x.shape[:-1], frames + pad), frames


def mel_filterbank(
    cfg: SignalConfig,
    num_filters: int = 80,
    fmin: float = 0.0,
    fmax: float | None = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Triangular mel filterbank matrix ``[num_filters, bins]`` (HTK scale)."""
    fmax = cfg.sample_rate / 2 if fmax is None else fmax

    def hz_to_mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_filters + 2)
    hz_points = np.array([mel_to_hz(m) for m in mel_points])
    bin_freqs = np.arange(cfg.num_bins) * cfg.sample_rate / cfg.fft_size

    bank = np.zeros((num_filters, cfg.num_bins))
    for i in range(num_filters):
        left, center, right = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (bin_freqs - left) / max(center - left, 1e-12)
        falling = (right - bin_freqs) / max(right - center, 1e-12)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return torch.as_tensor(bank, dtype=dtype)
