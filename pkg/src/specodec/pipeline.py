"""Whole-utterance encode/decode on top of a trained (or fresh) codec.

Glues the spectral frontend to the model: analysis, frame padding to the
downsampling ratio, quantization to tokens, and the inverse chain with
trimming back to the original frame and sample counts.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from . import bitstream, frontend
from .audio import read_wav, write_wav
from .checkpoint import StageCheckpoint
from .config import CodecConfig, SignalConfig
from .model import CodecModel, bitrate_kbps
from .quantizer import TokenSequence


class CodecPipeline:
    """Deterministic waveform <-> token conversion for single utterances."""

    def __init__(self, model: CodecModel):
        self.model = model.eval()

    @property
    def sig(self) -> SignalConfig:
        return self.model.sig

    @property
    def cfg(self) -> CodecConfig:
        return self.model.cfg

    @property
    def bitrate_kbps(self) -> float:
        return bitrate_kbps(self.cfg, self.sig)

    @classmethod
    def from_checkpoint(cls, checkpoint: StageCheckpoint | str | Path) -> "CodecPipeline":
        if not isinstance(checkpoint, StageCheckpoint):
            checkpoint = StageCheckpoint.load(checkpoint)
        return cls(checkpoint.build_generator())

    @torch.no_grad()
    def compress(self, waveform) -> tuple[TokenSequence, int]:
        """Waveform to tokens plus the original sample count."""
        wave = torch.as_tensor(
            np.asarray(waveform) if not torch.is_tensor(waveform) else waveform
        )
        original_samples = wave.shape[-1]
        pair = frontend.analyze(wave, self.sig)
        log_amp, _ = frontend.pad_frames_to_multiple(
            pair.log_amplitude.T[None], self.cfg.down_up_ratio
        )
        phase, _ = frontend.pad_frames_to_multiple(
            pair.phase.T[None], self.cfg.down_up_ratio
        )
        latent = self.model.encode(
            frontend.SpectralPair(log_amp[0].T.contiguous(), phase[0].T.contiguous())
        )
        tokens, _, _ = self.model.quantize(latent)
        return tokens, original_samples

    @torch.no_grad()
    def decompress(self, tokens: TokenSequence, original_samples: int) -> np.ndarray:
        """Tokens back to a waveform of exactly ``original_samples`` samples."""
        latent = self.model.dequantize(tokens)
        pair = self.model.decode(latent)
        frames = frontend.num_frames(original_samples, self.sig)
        if frames > pair.num_frames:
            raise ValueError(
                f"{original_samples} samples need {frames} frames, decoded "
                f"only {pair.num_frames}"
            )
        trimmed = frontend.SpectralPair(
            pair.log_amplitude[:frames].contiguous(), pair.phase[:frames].contiguous()
        )
        wave = frontend.synthesize(trimmed, self.sig)
        return wave[:original_samples].numpy()

    def roundtrip(self, waveform) -> np.ndarray:
        tokens, original_samples = self.compress(waveform)
        return self.decompress(tokens, original_samples)

    def encode_file(self, wav_path: str | Path, stream_path: str | Path) -> bitstream.BitstreamHeader:
        """WAV in, atomic ``.apc`` bitstream out."""
        wave = read_wav(wav_path, expected_rate=self.sig.sample_rate)
        tokens, original_samples = self.compress(wave)
        header = bitstream.BitstreamHeader.from_config(
            self.sig, self.cfg, tokens.num_frames, original_samples
        )
        bitstream.write_file(stream_path, tokens, header)
        return header

    def decode_file(self, stream_path: str | Path, wav_path: str | Path) -> int:
        """Bitstream in, WAV out; returns the sample count written."""
        tokens, header = bitstream.read_file(stream_path)
        if header.sample_rate != self.sig.sample_rate:
            raise ValueError(
                f"bitstream sample rate {header.sample_rate} != model {self.sig.sample_rate}"
            )
        if (
            header.num_quantizers != self.cfg.num_quantizers
            or header.codebook_bits != self.cfg.codebook_bits
            or header.down_up_ratio != self.cfg.down_up_ratio
            or header.frame_shift != self.sig.frame_shift
        ):
            raise ValueError("bitstream header does not match the checkpoint configuration")
        wave = self.decompress(tokens, header.original_samples)
        write_wav(wav_path, wave, self.sig.sample_rate)
        return len(wave)
