"""Packed token bitstream: fixed binary header plus bit-packed indices.

Layout: a little-endian fixed-size header, then token indices packed
MSB-first at ``codebook_bits`` per token, frame-major (all quantizer stages
of frame 0, then frame 1, ...), zero-padded to a byte boundary.  Files are
written atomically (temp + rename) so concurrent readers never observe a
partial stream.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import CodecConfig, SignalConfig
from .errors import (
    BitstreamFormatError,
    BitstreamTruncatedError,
    BitstreamVersionError,
)
from .quantizer import TokenSequence

MAGIC = b"APC+"
VERSION = 1
_HEADER_STRUCT = struct.Struct("<4sBIHBBBII")
HEADER_SIZE = _HEADER_STRUCT.size  # 22 bytes


@dataclass(frozen=True)
class BitstreamHeader:
    """Decoder-side metadata carried in front of the packed tokens."""

    sample_rate: int
    frame_shift: int
    down_up_ratio: int
    num_quantizers: int
    codebook_bits: int
    latent_frames: int
    original_samples: int
    version: int = VERSION

    def validate(self) -> None:
        if self.version != VERSION:
            raise BitstreamVersionError(f"unsupported bitstream version {self.version}")
        if min(self.sample_rate, self.frame_shift, self.down_up_ratio) <= 0:
            raise BitstreamFormatError("non-positive signal fields in header")
        if not 1 <= self.num_quantizers <= 255:
            raise BitstreamFormatError(f"bad quantizer count {self.num_quantizers}")
        if not 1 <= self.codebook_bits <= 16:
            raise BitstreamFormatError(f"bad codebook bit width {self.codebook_bits}")
        if self.latent_frames < 0 or self.original_samples < 0:
            raise BitstreamFormatError("negative frame or sample count")
        frames = -(-self.original_samples // self.frame_shift)
        if -(-frames // self.down_up_ratio) != self.latent_frames:
            raise BitstreamFormatError(
                f"original_samples {self.original_samples} inconsistent with "
                f"{self.latent_frames} latent frames"
            )

    @property
    def payload_bytes(self) -> int:
        return math.ceil(self.latent_frames * self.num_quantizers * self.codebook_bits / 8)

    @property
    def bitrate_kbps(self) -> float:
        rate = self.sample_rate / self.frame_shift / self.down_up_ratio
        return rate * self.codebook_bits * self.num_quantizers / 1000.0

    @classmethod
    def from_config(
        cls,
        sig: SignalConfig,
        cfg: CodecConfig,
        latent_frames: int,
        original_samples: int,
    ) -> "BitstreamHeader":
        header = cls(
            sample_rate=sig.sample_rate,
            frame_shift=sig.frame_shift,
            down_up_ratio=cfg.down_up_ratio,
            num_quantizers=cfg.num_quantizers,
            codebook_bits=cfg.codebook_bits,
            latent_frames=latent_frames,
            original_samples=original_samples,
        )
        header.validate()
        return header

    def to_bytes(self) -> bytes:
        return _HEADER_STRUCT.pack(
            MAGIC,
            self.version,
            self.sample_rate,
            self.frame_shift,
            self.down_up_ratio,
            self.num_quantizers,
            self.codebook_bits,
            self.latent_frames,
            self.original_samples,
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitstreamHeader":
        if len(data) < 4:
            raise BitstreamTruncatedError(f"{len(data)} bytes is too short for a header")
        if data[:4] != MAGIC:
            raise BitstreamFormatError(f"bad magic {data[:4]!r}")
        if len(data) < HEADER_SIZE:
            raise BitstreamTruncatedError(
                f"header needs {HEADER_SIZE} bytes, got {len(data)}"
            )
        (_, version, sample_rate, frame_shift, ratio, nq, bits, frames, samples) = (
            _HEADER_STRUCT.unpack_from(data)
        )
        header = cls(
            sample_rate=sample_rate,
            frame_shift=frame_shift,
            down_up_ratio=ratio,
            num_quantizers=nq,
            codebook_bits=bits,
            latent_frames=frames,
            original_samples=samples,
            version=version,
        )
        header.validate()
        return header


def pack(tokens: TokenSequence, header: BitstreamHeader) -> bytes:
    """Serialize tokens behind their header; inverse of :func:`unpack`."""
    header.validate()
    if tokens.num_frames != header.latent_frames:
        raise ValueError(
            f"token frames {tokens.num_frames} != header latent_frames "
            f"{header.latent_frames}"
        )
    if tokens.num_quantizers != header.num_quantizers:
        raise ValueError(
            f"token stages {tokens.num_quantizers} != header quantizers "
            f"{header.num_quantizers}"
        )
    values = tokens.indices.detach().cpu().numpy().astype(np.int64).reshape(-1)
    if values.size and values.max() >= (1 << header.codebook_bits):
        raise ValueError(
            f"token {values.max()} does not fit in {header.codebook_bits} bits"
        )
    if values.size == 0:
        return header.to_bytes()
    shifts = np.arange(header.codebook_bits - 1, -1, -1, dtype=np.int64)
    bits = ((values[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)
    return header.to_bytes() + np.packbits(bits).tobytes()


def unpack(data: bytes) -> tuple[TokenSequence, BitstreamHeader]:
    """Parse a bitstream back into tokens; bit-exact inverse of :func:`pack`."""
    header = BitstreamHeader.from_bytes(data)
    payload = data[HEADER_SIZE:]
    if len(payload) < header.payload_bytes:
        raise BitstreamTruncatedError(
            f"payload needs {header.payload_bytes} bytes, got {len(payload)}"
        )
    if len(payload) > header.payload_bytes:
        raise BitstreamFormatError(
            f"{len(payload) - header.payload_bytes} trailing bytes after payload"
        )
    count = header.latent_frames * header.num_quantizers
    if count == 0:
        indices = torch.zeros(0, header.num_quantizers, dtype=torch.int64)
        return TokenSequence(indices), header
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[: count * header.codebook_bits]
    weights = 1 << np.arange(header.codebook_bits - 1, -1, -1, dtype=np.int64)
    values = bits.reshape(count, header.codebook_bits).astype(np.int64) @ weights
    indices = torch.from_numpy(values.reshape(header.latent_frames, header.num_quantizers))
    return TokenSequence(indices), header


def write_file(path: str | Path, tokens: TokenSequence, header: BitstreamHeader) -> None:
    """Atomically write a bitstream file."""
    path = Path(path)
    data = pack(tokens, header)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def read_file(path: str | Path) -> tuple[TokenSequence, BitstreamHeader]:
    return unpack(Path(path).read_bytes())
