"""Amplitude/phase spectral audio codec with staged adversarial training."""

from .bitstream import BitstreamHeader, pack, unpack
from .checkpoint import StageCheckpoint
from .config import (
    CodecConfig,
    DiscriminatorConfig,
    LossWeights,
    RunConfig,
    SignalConfig,
    TrainConfig,
)
from .frontend import SpectralPair, analyze, synthesize
from .losses import LossReport, anti_wrap
from .metrics import MetricReport, awpd, evaluate_corpus, lsd
from .model import CodecModel, bitrate_kbps
from .pipeline import CodecPipeline
from .quantizer import Codebooks, LatentSequence, TokenSequence, dequantize, quantize
from .training import (
    LatentCache,
    export_latents,
    train_individual,
    train_iterative,
    train_joint,
)

__version__ = "0.1.0"

__all__ = [
    "BitstreamHeader",
    "CodecConfig",
    "CodecModel",
    "CodecPipeline",
    "Codebooks",
    "DiscriminatorConfig",
    "LatentCache",
    "LatentSequence",
    "LossReport",
    "LossWeights",
    "MetricReport",
    "RunConfig",
    "SignalConfig",
    "SpectralPair",
    "StageCheckpoint",
    "TokenSequence",
    "TrainConfig",
    "analyze",
    "anti_wrap",
    "awpd",
    "bitrate_kbps",
    "dequantize",
    "evaluate_corpus",
    "export_latents",
    "lsd",
    "pack",
    "quantize",
    "synthesize",
    "train_individual",
    "train_iterative",
    "train_joint",
    "unpack",
]
