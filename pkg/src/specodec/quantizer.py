"""Residual vector quantization.

A cascade of vector quantizers: the first stage quantizes the latent, each
later stage quantizes the residual error left by the previous one, and the
quantized output is the sum of all selected codewords.  Nearest-codeword
search is Euclidean with ties broken by lowest index.

Training uses straight-through gradients for the lookup plus
exponential-moving-average codebook updates; codewords unused for a
configurable number of steps are reseeded from random batch latents so
tables stay non-degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import TokenRangeError


@dataclass
class LatentSequence:
    """Continuous codec latent for one utterance: ``[latent_frames, latent_dim]``."""

    values: torch.Tensor

    def __post_init__(self) -> None:
        if self.values.dim() != 2:
            raise ValueError("LatentSequence holds a [latent_frames, latent_dim] matrix")
        if not torch.isfinite(self.values).all():
            raise ValueError("latent values must be finite")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class TokenSequence:
    """Per-frame stack of codebook indices: ``[latent_frames, num_quantizers]``."""

    indices: torch.Tensor

    def __post_init__(self) -> None:
        if self.indices.dim() != 2:
            raise ValueError("TokenSequence holds a [latent_frames, num_quantizers] matrix")
        if self.indices.dtype not in (torch.int64, torch.int32, torch.int16):
            raise ValueError("token indices must be integers")
        if self.indices.numel() and self.indices.min() < 0:
            raise TokenRangeError("negative token index")

    @property
    def num_frames(self) -> int:
        return self.indices.shape[0]

    @property
    def num_quantizers(self) -> int:
        return self.indices.shape[1]


@dataclass
class Codebooks:
    """Stacked codeword tables: ``[num_quantizers, codebook_size, latent_dim]``."""

    tables: torch.Tensor

    def __post_init__(self) -> None:
        if self.tables.dim() != 3:
            raise ValueError("Codebooks holds a [Q, codebook_size, latent_dim] tensor")

    @property
    def num_quantizers(self) -> int:
        return self.tables.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.tables.shape[1]

    @property
    def dim(self) -> int:
        return self.tables.shape[2]


def _nearest(flat: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
    """Index of the nearest codeword per row; first index wins on ties."""
    distances = (
        flat.pow(2).sum(dim=1, keepdim=True)
        + table.pow(2).sum(dim=1)
        - 2.0 * flat @ table.t()
    )
    return distances.argmin(dim=1)


def quantize(
    latent: LatentSequence, books: Codebooks
) -> tuple[TokenSequence, LatentSequence, list[float]]:
    """Quantize a latent sequence through all residual stages.

    Returns the token matrix, the quantized latent (sum of selected
    codewords), and the mean squared residual after each stage.
    """
    if latent.num_frames == 0:
        raise ValueError("empty latent sequence")
    if latent.dim != books.dim:
        raise ValueError(f"latent dim {latent.dim} != codebook dim {books.dim}")

    residual = latent.values
    quantized = torch.zeros_like(residual)
    tokens = []
    residual_norms = []
    for stage in range(books.num_quantizers):
        table = books.tables[stage].to(residual.dtype)
        idx = _nearest(residual, table)
        selected = table[idx]
        quantized = quantized + selected
        residual = residual - selected
        tokens.append(idx)
        residual_norms.append(residual.pow(2).mean().item())
    return (
        TokenSequence(torch.stack(tokens, dim=1)),
        LatentSequence(quantized),
        residual_norms,
    )


def dequantize(tokens: TokenSequence, books: Codebooks) -> LatentSequence:
    """Sum of table lookups over all stages; inverse of the token mapping."""
    if tokens.num_quantizers != books.num_quantizers:
        raise ValueError(
            f"token stages {tokens.num_quantizers} != codebooks {books.num_quantizers}"
        )
    if tokens.indices.numel() and tokens.indices.max() >= books.codebook_size:
        raise TokenRangeError(
            f"token index {int(tokens.indices.max())} outside codebook of "
            f"size {books.codebook_size}"
        )
    out = torch.zeros(
        tokens.num_frames, books.dim, dtype=books.tables.dtype, device=books.tables.device
    )
    for stage in range(books.num_quantizers):
        out = out + books.tables[stage][tokens.indices[:, stage]]
    return LatentSequence(out)


class ResidualVectorQuantizer(nn.Module):
    """Trainable residual VQ operating on ``[batch, latent_dim, frames]`` maps.

    Args:
        num_quantizers: Number of cascaded stages.
        codebook_size: Entries per stage table.
        dim: Latent feature width.
        ema_decay: Codebook moving-average decay.
        dead_code_steps: Reseed a codeword after this many unused steps.
    """

    def __init__(
        self,
        num_quantizers: int,
        codebook_size: int,
        dim: int,
        ema_decay: float = 0.99,
        dead_code_steps: int = 100,
        eps: float = 1e-5,
    ):
        super().__init__()
        self.num_quantizers = num_quantizers
        self.codebook_size = codebook_size
        self.dim = dim
        self.ema_decay = ema_decay
        self.dead_code_steps = dead_code_steps
        self.eps = eps

        tables = torch.randn(num_quantizers, codebook_size, dim)
        self.register_buffer("tables", tables)
        self.register_buffer("ema_cluster_size", torch.ones(num_quantizers, codebook_size))
        self.register_buffer("ema_weight", tables.clone())
        self.register_buffer(
            "unused_steps", torch.zeros(num_quantizers, codebook_size, dtype=torch.long)
        )
        # Tables are reseeded from the first training batch, stage by stage,
        # so each stage starts near its own residual distribution.
        self.register_buffer("initialized", torch.zeros(num_quantizers, dtype=torch.bool))

    @property
    def codebooks(self) -> Codebooks:
        return Codebooks(self.tables.detach().clone())

    def forward(
        self, latents: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, list[torch.Tensor], list[torch.Tensor]]:
        """Quantize a batch of latent maps.

        Returns ``(quantized_st, tokens, stage_inputs, stage_outputs)`` where
        ``quantized_st`` carries straight-through gradients to the input,
        ``tokens`` is ``[batch, frames, num_quantizers]``, and the stage
        input/output lists feed the quantization loss.
        """
        batch, dim, frames = latents.shape
        if dim != self.dim:
            raise ValueError(f"latent dim {dim} != quantizer dim {self.dim}")

        residual = latents.transpose(1, 2).reshape(-1, dim)
        quantized = torch.zeros_like(residual)
        stage_inputs: list[torch.Tensor] = []
        stage_outputs: list[torch.Tensor] = []
        tokens = []
        for stage in range(self.num_quantizers):
            if self.training and not self.initialized[stage]:
                self._seed_from_batch(stage, residual.detach())
            idx = _nearest(residual.detach(), self.tables[stage])
            selected = self.tables[stage][idx]
            stage_inputs.append(residual)
            stage_outputs.append(selected)
            tokens.append(idx)
            if self.training:
                self._update_codebook(stage, residual.detach(), idx)
            quantized = quantized + selected
            residual = residual - selected

        quantized_st = latents + (
            quantized.reshape(batch, frames, dim).transpose(1, 2) - latents
        ).detach()
        token_matrix = torch.stack(tokens, dim=1).reshape(batch, frames, self.num_quantizers)
        return quantized_st, token_matrix, stage_inputs, stage_outputs

    @torch.no_grad()
    def _seed_from_batch(self, stage: int, flat: torch.Tensor) -> None:
        picks = torch.randint(flat.shape[0], (self.codebook_size,))
        seeded = flat[picks] + 1e-3 * torch.randn(self.codebook_size, self.dim, dtype=flat.dtype)
        self.tables[stage] = seeded
        self.ema_weight[stage] = seeded.clone()
        self.ema_cluster_size[stage] = torch.ones(self.codebook_size, dtype=flat.dtype)
        self.initialized[stage] = True

    @torch.no_grad()
    def _update_codebook(self, stage: int, flat: torch.Tensor, idx: torch.Tensor) -> None:
        one_hot = torch.zeros(flat.shape[0], self.codebook_size, dtype=flat.dtype)
        one_hot.scatter_(1, idx[:, None], 1.0)
        counts = one_hot.sum(dim=0)
        dw = one_hot.t() @ flat

        decay = self.ema_decay
        self.ema_cluster_size[stage].mul_(decay).add_(counts, alpha=1 - decay)
        self.ema_weight[stage].mul_(decay).add_(dw, alpha=1 - decay)

        n = self.ema_cluster_size[stage].sum()
        smoothed = (
            (self.ema_cluster_size[stage] + self.eps)
            / (n + self.codebook_size * self.eps)
            * n
        )
        self.tables[stage] = self.ema_weight[stage] / smoothed[:, None]

        used = counts > 0
        self.unused_steps[stage][used] = 0
        self.unused_steps[stage][~used] += 1
        dead = self.unused_steps[stage] >= self.dead_code_steps
        num_dead = int(dead.sum())
        if num_dead:
            source = flat[torch.randint(flat.shape[0], (num_dead,))]
            self.tables[stage][dead] = source
            self.ema_weight[stage][dead] = source
            self.ema_cluster_size[stage][dead] = 1.0
            self.unused_steps[stage][dead] = 0
