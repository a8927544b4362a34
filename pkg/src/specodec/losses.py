"""Training objective terms.

Spectral terms compare decoded and target amplitude/phase matrices; the
quantization term is the summed MSE between each residual stage's input and
(stop-gradient) output; adversarial terms use the least-squares formulation
with feature matching.  Phase errors pass through :func:`anti_wrap`, which
removes the 2*pi ambiguity, so every phase term is invariant to adding
integer multiples of 2*pi to the prediction.

The commitment factor below scales the quantization term inside the
generator objective; the codebook side is updated by moving averages, so the
loss only pulls the encoder toward the codewords.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import torch

from .config import LossWeights, SignalConfig
from .discriminators import DiscriminatorOutput
from .frontend import SpectralPair, mel_filterbank
from .quantizer import LatentSequence

COMMITMENT_WEIGHT = 0.25

TWO_PI = 6.283185307179586


def anti_wrap(x) -> torch.Tensor:
    """Distance of ``x`` from the nearest multiple of 2*pi, in [0, pi].

    Computes ``|x - 2*pi*round(x / 2*pi)|`` with round-half-away-from-zero,
    which fixes the (loss-equivalent) boundary at odd multiples of pi.
    """
    x = torch.as_tensor(x)
    turns = x / TWO_PI
    nearest = torch.sign(turns) * torch.floor(turns.abs() + 0.5)
    return (x - TWO_PI * nearest).abs()


def _mean_or_zero(x: torch.Tensor) -> torch.Tensor:
    if x.numel() == 0:
        return torch.zeros((), dtype=x.dtype)
    return x.mean()


def phase_loss(pred_phase: torch.Tensor, target_phase: torch.Tensor) -> torch.Tensor:
    """Instantaneous-phase, group-delay, and angular-frequency errors, summed.

    Inputs are ``[..., frames, bins]``; the group-delay term differences the
    phase error along the frequency axis, the angular-frequency term along
    the time axis, and all three pass through :func:`anti_wrap`.
    """
    error = pred_phase - target_phase
    ip = anti_wrap(error).mean()
    gd = _mean_or_zero(anti_wrap(error[..., :, 1:] - error[..., :, :-1]))
    iaf = _mean_or_zero(anti_wrap(error[..., 1:, :] - error[..., :-1, :]))
    return ip + gd + iaf


def spectral_losses_batch(
    pred_log_amplitude: torch.Tensor,
    pred_phase: torch.Tensor,
    target_log_amplitude: torch.Tensor,
    target_phase: torch.Tensor,
    mel_weights: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Amplitude, phase, mel, and complex-spectrum terms on [..., frames, bins].

    The complex term is the mean squared modulus of the difference between
    the complex spectra rebuilt from each (amplitude, phase) pair.
    """
    if pred_log_amplitude.shape != target_log_amplitude.shape:
        raise ValueError("prediction and target shapes differ")

    amp = (pred_log_amplitude - target_log_amplitude).pow(2).mean()
    phase = phase_loss(pred_phase, target_phase)

    pred_mag = torch.exp(pred_log_amplitude)
    target_mag = torch.exp(target_log_amplitude)
    mel = (pred_mag @ mel_weights.T - target_mag @ mel_weights.T).abs().mean()

    pred_spec = torch.polar(pred_mag, pred_phase)
    target_spec = torch.polar(target_mag, target_phase)
    diff = pred_spec - target_spec
    complex_term = (diff.real.pow(2) + diff.imag.pow(2)).mean()
    return amp, phase, mel, complex_term


def spectral_losses(
    pred: SpectralPair,
    target: SpectralPair,
    sig: SignalConfig,
    mel_weights: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Single-utterance wrapper around :func:`spectral_losses_batch`."""
    if pred.log_amplitude.shape != target.log_amplitude.shape:
        raise ValueError("prediction and target shapes differ")
    if mel_weights is None:
        mel_weights = mel_filterbank(sig, dtype=pred.log_amplitude.dtype)
    return spectral_losses_batch(
        pred.log_amplitude, pred.phase, target.log_amplitude, target.phase, mel_weights
    )


def quantization_loss(stage_inputs: list, stage_outputs: list) -> torch.Tensor:
    """Sum over stages of MSE(input, stop_gradient(output)).

    Gradients flow only to the stage inputs (the encoder side); codebook
    updates come from moving averages, not this loss.
    """
    if len(stage_inputs) != len(stage_outputs):
        raise ValueError(
            f"{len(stage_inputs)} stage inputs vs {len(stage_outputs)} outputs"
        )
    total = None
    for stage_in, stage_out in zip(stage_inputs, stage_outputs):
        if isinstance(stage_in, LatentSequence):
            stage_in = stage_in.values
        if isinstance(stage_out, LatentSequence):
            stage_out = stage_out.values
        term = (stage_in - stage_out.detach()).pow(2).mean()
        total = term if total is None else total + term
    if total is None:
        return torch.zeros(())
    return total


def adversarial_terms(
    real: DiscriminatorOutput, fake: DiscriminatorOutput
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Least-squares GAN terms plus feature matching.

    Returns ``(gen_loss, disc_loss, fm_loss)``: the discriminator pushes real
    scores to 1 and fake to 0, the generator pushes fake scores to 1, and the
    feature-matching term is the mean of per-map mean absolute differences.
    """
    if len(real.scores) != len(fake.scores):
        raise ValueError("real and fake outputs have different sub-discriminator counts")
    gen = torch.zeros((), dtype=fake.scores[0].dtype)
    disc = torch.zeros((), dtype=fake.scores[0].dtype)
    fm_terms = []
    for real_score, fake_score, real_feats, fake_feats in zip(
        real.scores, fake.scores, real.features, fake.features
    ):
        if len(real_feats) != len(fake_feats):
            raise ValueError("real and fake feature lists have different depths")
        gen = gen + (1.0 - fake_score).pow(2).mean()
        disc = disc + (1.0 - real_score).pow(2).mean() + fake_score.pow(2).mean()
        for rf, ff in zip(real_feats, fake_feats):
            fm_terms.append((rf.detach() - ff).abs().mean())
    fm = torch.stack(fm_terms).mean() if fm_terms else torch.zeros(())
    return gen, disc, fm


GENERATOR_TERMS = (
    "amplitude",
    "phase",
    "mel",
    "complex",
    "quantization",
    "adversarial",
    "feature_matching",
)

_WEIGHT_FIELDS = {
    "amplitude": "w_amp",
    "phase": "w_phase",
    "mel": "w_mel",
    "complex": "w_complex",
    "quantization": "w_quant",
    "adversarial": "w_adv",
    "feature_matching": "w_fm",
}


def term_weights(weights: LossWeights) -> dict[str, float]:
    """Per-term effective weights of the generator objective.

    The quantization entry folds in the commitment factor so that the
    reported ``total == sum(weight * term)`` identity holds exactly.
    """
    out = {name: getattr(weights, attr) for name, attr in _WEIGHT_FIELDS.items()}
    out["quantization"] *= COMMITMENT_WEIGHT
    return out


@dataclass
class LossReport:
    """One optimization step's named loss terms and their weighted total."""

    terms: dict
    weights: dict
    total: float
    extras: dict = field(default_factory=dict)

    @classmethod
    def build(cls, terms: dict, weights: dict, extras: dict | None = None) -> "LossReport":
        total = sum(weights[name] * terms[name] for name in terms)
        return cls(dict(terms), dict(weights), float(total), dict(extras or {}))

    def to_json_line(self) -> str:
        return json.dumps(
            {"terms": self.terms, "weights": self.weights, "total": self.total,
             "extras": self.extras}
        )

    @classmethod
    def from_json_line(cls, line: str) -> "LossReport":
        data = json.loads(line)
        return cls(data["terms"], data["weights"], data["total"], data.get("extras", {}))
