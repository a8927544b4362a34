"""Acceptance criteria, one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``.  Two criteria train for
real (the 50-step staged-contract run and the 2,000-step overfit run) and
dominate the runtime; everything else completes in seconds.
"""

import math

import numpy as np
import pytest
import torch

from helpers import (
    MINI_CODEC,
    MINI_SIG,
    TOY_CODEC,
    TOY_DISC,
    TOY_SIG,
    build_toy_corpus,
    make_clip,
    max_relative_grad_error,
    toy_train_cfg,
)
from specodec import bitstream, training
from specodec.config import CodecConfig, SignalConfig
from specodec.discriminators import DiscriminatorBank, miniature_discriminator_config
from specodec.frontend import analyze, mel_filterbank, synthesize
from specodec.losses import (
    LossReport,
    adversarial_terms,
    anti_wrap,
    phase_loss,
    quantization_loss,
    spectral_losses_batch,
)
from specodec.metrics import awpd, lsd
from specodec.model import CodecModel, bitrate_kbps
from specodec.quantizer import (
    LatentSequence,
    ResidualVectorQuantizer,
    TokenSequence,
    dequantize,
    quantize,
)

FULL_SIG = SignalConfig()  # 48 kHz, 320/40/1024


def test_bitrate_law():
    """bitrate_kbps is paper-exact for Q = 3, 4, 8 at zero tolerance."""
    values = {
        q: bitrate_kbps(CodecConfig(num_quantizers=q), FULL_SIG) for q in (3, 4, 8)
    }
    assert values == {3: 4.5, 4: 6.0, 8: 12.0}
    print("\nPASS bitrate law: Q=3 -> 4.5, Q=4 -> 6.0, Q=8 -> 12.0 kbps (exact)")


def test_transform_fidelity():
    """analyze->synthesize round trip < 1e-4 relative L2 on 25 clips."""
    rng = np.random.default_rng(0)
    clips = [
        rng.standard_normal(int(n)).astype(np.float32) * 0.5
        for n in rng.integers(2 * FULL_SIG.frame_length, 48000, size=20)
    ]
    clips += [make_clip(rng, 24000 + 4000 * i, FULL_SIG.sample_rate) for i in range(5)]

    worst = 0.0
    for clip in clips:
        out = synthesize(analyze(clip, FULL_SIG), FULL_SIG).numpy()
        err = np.linalg.norm(out[: len(clip)] - clip) / np.linalg.norm(clip)
        worst = max(worst, err)
    assert worst < 1e-4
    print(f"\nPASS transform fidelity: worst relative L2 over 25 clips = {worst:.2e} < 1e-4")


def test_rvq_correctness():
    """1,000 frames: oracle-exact selection, monotone residual MSE, bit-exact round trip."""
    torch.manual_seed(0)
    rvq = ResidualVectorQuantizer(8, 1024, 32).train()
    for _ in range(120):
        rvq(torch.randn(4, 32, 64))  # fit per-stage codebooks via the EMA path
    books = rvq.codebooks

    torch.manual_seed(1)
    latent = LatentSequence(torch.randn(1000, 32))
    tokens, quantized, norms = quantize(latent, books)

    residual = latent.values.clone()
    checked = 0
    for stage in range(books.num_quantizers):
        table64 = books.tables[stage].double().numpy()
        residual64 = residual.double().numpy()
        for row in range(1000):
            distances = ((residual64[row][None, :] - table64) ** 2).sum(axis=1)
            assert int(distances.argmin()) == int(tokens.indices[row, stage])
            checked += 1
        residual = residual - books.tables[stage][tokens.indices[:, stage]]

    assert all(norms[i + 1] <= norms[i] for i in range(len(norms) - 1))
    assert torch.equal(dequantize(tokens, books).values, quantized.values)
    print(
        f"\nPASS RVQ correctness: {checked} selections oracle-exact, residual MSE "
        f"{norms[0]:.3f} -> {norms[-1]:.3f} non-increasing, round trip bit-exact"
    )


def test_anti_wrap_and_phase_loss_properties():
    """Range/evenness exact and periodicity to input-rounding over 1e5 points;
    phase loss zero under +2*pi*k shifts at 1e-6."""
    rng = np.random.default_rng(2)
    x = torch.tensor(rng.uniform(-100, 100, 100_000))
    value = anti_wrap(x)
    assert float(value.min()) >= 0.0
    assert float(value.max()) <= math.pi
    assert torch.equal(anti_wrap(-x), value)
    ks = torch.tensor(rng.integers(-1000, 1001, 100_000), dtype=torch.float64)
    shifted = anti_wrap(x + 2 * math.pi * ks)
    periodicity_err = float((shifted - value).abs().max())
    assert periodicity_err <= 1e-9  # float64 rounding of x + 2*pi*k itself

    target = torch.tensor(rng.uniform(-3, 3, (16, 33)))
    per_entry_k = torch.tensor(rng.integers(-4, 5, (16, 33)), dtype=torch.float64)
    shift_loss = phase_loss(target + 2 * math.pi * per_entry_k, target)
    assert float(shift_loss) < 1e-6
    print(
        f"\nPASS anti-wrap/phase-loss: range+evenness exact, periodicity err "
        f"{periodicity_err:.1e}, shifted phase loss {float(shift_loss):.1e} < 1e-6"
    )


def _kink_free_mini_pair():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        target_la = torch.tensor(rng.standard_normal((2, 4)))
        target_ph = torch.tensor(rng.uniform(-3, 3, (2, 4)))
        pred_la = target_la + torch.tensor(rng.standard_normal((2, 4))) * 0.5
        pred_ph = target_ph + torch.tensor(
            rng.uniform(0.3, 2.5, (2, 4)) * rng.choice([-1.0, 1.0], (2, 4))
        )
        err = pred_ph - target_ph
        diffs = [err, err[:, 1:] - err[:, :-1], err[1:, :] - err[:-1, :]]
        wrapped = [anti_wrap(d) for d in diffs]
        if all(((w > 0.05) & (w < math.pi - 0.05)).all() for w in wrapped):
            return pred_la, pred_ph, target_la, target_ph
    raise AssertionError("no kink-free miniature configuration found")


def test_gradient_checks():
    """Analytic vs central-difference gradients, miniature model, < 1e-3."""
    mel = mel_filterbank(MINI_SIG, num_filters=3, dtype=torch.float64)
    pred_la, pred_ph, target_la, target_ph = _kink_free_mini_pair()
    worst = {}

    for index, name in enumerate(("amplitude", "phase", "mel", "complex")):
        def of_la(la, index=index):
            return spectral_losses_batch(la, pred_ph, target_la, target_ph, mel)[index]

        def of_ph(ph, index=index):
            return spectral_losses_batch(pred_la, ph, target_la, target_ph, mel)[index]

        errs = []
        if name != "phase":
            errs.append(max_relative_grad_error(of_la, pred_la))
        if name in ("phase", "complex"):
            errs.append(max_relative_grad_error(of_ph, pred_ph))
        worst[name] = max(errs)

    rng = np.random.default_rng(3)
    stage_out = [torch.tensor(rng.standard_normal((2, 4))) for _ in range(2)]
    worst["quantization"] = max_relative_grad_error(
        lambda x: quantization_loss([x, 0.5 * x], stage_out),
        torch.tensor(rng.standard_normal((2, 4))),
    )

    torch.manual_seed(4)
    bank = DiscriminatorBank(miniature_discriminator_config(64)).double()
    real_out = bank(torch.randn(1, 64, dtype=torch.float64) * 0.5)
    fake = torch.randn(1, 64, dtype=torch.float64) * 0.5
    for index, name in enumerate(("adversarial", "disc", "feature_matching")):
        worst[name] = max_relative_grad_error(
            lambda w, index=index: adversarial_terms(real_out, bank(w))[index],
            fake,
            num_coords=12,
            rng=np.random.default_rng(5),
        )

    # end to end through the miniature decoder's parameters
    torch.manual_seed(6)
    model = CodecModel(MINI_CODEC, MINI_SIG).double().eval()
    latent = torch.randn(1, MINI_CODEC.latent_dim, 1, dtype=torch.float64)
    with torch.no_grad():
        base_la, base_ph = model.decoder(latent)
    shift = torch.tensor(
        np.random.default_rng(7).uniform(0.5, 1.5, base_ph.shape)
        * np.random.default_rng(8).choice([-1.0, 1.0], base_ph.shape)
    )
    tgt_la = (base_la + 0.3).detach()
    tgt_ph = (base_ph + shift).detach()

    def end_to_end(flat_weights):
        conv = model.decoder.amplitude_head
        backup = conv.weight.detach().clone()
        with torch.no_grad():
            conv.weight.copy_(flat_weights.reshape(conv.weight.shape))
        la, ph = model.decoder(latent)
        amp, phase_term, mel_term, cx = spectral_losses_batch(
            la.transpose(1, 2), ph.transpose(1, 2),
            tgt_la.transpose(1, 2), tgt_ph.transpose(1, 2), mel,
        )
        out = 4.5 * amp + 10 * phase_term + 4.5 * mel_term + 4.5 * cx
        with torch.no_grad():
            conv.weight.copy_(backup)
        return out

    head = model.decoder.amplitude_head.weight.detach().clone().reshape(-1)
    analytic_holder = head.clone().requires_grad_(True)
    conv = model.decoder.amplitude_head
    with torch.no_grad():
        original = conv.weight.detach().clone()
    # autograd side: run the decoder with the head weight tied to the leaf
    del conv.weight
    conv.weight = analytic_holder.reshape(original.shape)
    la, ph = model.decoder(latent)
    amp, phase_term, mel_term, cx = spectral_losses_batch(
        la.transpose(1, 2), ph.transpose(1, 2),
        tgt_la.transpose(1, 2), tgt_ph.transpose(1, 2), mel,
    )
    (4.5 * amp + 10 * phase_term + 4.5 * mel_term + 4.5 * cx).backward()
    analytic = analytic_holder.grad.detach()
    conv.weight = torch.nn.Parameter(original)

    picks = np.random.default_rng(9).choice(head.numel(), size=8, replace=False)
    scale = max(float(analytic.abs().max()), 1e-6)
    e2e_worst = 0.0
    for flat in picks:
        plus = head.clone(); plus[flat] += 1e-6
        minus = head.clone(); minus[flat] -= 1e-6
        numeric = (
            float(end_to_end(plus).detach()) - float(end_to_end(minus).detach())
        ) / 2e-6
        err = abs(float(analytic[flat]) - numeric) / max(
            abs(numeric), abs(float(analytic[flat])), 1e-3 * scale
        )
        e2e_worst = max(e2e_worst, err)
    worst["end_to_end_decoder"] = e2e_worst

    assert max(worst.values()) < 1e-3, worst
    summary = ", ".join(f"{k}={v:.1e}" for k, v in worst.items())
    print(f"\nPASS gradient checks: {summary} (all < 1e-3)")


@pytest.fixture(scope="module")
def staged_run(tmp_path_factory):
    directory = tmp_path_factory.mktemp("acceptance_staged")
    manifest = build_toy_corpus(directory, TOY_SIG)
    joint = training.train_joint(
        manifest,
        TOY_CODEC,
        toy_train_cfg(50, seed=13),
        signal_cfg=TOY_SIG,
        disc_cfg=TOY_DISC,
        log_path=directory / "joint.jsonl",
    )
    cache = training.export_latents(joint, manifest, directory / "cache")
    individual = training.train_individual(
        joint, cache, toy_train_cfg(50, seed=13), log_path=directory / "individual.jsonl"
    )
    return directory, manifest, joint, cache, individual


def test_staged_training_contracts(staged_run):
    """50-step joint + export + 50-step individual on a 10-clip toy corpus."""
    directory, _, joint, cache, individual = staged_run

    # (a) encoder+quantizer parameter hashes identical before/after
    assert individual.encoder_quantizer_hash() == joint.encoder_quantizer_hash()

    # (b) decoder at individual step 0 differs from joint and is seed-reproducible
    step0_a = training.train_individual(joint, cache, toy_train_cfg(0, seed=13))
    step0_b = training.train_individual(joint, cache, toy_train_cfg(0, seed=13))
    assert step0_a.decoder_hash() == step0_b.decoder_hash()
    assert step0_a.decoder_hash() != joint.decoder_hash()

    # (c) every individual-stage report records quantization weight 0
    lines = (directory / "individual.jsonl").read_text().splitlines()
    assert len(lines) == 50
    reports = [LossReport.from_json_line(line) for line in lines]
    assert all(r.weights["quantization"] == 0.0 for r in reports)
    print(
        "\nPASS staged-training contracts: frozen hash stable, decoder reinit "
        "seed-reproducible and distinct, 50/50 reports carry quantization weight 0"
    )


def test_overfit_smoke(staged_run):
    """2,000 joint steps halve mel+amplitude; individual stage does not increase it.

    Per-step GAN losses fluctuate, so stage-end levels are the mean of the
    last 50 step reports; the step-1 baseline is the first report.
    """
    directory, manifest, _, _, _ = staged_run
    cfg = toy_train_cfg(2000, seed=0)
    joint = training.train_joint(
        manifest,
        TOY_CODEC,
        cfg,
        signal_cfg=TOY_SIG,
        disc_cfg=TOY_DISC,
        log_path=directory / "overfit_joint.jsonl",
    )
    cache = training.export_latents(joint, manifest, directory / "overfit_cache")
    training.train_individual(
        joint, cache, cfg, log_path=directory / "overfit_individual.jsonl"
    )

    def mel_amp_series(path):
        reports = [LossReport.from_json_line(l) for l in path.read_text().splitlines()]
        return [r.terms["mel"] + r.terms["amplitude"] for r in reports]

    joint_series = mel_amp_series(directory / "overfit_joint.jsonl")
    indiv_series = mel_amp_series(directory / "overfit_individual.jsonl")
    step1 = joint_series[0]
    joint_final = float(np.mean(joint_series[-50:]))
    indiv_final = float(np.mean(indiv_series[-50:]))

    assert joint_final < 0.5 * step1
    assert indiv_final <= joint_final
    print(
        f"\nPASS overfit smoke: mel+amp {step1:.3f} -> {joint_final:.3f} "
        f"({joint_final / step1:.1%} of step 1), individual ends at {indiv_final:.3f} (no increase)"
    )


def test_bitstream_acceptance():
    """500 random shapes round-trip bit-exactly; 1-second Q=3 payload = 4.5 kbps."""
    rng = np.random.default_rng(10)
    for trial in range(500):
        frames = int(rng.integers(0, 300))
        num_q = int(rng.integers(1, 9))
        bits = int(rng.integers(1, 17))
        header = bitstream.BitstreamHeader(
            sample_rate=FULL_SIG.sample_rate,
            frame_shift=FULL_SIG.frame_shift,
            down_up_ratio=8,
            num_quantizers=num_q,
            codebook_bits=bits,
            latent_frames=frames,
            original_samples=frames * FULL_SIG.frame_shift * 8,
        )
        tokens = TokenSequence(
            torch.from_numpy(rng.integers(0, 2**bits, (frames, num_q)))
        )
        out, out_header = bitstream.unpack(bitstream.pack(tokens, header))
        assert torch.equal(out.indices, tokens.indices)
        assert out_header == header

    header = bitstream.BitstreamHeader.from_config(
        FULL_SIG, CodecConfig(num_quantizers=3), 150, 48000
    )
    tokens = TokenSequence(torch.from_numpy(rng.integers(0, 1024, (150, 3))))
    data = bitstream.pack(tokens, header)
    payload = len(data) - bitstream.HEADER_SIZE
    assert payload == math.ceil(4500 / 8)  # 4500 bits over 1 s = 4.5 kbps
    assert header.bitrate_kbps == 4.5
    print(
        f"\nPASS bitstream: 500 shapes bit-exact, 1 s Q=3 payload {payload} bytes "
        f"(+{bitstream.HEADER_SIZE} B header) = 4.5 kbps"
    )


def test_metrics_sanity():
    """Identity metrics zero on 10 clips; lsd(2x, x) = 20*log10(2) +- 1e-3 dB."""
    rng = np.random.default_rng(11)
    for i in range(10):
        clip = make_clip(rng, 4000 + 200 * i, TOY_SIG.sample_rate)
        assert lsd(clip, clip, TOY_SIG) == 0.0
        assert awpd(clip, clip, TOY_SIG) == (0.0, 0.0, 0.0)

    clip = make_clip(rng, 8000, TOY_SIG.sample_rate)
    doubled = lsd(2 * clip, clip, TOY_SIG)
    assert doubled == pytest.approx(20 * math.log10(2), abs=1e-3)
    print(
        f"\nPASS metrics sanity: identity metrics zero on 10 clips, "
        f"lsd(2x, x) = {doubled:.4f} dB (target 6.0206 +- 1e-3)"
    )
