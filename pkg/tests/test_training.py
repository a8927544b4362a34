import json

import pytest
import torch

from helpers import TOY_CODEC, TOY_DISC, TOY_SIG, build_toy_corpus, toy_train_cfg
from specodec import bitstream
from specodec.checkpoint import StageCheckpoint, state_dict_hash
from specodec.errors import CacheMismatchError
from specodec.losses import LossReport
from specodec.training import (
    export_latents,
    latent_provider_hash,
    train_individual,
    train_iterative,
    train_joint,
)


def run_joint(toy_corpus, steps, seed=7, **kw):
    return train_joint(
        toy_corpus,
        TOY_CODEC,
        toy_train_cfg(steps, seed=seed),
        signal_cfg=TOY_SIG,
        disc_cfg=TOY_DISC,
        **kw,
    )


@pytest.fixture(scope="module")
def joint_setup(tmp_path_factory):
    directory = tmp_path_factory.mktemp("staged")
    manifest = build_toy_corpus(directory, TOY_SIG)
    ckpt = train_joint(
        manifest,
        TOY_CODEC,
        toy_train_cfg(8),
        signal_cfg=TOY_SIG,
        disc_cfg=TOY_DISC,
        log_path=directory / "joint_loss.jsonl",
    )
    cache = export_latents(ckpt, manifest, directory / "cache")
    return directory, manifest, ckpt, cache


def test_joint_checkpoint_contract(joint_setup):
    _, _, ckpt, _ = joint_setup
    assert ckpt.stage_tag == "joint"
    assert ckpt.frozen_manifest == ()
    assert ckpt.generator_state  # parameters captured


def test_joint_loss_log_has_positive_quant_weight(joint_setup):
    directory, _, _, _ = joint_setup
    lines = (directory / "joint_loss.jsonl").read_text().splitlines()
    assert len(lines) == 8
    for line in lines:
        report = LossReport.from_json_line(line)
        assert report.weights["quantization"] > 0
        assert report.total == pytest.approx(
            sum(report.weights[k] * report.terms[k] for k in report.terms)
        )


def test_joint_training_deterministic_under_seed(toy_corpus):
    a = run_joint(toy_corpus, steps=4, seed=11)
    b = run_joint(toy_corpus, steps=4, seed=11)
    assert state_dict_hash(a.generator_state) == state_dict_hash(b.generator_state)
    assert state_dict_hash(a.discriminator_state) == state_dict_hash(b.discriminator_state)


def test_zero_steps_returns_tagged_initialization(toy_corpus):
    a = run_joint(toy_corpus, steps=0, seed=3)
    b = run_joint(toy_corpus, steps=0, seed=3)
    assert a.stage_tag == "joint"
    assert state_dict_hash(a.generator_state) == state_dict_hash(b.generator_state)


def test_short_clips_skipped_and_all_short_errors(tmp_path):
    manifest = build_toy_corpus(tmp_path, TOY_SIG, num_clips=3, min_samples=1024)
    cfg = toy_train_cfg(1)  # crop_length 2048 > every 1024..1344-sample clip
    with pytest.raises(ValueError):
        train_joint(manifest, TOY_CODEC, cfg, signal_cfg=TOY_SIG, disc_cfg=TOY_DISC)


def test_export_latents_deterministic_and_complete(joint_setup, tmp_path):
    directory, manifest, ckpt, cache = joint_setup
    assert len(cache) == 10
    again = export_latents(ckpt, manifest, tmp_path / "cache2")
    assert again.checkpoint_hash == cache.checkpoint_hash
    for utt_id in cache.entries:
        assert torch.equal(cache.tokens(utt_id).indices, again.tokens(utt_id).indices)


def test_cached_tokens_roundtrip_through_bitstream(joint_setup):
    _, _, ckpt, cache = joint_setup
    for utt_id, entry in cache.entries.items():
        tokens = cache.tokens(utt_id)
        header = bitstream.BitstreamHeader.from_config(
            ckpt.signal_cfg, ckpt.codec_cfg, entry.latent_frames, entry.original_samples
        )
        out, _ = bitstream.unpack(bitstream.pack(tokens, header))
        assert torch.equal(out.indices, tokens.indices)


def test_export_requires_joint_checkpoint(joint_setup, tmp_path):
    _, manifest, ckpt, cache = joint_setup
    individual = train_individual(ckpt, cache, toy_train_cfg(0))
    with pytest.raises(ValueError):
        export_latents(individual, manifest, tmp_path / "cache3")


def test_individual_stage_contracts(joint_setup):
    directory, _, joint, cache = joint_setup
    individual = train_individual(
        joint, cache, toy_train_cfg(8), log_path=directory / "indiv_loss.jsonl"
    )

    # (a) encoder+quantizer copied bit-exactly and untouched by training
    assert individual.encoder_quantizer_hash() == joint.encoder_quantizer_hash()
    # (b) decoder reinitialized: parameters differ from the joint decoder
    assert individual.decoder_hash() != joint.decoder_hash()
    assert individual.stage_tag == "individual"
    assert individual.frozen_manifest == ("encoder", "quantizer")

    # (c) every step report records quantization weight 0 and term 0
    lines = (directory / "indiv_loss.jsonl").read_text().splitlines()
    assert len(lines) == 8
    for line in lines:
        report = LossReport.from_json_line(line)
        assert report.weights["quantization"] == 0.0
        assert report.terms["quantization"] == 0.0


def test_individual_reinit_is_seed_reproducible(joint_setup):
    _, _, joint, cache = joint_setup
    a = train_individual(joint, cache, toy_train_cfg(0, seed=21))
    b = train_individual(joint, cache, toy_train_cfg(0, seed=21))
    c = train_individual(joint, cache, toy_train_cfg(0, seed=22))
    assert a.decoder_hash() == b.decoder_hash()
    assert a.decoder_hash() != c.decoder_hash()
    assert state_dict_hash(a.discriminator_state) == state_dict_hash(b.discriminator_state)


def test_stale_cache_is_a_hard_error(joint_setup, toy_corpus):
    _, _, _, cache = joint_setup
    other = run_joint(toy_corpus, steps=1, seed=99)
    with pytest.raises(CacheMismatchError):
        train_individual(other, cache, toy_train_cfg(1))


def test_frozen_modules_constant_throughout_individual_stage(joint_setup):
    """Parameter hash of encoder+quantizer sampled during training never moves."""
    _, _, joint, cache = joint_setup
    hashes = []
    for steps in (0, 2, 5):
        ckpt = train_individual(joint, cache, toy_train_cfg(steps))
        hashes.append(ckpt.encoder_quantizer_hash())
    assert set(hashes) == {joint.encoder_quantizer_hash()}


def test_learning_rate_schedule_per_epoch(toy_corpus):
    # 10 usable clips / batch 4 -> 3 steps per epoch; 9 steps = 3 full epochs
    cfg = toy_train_cfg(9)
    log = {}

    ckpt = train_joint(
        toy_corpus,
        TOY_CODEC,
        cfg,
        signal_cfg=TOY_SIG,
        disc_cfg=TOY_DISC,
        log_path=None,
        start=None,
    )
    state = ckpt.opt_g_state["param_groups"][0]
    assert state["lr"] == pytest.approx(cfg.initial_lr * cfg.lr_decay_per_epoch**3, rel=1e-12)


def test_checkpoint_save_load_round_trip(joint_setup, tmp_path):
    _, _, joint, _ = joint_setup
    path = tmp_path / "joint.pt"
    joint.save(path)
    loaded = StageCheckpoint.load(path)
    assert loaded.stage_tag == joint.stage_tag
    assert loaded.encoder_quantizer_hash() == joint.encoder_quantizer_hash()
    assert loaded.codec_cfg == joint.codec_cfg
    assert loaded.disc_cfg == joint.disc_cfg


def test_iterative_mode_control_flow_and_hash_chain(joint_setup, tmp_path):
    _, manifest, joint, cache = joint_setup
    start = train_individual(joint, cache, toy_train_cfg(2))
    work = tmp_path / "iterative"
    checkpoints = train_iterative(
        start,
        manifest,
        toy_train_cfg(2),
        iterations=2,
        work_dir=work,
        evaluate=True,
    )
    assert [c.stage_tag for c in checkpoints] == [
        "iteration-1/joint",
        "iteration-1/individual",
        "iteration-2/joint",
        "iteration-2/individual",
    ]

    rows = [json.loads(line) for line in (work / "iteration_reports.jsonl").read_text().splitlines()]
    assert len(rows) == 2  # one metric report row per iteration

    # each iteration's cache binds to that iteration's joint checkpoint
    for k, row in enumerate(rows, start=1):
        index = json.loads((work / f"iteration-{k}" / "cache" / "index.json").read_text())
        joint_k = checkpoints[2 * (k - 1)]
        assert index["checkpoint_hash"] == latent_provider_hash(joint_k)
        assert row["cache_hash"] == latent_provider_hash(joint_k)
        assert "lsd" in row

    with pytest.raises(ValueError):
        train_iterative(start, manifest, toy_train_cfg(1), iterations=0, work_dir=work)


def test_empty_manifest_is_an_error(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    with pytest.raises(ValueError):
        train_joint(empty, TOY_CODEC, toy_train_cfg(1), signal_cfg=TOY_SIG)
