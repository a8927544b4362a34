"""Objective quality metrics and corpus evaluation.

LSD is the frame-wise RMS over bins of the dB log-magnitude difference
(20*log10 of floored magnitudes), averaged over frames.  The anti-wrapping
phase distances apply :func:`~specodec.losses.anti_wrap` to the phase error
(IP), its frequency-axis difference (GD), and its time-axis difference
(IAF).  GD is converted to seconds by dividing by the bin spacing in rad/s
(2*pi*sample_rate/fft_size) and IAF to rad/s by dividing by the frame period
(frame_shift/sample_rate); both constants are recorded in the report
metadata so cross-implementation comparison stays well-defined.

Frames whose reference magnitude sits entirely at the amplitude floor carry
no phase information and are excluded from the phase metrics; LSD keeps all
frames.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import SignalConfig
from .frontend import analyze
from .losses import anti_wrap

log = logging.getLogger(__name__)


@dataclass
class MetricReport:
    """Objective metrics for one utterance or a corpus aggregate."""

    lsd: float
    awpd_ip: float
    awpd_gd: float
    awpd_iaf: float
    bitrate: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("lsd", "awpd_ip", "awpd_gd", "awpd_iaf", "bitrate"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def metric_conventions(sig: SignalConfig) -> dict:
    """Unit-scaling constants baked into the reported numbers."""
    return {
        "lsd_db_constant": 20.0,
        "gd_seconds_per_radian": sig.fft_size / (2.0 * math.pi * sig.sample_rate),
        "iaf_radians_per_second_per_radian": sig.sample_rate / sig.frame_shift,
    }


def _trim_to_common_length(ref, test) -> tuple[torch.Tensor, torch.Tensor]:
    ref = torch.as_tensor(np.asarray(ref) if not torch.is_tensor(ref) else ref)
    test = torch.as_tensor(np.asarray(test) if not torch.is_tensor(test) else test)
    length = min(ref.shape[-1], test.shape[-1])
    if length == 0:
        raise ValueError("empty waveform")
    return ref[..., :length], test[..., :length]


def lsd(ref, test, sig: SignalConfig) -> float:
    """Log-spectral distance in dB between two waveforms."""
    ref, test = _trim_to_common_length(ref, test)
    ref_pair = analyze(ref, sig)
    test_pair = analyze(test, sig)
    ln_to_db = 20.0 / math.log(10.0)
    diff_db = ln_to_db * (test_pair.log_amplitude - ref_pair.log_amplitude)
    per_frame = diff_db.pow(2).mean(dim=1).sqrt()
    return float(per_frame.mean())


def awpd_from_phases(
    ref_phase: torch.Tensor, test_phase: torch.Tensor, sig: SignalConfig
) -> tuple[float, float, float]:
    """Spectral-domain inner function of :func:`awpd` on [frames, bins] phases."""
    error = test_phase - ref_phase
    ip = anti_wrap(error).mean()

    gd_raw = anti_wrap(error[:, 1:] - error[:, :-1])
    gd = gd_raw.mean() if gd_raw.numel() else torch.zeros(())

    iaf_raw = anti_wrap(error[1:, :] - error[:-1, :])
    iaf = iaf_raw.mean() if iaf_raw.numel() else torch.zeros(())

    conv = metric_conventions(sig)
    return (
        float(ip),
        float(gd) * conv["gd_seconds_per_radian"],
        float(iaf) * conv["iaf_radians_per_second_per_radian"],
    )


def awpd(ref, test, sig: SignalConfig) -> tuple[float, float, float]:
    """Anti-wrapping phase distances ``(ip_rad, gd_seconds, iaf_rad_per_s)``."""
    ref, test = _trim_to_common_length(ref, test)
    ref_pair = analyze(ref, sig)
    test_pair = analyze(test, sig)

    floor_log = math.log(sig.amplitude_floor)
    voiced = ref_pair.log_amplitude.max(dim=1).values > floor_log + 1e-6
    if not bool(voiced.any()):
        raise ValueError("reference is silent; phase metrics are undefined")
    return awpd_from_phases(ref_pair.phase[voiced], test_pair.phase[voiced], sig)


def evaluate_pair(ref, test, sig: SignalConfig, bitrate: float) -> MetricReport:
    """All metrics of one decoded utterance against its reference."""
    ip, gd, iaf = awpd(ref, test, sig)
    return MetricReport(
        lsd=lsd(ref, test, sig),
        awpd_ip=ip,
        awpd_gd=gd,
        awpd_iaf=iaf,
        bitrate=bitrate,
        metadata=metric_conventions(sig),
    )


def aggregate_reports(reports: list[MetricReport]) -> MetricReport:
    if not reports:
        raise ValueError("no reports to aggregate")
    mean = lambda name: float(np.mean([getattr(r, name) for r in reports]))
    return MetricReport(
        lsd=mean("lsd"),
        awpd_ip=mean("awpd_ip"),
        awpd_gd=mean("awpd_gd"),
        awpd_iaf=mean("awpd_iaf"),
        bitrate=reports[0].bitrate,
        metadata=dict(reports[0].metadata, utterances=len(reports)),
    )


def evaluate_corpus(
    manifest_path: str | Path,
    checkpoint,
    out_path: str | Path | None = None,
    decoded_dir: str | Path | None = None,
) -> tuple[MetricReport, list[tuple[str, MetricReport]]]:
    """Encode and decode every manifest utterance, reporting mean metrics.

    Unreadable entries are skipped with a warning; an empty or fully skipped
    manifest is an error.  When ``out_path`` is given, one JSON record per
    utterance plus a final aggregate record are written.  ``decoded_dir``
    keeps the decoded WAV files so external scorers (e.g. a pretrained MOS
    predictor) can be pointed at them; see :func:`run_external_scorer`.
    """
    from .audio import read_wav, write_wav
    from .data import read_manifest
    from .pipeline import CodecPipeline

    pipeline = CodecPipeline.from_checkpoint(checkpoint)
    sig = pipeline.sig
    rate = pipeline.bitrate_kbps
    if decoded_dir is not None:
        decoded_dir = Path(decoded_dir)
        decoded_dir.mkdir(parents=True, exist_ok=True)

    per_utterance: list[tuple[str, MetricReport]] = []
    for entry in read_manifest(manifest_path):
        try:
            ref = read_wav(entry.audio_path, expected_rate=sig.sample_rate)
            decoded = pipeline.roundtrip(ref)
            report = evaluate_pair(ref, decoded, sig, rate)
        except (ValueError, OSError) as exc:
            log.warning("skipping %s: %s", entry.utterance_id, exc)
            continue
        if decoded_dir is not None:
            write_wav(decoded_dir / f"{entry.utterance_id}.wav", decoded, sig.sample_rate)
        per_utterance.append((entry.utterance_id, report))

    if not per_utterance:
        raise ValueError(f"no evaluable utterances in {manifest_path}")
    aggregate = aggregate_reports([r for _, r in per_utterance])

    if out_path is not None:
        with open(out_path, "w") as handle:
            for utt_id, report in per_utterance:
                handle.write(json.dumps({"utterance": utt_id, **report.to_dict()}) + "\n")
            handle.write(json.dumps({"utterance": "__aggregate__", **aggregate.to_dict()}) + "\n")
    return aggregate, per_utterance


def run_external_scorer(command: str, decoded_dir: str | Path) -> str:
    """Hook point for external perceptual scorers (MOS predictors and the like).

    Runs ``command <decoded_dir>`` as a subprocess and returns its stdout;
    no scorer ships with this package.
    """
    import shlex
    import subprocess

    result = subprocess.run(
        [*shlex.split(command), str(decoded_dir)],
        capture_output=True,
        text=True,
        check=True,
    )
    return result.stdout


def format_report_table(aggregate: MetricReport) -> str:
    """Human-readable one-row metric table."""
    header = f"{'Bitrate (kbps)':>14}  {'LSD (dB)':>9}  {'AWPD_IP (rad)':>13}  {'AWPD_GD (s)':>12}  {'AWPD_IAF (rad/s)':>16}"
    row = (
        f"{aggregate.bitrate:>14.2f}  {aggregate.lsd:>9.4f}  {aggregate.awpd_ip:>13.4f}  "
        f"{aggregate.awpd_gd:>12.6f}  {aggregate.awpd_iaf:>16.4f}"
    )
    return header + "\n" + row
