"""Data manifests: line-delimited JSON records of training utterances."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import read_wav


@dataclass(frozen=True)
class ManifestEntry:
    utterance_id: str
    audio_path: str
    duration: float


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a JSONL manifest with ``id``, ``audio``, and ``duration`` keys."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
            entries.append(
                ManifestEntry(
                    utterance_id=str(record["id"]),
                    audio_path=str(record["audio"]),
                    duration=float(record["duration"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad manifest record: {exc}") from exc
    return entries


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    with open(path, "w") as handle:
        for entry in entries:
            handle.write(
                json.dumps(
                    {
                        "id": entry.utterance_id,
                        "audio": entry.audio_path,
                        "duration": entry.duration,
                    }
                )
                + "\n"
            )


def load_clips(
    entries: list[ManifestEntry], sample_rate: int
) -> dict[str, np.ndarray]:
    """Read all manifest audio into memory, keyed by utterance id."""
    return {
        entry.utterance_id: read_wav(entry.audio_path, expected_rate=sample_rate)
        for entry in entries
    }
