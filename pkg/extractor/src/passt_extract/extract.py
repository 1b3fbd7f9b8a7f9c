"""The extract operation: audio file in, BEEV1 file out."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio, backends, beev
from .errors import CompatibilityError, InputError


@dataclass(frozen=True)
class ExtractConfig:
    output_dir: Path
    backend: str = "passt"
    target_rate: int = audio.TARGET_RATE
    hop_samples: int = backends.HOP_SAMPLES
    expected_dim: int = backends.EXPECTED_DIM

    def __post_init__(self):
        if self.target_rate != audio.TARGET_RATE:
            raise InputError(f"extraction runs at {audio.TARGET_RATE} Hz only")


@dataclass(frozen=True)
class MappingRow:
    recording_id: str
    hive_id: str
    timestamp: str


def read_mapping_csv(path) -> dict[str, MappingRow]:
    """filename -> (recording_id, hive_id, timestamp) for manifest emission."""
    out: dict[str, MappingRow] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"filename", "recording_id", "hive_id", "timestamp"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InputError(f"{path}: mapping needs columns {sorted(required)}")
        for row in reader:
            out[row["filename"]] = MappingRow(
                row["recording_id"], row["hive_id"], row["timestamp"]
            )
    return out


def extract(config: ExtractConfig, audio_path, backend=None, recording_id: str | None = None) -> Path:
    """Run the frozen backend over one audio file and write its BEEV1 file.

    Non-target sample rates are resampled; when that happens the resampler
    choice is recorded in the file's name field after a '|'.
    """
    audio_path = Path(audio_path)
    backend = backend or backends.make_backend(config.backend)
    samples, rate = audio.load_wav(audio_path)
    samples, resampled = audio.to_target_rate(samples, rate)
    if len(samples) == 0:
        raise InputError(f"{audio_path}: no samples after resampling")
    frames = backend.embed(samples)
    if frames.ndim != 2 or frames.shape[1] != config.expected_dim:
        raise CompatibilityError(
            f"backend emitted dim {frames.shape[-1]}, expected {config.expected_dim}"
        )
    if not np.all(np.isfinite(frames)):
        raise CompatibilityError(f"{audio_path}: backend emitted non-finite values")
    name = recording_id or audio_path.stem
    if resampled:
        name = f"{name}|resample={audio.RESAMPLER_TAG}_{rate}to{config.target_rate}"
    out_path = Path(config.output_dir) / f"{name}.beev"
    beev.write_beev(
        out_path,
        recording_id=name,
        frames=frames,
        sample_rate=float(config.target_rate),
        hop_samples=config.hop_samples,
    )
    return out_path


def append_manifest_row(manifest_path, recording_id: str, hive_id: str, timestamp: str) -> None:
    manifest_path = Path(manifest_path)
    new = not manifest_path.exists()
    with open(manifest_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["recording_id", "hive_id", "timestamp"])
        writer.writerow([recording_id, hive_id, timestamp])
