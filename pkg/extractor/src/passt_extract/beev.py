"""Standalone BEEV1 writer.

The downstream engine consumes this exact little-endian layout:

    magic 'BEEV' | version u8=1 | dim u32 | n_frames u64 | sample_rate f32
    | hop_samples u32 | name_len u16 | recording_id utf-8
    | payload n_frames x dim f32, row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"BEEV"
_VERSION = 1
_HEADER = struct.Struct("<4sBIQfIH")


def write_beev(path, recording_id: str, frames: np.ndarray, sample_rate: float, hop_samples: int) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2:
        raise ValueError("frames must be 2-D")
    if not np.all(np.isfinite(frames)):
        raise ValueError("frames must be finite")
    name = recording_id.encode("utf-8")
    header = _HEADER.pack(
        _MAGIC, _VERSION, frames.shape[1], frames.shape[0], sample_rate, hop_samples, len(name)
    )
    Path(path).write_bytes(header + name + frames.tobytes())
