"""WAV decoding and resampling to the extractor's working rate."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import InputError

TARGET_RATE = 22050
RESAMPLER_TAG = "poly"  # polyphase FIR, scipy.signal.resample_poly

_PCM_SCALE = {1: 127.0, 2: 32767.0, 4: 2147483647.0}


def load_wav(path) -> tuple[np.ndarray, int]:
    """Mono float64 samples in [-1, 1] plus the file's sample rate."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            rate = wf.getframerate()
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise InputError(f"{path}: cannot decode WAV: {exc}") from exc
    if n_frames == 0:
        raise InputError(f"{path}: zero-length audio")
    if width not in (1, 2, 4):
        raise InputError(f"{path}: unsupported sample width {width}")
    if width == 1:
        samples = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0
    else:
        dtype = "<i2" if width == 2 else "<i4"
        samples = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    samples /= _PCM_SCALE[width]
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels).mean(axis=1)
    return samples, rate


def to_target_rate(samples: np.ndarray, rate: int) -> tuple[np.ndarray, bool]:
    """Resample to TARGET_RATE; returns (samples, resampled?)."""
    if rate == TARGET_RATE:
        return samples, False
    if rate <= 0:
        raise InputError(f"invalid sample rate {rate}")
    g = np.gcd(int(rate), TARGET_RATE)
    out = resample_poly(samples, TARGET_RATE // g, int(rate) // g)
    return out, True
