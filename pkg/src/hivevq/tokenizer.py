"""Frozen-model inference: embedding sequences to tokens and latents.

Tokenization is a pure function of the checkpoint bytes and the input
bytes: eval mode only, no dropout, batched in fixed-size frame chunks with
results independent of the chunk size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import vqvae
from .datahub import EmbeddingSequence
from .errors import DataError, ShapeError, StateError

INFERENCE_BATCH_FRAMES = 4096


@dataclass(frozen=True)
class TokenSequence:
    """Frame-aligned discrete token ids for one recording."""

    recording_id: str
    tokens: np.ndarray
    frame_interval_ms: float

    def __post_init__(self):
        arr = np.asarray(self.tokens, dtype=np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "tokens", arr)

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    def to_json(self) -> str:
        return json.dumps(
            {
                "recording_id": self.recording_id,
                "frame_interval_ms": self.frame_interval_ms,
                "tokens": self.tokens.tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "TokenSequence":
        d = json.loads(text)
        return cls(
            recording_id=d["recording_id"],
            tokens=np.asarray(d["tokens"], dtype=np.int64),
            frame_interval_ms=float(d["frame_interval_ms"]),
        )


@dataclass(frozen=True)
class LatentTrajectory:
    """Continuous pre-quantization encoder outputs, one row per frame."""

    recording_id: str
    latents: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.latents, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError("latents must be 2-D")
        if not np.all(np.isfinite(arr)):
            raise DataError("non-finite latents")
        arr.setflags(write=False)
        object.__setattr__(self, "latents", arr)


@dataclass
class InferenceModel:
    model: vqvae.VqVae
    meta: dict

    @property
    def refined(self) -> bool:
        return bool(self.meta.get("refined", False))


def load_inference_model(raw: bytes) -> InferenceModel:
    model, meta, _ = vqvae.load_model(raw)
    return InferenceModel(model=model, meta=meta)


def _coerce(checkpoint) -> InferenceModel:
    if isinstance(checkpoint, (bytes, bytearray)):
        return load_inference_model(bytes(checkpoint))
    if isinstance(checkpoint, InferenceModel):
        return checkpoint
    raise StateError("tokenize expects checkpoint bytes or an InferenceModel")


def tokenize(
    checkpoint,
    seq: EmbeddingSequence,
    raw: bool = False,
    batch_frames: int = INFERENCE_BATCH_FRAMES,
) -> tuple[TokenSequence, LatentTrajectory]:
    """Map one recording to token ids and its latent trajectory.

    Requires a post-refinement checkpoint unless ``raw`` is set; a model
    whose codebook never formed (warmup-only run) is rejected outright.
    """
    inf = _coerce(checkpoint)
    model = inf.model
    if not model.codebook.initialized:
        raise StateError("checkpoint's codebook never initialized; train past warmup first")
    if not inf.refined and not raw:
        raise StateError("checkpoint is pre-refinement; refine it or pass raw=True")
    if seq.dim != model.encoder.input_dim:
        raise ShapeError(f"model expects dim {model.encoder.input_dim}, recording has {seq.dim}")
    n = seq.n_frames
    tokens = np.empty(n, dtype=np.int64)
    latents = np.empty((n, vqvae.LATENT_DIM), dtype=np.float32)
    for start in range(0, n, batch_frames):
        stop = min(start + batch_frames, n)
        x = seq.frames[start:stop].astype(np.float64)
        z = model.eval_latents(x)
        q = vqvae.quantize(model.codebook, z, model.tau)
        tokens[start:stop] = q.indices
        latents[start:stop] = z.astype(np.float32)
    return (
        TokenSequence(seq.recording_id, tokens, seq.frame_interval_ms),
        LatentTrajectory(seq.recording_id, latents),
    )


def corpus_usage(model: vqvae.VqVae, sequences, batch_frames: int = INFERENCE_BATCH_FRAMES) -> np.ndarray:
    """Hard-assignment counts over a full corpus pass (internal, raw ids)."""
    counts = np.zeros(model.codebook.k, dtype=np.int64)
    for seq in sequences:
        for start in range(0, seq.n_frames, batch_frames):
            x = seq.frames[start:start + batch_frames].astype(np.float64)
            z = model.eval_latents(x)
            q = vqvae.quantize(model.codebook, z, model.tau)
            counts += np.bincount(q.indices, minlength=model.codebook.k)
    return counts


def latent_trajectory_sequence(traj: LatentTrajectory, frame_interval_ms: float, sample_rate_hz: float) -> EmbeddingSequence:
    """Package a latent trajectory as a BEEV1-writable sequence (dim 128)."""
    return EmbeddingSequence(
        recording_id=traj.recording_id,
        frames=traj.latents,
        frame_interval_ms=frame_interval_ms,
        sample_rate_hz=sample_rate_hz,
    )
