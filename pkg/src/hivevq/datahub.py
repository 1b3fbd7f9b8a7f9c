"""Embedding ingestion, label matching, splits, and the synthetic oracle.

The on-disk container for frame embeddings is BEEV1, a fixed little-endian
layout:

    magic 'BEEV' | version u8=1 | dim u32 | n_frames u64 | sample_rate f32
    | hop_samples u32 | name_len u16 | recording_id utf-8
    | payload n_frames x dim f32, row-major

Reading and writing are byte-exact inverses of each other.
"""

from __future__ import annotations

import csv
import struct
from bisect import bisect_right
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from . import streams
from .errors import (
    AmbiguityError,
    DataError,
    FormatError,
    ParameterError,
    TruncationError,
)

_MAGIC = b"BEEV"
_VERSION = 1
_HEADER = struct.Struct("<4sBIQfIH")

QUEEN_STATUSES = ("QR", "QNL")


@dataclass(frozen=True)
class EmbeddingSequence:
    """One recording's frame embeddings plus timing metadata.

    ``frames`` is an n_frames x dim float32 matrix, one row per time frame.
    """

    recording_id: str
    frames: np.ndarray
    frame_interval_ms: float
    sample_rate_hz: float = 22050.0

    def __post_init__(self):
        arr = np.array(self.frames, dtype=np.float32, order="C", copy=True)
        if arr.ndim != 2:
            raise DataError(f"frames must be 2-D, got ndim={arr.ndim}")
        if arr.shape[1] < 1:
            raise DataError("embedding dimension must be positive")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"non-finite values in frames of {self.recording_id!r}")
        if not self.frame_interval_ms > 0:
            raise DataError(f"frame_interval_ms must be positive, got {self.frame_interval_ms}")
        if not self.sample_rate_hz > 0:
            raise DataError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def hop_samples(self) -> int:
        return int(round(self.frame_interval_ms * self.sample_rate_hz / 1000.0))


@dataclass(frozen=True)
class InspectionRecord:
    hive_id: str
    timestamp: datetime
    queen_status: str

    def __post_init__(self):
        if self.queen_status not in QUEEN_STATUSES:
            raise DataError(f"queen_status must be one of {QUEEN_STATUSES}, got {self.queen_status!r}")
        if self.timestamp.tzinfo is not None:
            raise DataError("inspection timestamps must be timezone-free")


@dataclass(frozen=True)
class ConditionTable:
    """Recording-id to queen-status map; unmatched ids listed separately."""

    entries: dict[str, str]
    unmatched: list[str]


@dataclass(frozen=True)
class SyntheticSpec:
    """Hidden-Markov generator parameters for oracle corpora."""

    n_states: int
    dim: int
    transition: np.ndarray
    means: np.ndarray
    noise_std: float
    n_frames: int
    seed: int

    def __post_init__(self):
        t = np.array(self.transition, dtype=np.float64)
        m = np.array(self.means, dtype=np.float64)
        if self.n_states < 1:
            raise ParameterError("n_states must be positive")
        if self.dim < 1:
            raise ParameterError("dim must be positive")
        if self.n_frames < 1:
            raise ParameterError("n_frames must be positive")
        if t.shape != (self.n_states, self.n_states):
            raise ParameterError(f"transition must be {self.n_states}x{self.n_states}, got {t.shape}")
        if np.any(t < 0):
            raise ParameterError("transition entries must be non-negative")
        if np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-9):
            raise ParameterError("each transition row must sum to 1 within 1e-9")
        if m.shape != (self.n_states, self.dim):
            raise ParameterError(f"means must be {self.n_states}x{self.dim}, got {m.shape}")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be non-negative")
        t.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "means", m)


def read_embedding_file(path) -> EmbeddingSequence:
    """Parse a BEEV1 file into a validated EmbeddingSequence."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise FormatError(f"{path}: not a BEEV1 file (bad magic)")
    if len(raw) < _HEADER.size:
        raise TruncationError(f"{path}: header truncated")
    magic, version, dim, n_frames, sample_rate, hop, name_len = _HEADER.unpack_from(raw, 0)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim == 0:
        raise FormatError(f"{path}: zero embedding dimension")
    if not sample_rate > 0 or hop == 0:
        raise FormatError(f"{path}: invalid timing fields")
    offset = _HEADER.size
    if len(raw) < offset + name_len:
        raise TruncationError(f"{path}: recording id truncated")
    try:
        recording_id = raw[offset:offset + name_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: recording id is not valid UTF-8") from exc
    offset += name_len
    expected = dim * n_frames * 4
    payload = raw[offset:]
    if len(payload) != expected:
        raise TruncationError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}"
        )
    frames = np.frombuffer(payload, dtype="<f4").reshape(n_frames, dim)
    return EmbeddingSequence(
        recording_id=recording_id,
        frames=frames,
        frame_interval_ms=hop / sample_rate * 1000.0,
        sample_rate_hz=float(np.float32(sample_rate)),
    )


def write_embedding_file(seq: EmbeddingSequence, path) -> None:
    """Emit the BEEV1 layout for ``seq``; inverse of read_embedding_file."""
    name = seq.recording_id.encode("utf-8")
    if len(name) > 0xFFFF:
        raise ParameterError("recording_id longer than 65535 bytes")
    header = _HEADER.pack(
        _MAGIC, _VERSION, seq.dim, seq.n_frames, seq.sample_rate_hz, seq.hop_samples, len(name)
    )
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    Path(path).write_bytes(header + name + payload)


def _parse_timestamp(value) -> datetime:
    if not isinstance(value, datetime):
        value = datetime.fromisoformat(value)
    if value.tzinfo is not None:
        raise DataError(f"timestamps must be timezone-free, got {value.isoformat()}")
    return value


def match_conditions(recordings, inspections) -> ConditionTable:
    """Label each recording with the nearest preceding inspection's status.

    ``recordings`` holds (recording_id, hive_id, timestamp) tuples.  An
    inspection at exactly the recording timestamp counts as preceding.
    Recordings whose hive has no inspection at or before their timestamp go
    to ``unmatched``.
    """
    by_hive: dict[str, list[tuple[datetime, str]]] = {}
    seen: set[tuple[str, datetime]] = set()
    for rec in inspections:
        key = (rec.hive_id, rec.timestamp)
        if key in seen:
            raise AmbiguityError(f"duplicate inspection for hive {rec.hive_id!r} at {rec.timestamp}")
        seen.add(key)
        by_hive.setdefault(rec.hive_id, []).append((rec.timestamp, rec.queen_status))
    for rows in by_hive.values():
        rows.sort(key=lambda r: r[0])

    entries: dict[str, str] = {}
    unmatched: list[str] = []
    for recording_id, hive_id, ts in recordings:
        if recording_id in entries or recording_id in unmatched:
            raise AmbiguityError(f"duplicate recording id {recording_id!r}")
        ts = _parse_timestamp(ts)
        rows = by_hive.get(hive_id, [])
        times = [r[0] for r in rows]
        i = bisect_right(times, ts) - 1
        if i < 0:
            unmatched.append(recording_id)
        else:
            entries[recording_id] = rows[i][1]
    return ConditionTable(entries=entries, unmatched=unmatched)


def read_manifest_csv(path) -> list[tuple[str, str, str]]:
    """Rows of the sidecar manifest: (recording_id, hive_id, timestamp)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"recording_id", "hive_id", "timestamp"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(f"{path}: manifest must have columns {sorted(required)}")
        return [(r["recording_id"], r["hive_id"], r["timestamp"]) for r in reader]


def read_inspections_csv(path) -> list[InspectionRecord]:
    """Rows of the inspection table: hive_id, timestamp, queen_status."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"hive_id", "timestamp", "queen_status"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(f"{path}: inspections must have columns {sorted(required)}")
        return [
            InspectionRecord(
                hive_id=r["hive_id"],
                timestamp=_parse_timestamp(r["timestamp"]),
                queen_status=r["queen_status"],
            )
            for r in reader
        ]


def split_recordings(ids, val_fraction: float, seed: int) -> tuple[list, list]:
    """Deterministic disjoint train/validation partition by recording.

    Validation takes max(1, round(val_fraction * n)) recordings; both sides
    must end up non-empty.
    """
    ids = list(ids)
    if not ids:
        raise ParameterError("ids must be non-empty")
    if not 0.0 < val_fraction < 1.0:
        raise ParameterError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n = len(ids)
    n_val = max(1, int(np.floor(val_fraction * n + 0.5)))
    if n_val >= n:
        raise ParameterError(f"cannot split {n} recording(s) into non-empty train and validation sides")
    perm = streams.stream(seed, streams.SPLIT).permutation(n)
    val_idx = set(int(i) for i in perm[:n_val])
    train_ids = [ids[i] for i in range(n) if i not in val_idx]
    val_ids = [ids[i] for i in range(n) if i in val_idx]
    return train_ids, val_ids


def generate_synthetic(
    spec: SyntheticSpec,
    recording_id: str = "synthetic",
    sample_rate_hz: float = 22050.0,
    hop_samples: int = 512,
) -> tuple[EmbeddingSequence, np.ndarray]:
    """Sample a state path and Gaussian emissions from the hidden chain.

    The initial state is uniform; frame i equals means[state_i] plus
    isotropic noise.  Returns the sequence and the hidden path.
    """
    rng = streams.stream(spec.seed, streams.SYNTH)
    cum = np.cumsum(spec.transition, axis=1)
    states = np.empty(spec.n_frames, dtype=np.int64)
    state = int(rng.integers(spec.n_states))
    uniforms = rng.random(spec.n_frames)
    for i in range(spec.n_frames):
        states[i] = state
        nxt = int(np.searchsorted(cum[state], uniforms[i], side="right"))
        state = min(nxt, spec.n_states - 1)
    frames = spec.means[states]
    if spec.noise_std > 0:
        frames = frames + spec.noise_std * rng.standard_normal((spec.n_frames, spec.dim))
    seq = EmbeddingSequence(
        recording_id=recording_id,
        frames=frames.astype(np.float32),
        frame_interval_ms=hop_samples / sample_rate_hz * 1000.0,
        sample_rate_hz=sample_rate_hz,
    )
    return seq, states


def parse_synthetic_config(text: str) -> SyntheticSpec:
    """Build a SyntheticSpec from plain-text key=value lines.

    Matrix-valued keys use ';' between rows and ',' within a row, e.g.
    ``transition=0.9,0.1;0.2,0.8``.
    """
    kv: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()

    missing = {"n_states", "dim", "transition", "means", "noise_std", "n_frames", "seed"} - set(kv)
    if missing:
        raise FormatError(f"synthetic config missing keys: {sorted(missing)}")

    def matrix(value: str) -> np.ndarray:
        return np.array([[float(x) for x in row.split(",")] for row in value.split(";")])

    try:
        return SyntheticSpec(
            n_states=int(kv["n_states"]),
            dim=int(kv["dim"]),
            transition=matrix(kv["transition"]),
            means=matrix(kv["means"]),
            noise_std=float(kv["noise_std"]),
            n_frames=int(kv["n_frames"]),
            seed=int(kv["seed"]),
        )
    except ValueError as exc:
        raise FormatError(f"synthetic config: {exc}") from exc


def format_synthetic_config(spec: SyntheticSpec) -> str:
    """Inverse of parse_synthetic_config, used by the CLI to echo configs."""
    def matrix(a: np.ndarray) -> str:
        return ";".join(",".join(repr(float(x)) for x in row) for row in a)

    lines = [
        f"n_states={spec.n_states}",
        f"dim={spec.dim}",
        f"transition={matrix(spec.transition)}",
        f"means={matrix(spec.means)}",
        f"noise_std={spec.noise_std!r}",
        f"n_frames={spec.n_frames}",
        f"seed={spec.seed}",
    ]
    return "\n".join(lines) + "\n"
