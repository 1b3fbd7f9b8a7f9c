"""Encoder, EMA-codebook vector quantizer, decoder, and the composite loss.

The encoder compresses input frames to a 128-dim latent through dense
blocks (dense -> layernorm -> GELU -> dropout) with a residual skip across
the dimension-preserving 512->512 stage.  The decoder mirrors it and ends
in a plain affine projection.  Codebook entries are never gradient-updated;
they track assigned-latent means by exponential moving average.  Gradients
cross the quantizer by the straight-through rule: whatever arrives at the
quantized vector is copied unchanged onto the continuous latent.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from . import streams
from .errors import FormatError, NumericError, ParameterError, ShapeError

LATENT_DIM = 128
DEFAULT_INPUT_DIM = 1295
DEFAULT_HIDDEN = (1024, 512, 512)
STANDARD_CODEBOOK_SIZES = (32, 64)
EMA_DECAY = 0.99
EPS_LAPLACE = 1e-5
DIVERSITY_TEMPERATURE = 0.1
DROPOUT_RATE = 0.1


@dataclass(frozen=True)
class LossWeights:
    """Outer quantization weight and the inner commit/diversity weights."""

    lam: float = 0.1
    beta: float = 0.25
    gamma: float = 0.1

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0 or self.gamma < 0:
            raise ParameterError("loss weights must be non-negative")


@dataclass
class EncoderNet:
    """Dense-block stack mapping input frames to 128-dim latents."""

    stages: list
    residual_at: int

    @classmethod
    def create(cls, input_dim: int, hidden=DEFAULT_HIDDEN, seed: int = 0) -> "EncoderNet":
        dims = [input_dim, *hidden, LATENT_DIM]
        stages = []
        residual_at = -1
        for i in range(len(dims) - 1):
            rng = streams.stream(seed, streams.PARAM_INIT, layer=i)
            stages.append(_Block.create(dims[i], dims[i + 1], rng))
            if dims[i] == dims[i + 1] and residual_at < 0:
                residual_at = i
        if residual_at < 0:
            raise ParameterError("encoder hidden dims must contain a dimension-preserving stage")
        return cls(stages=stages, residual_at=residual_at)

    @property
    def input_dim(self) -> int:
        return self.stages[0].dense.in_dim

    def forward(self, x, tape=None, dropout_rngs=None, dropout_rate: float = 0.0) -> nk.Node:
        node = nk.wrap(x)
        if node.value.ndim != 2 or node.value.shape[1] != self.input_dim:
            raise ShapeError(f"encoder expects (batch, {self.input_dim}), got {node.value.shape}")
        for i, block in enumerate(self.stages):
            skip = node
            node = block.forward(node, tape, _layer_rng(dropout_rngs, i), dropout_rate)
            if i == self.residual_at:
                node = nk.residual_add(node, skip, tape)
        return node


@dataclass
class DecoderNet:
    """Mirror of the encoder; the last stage is affine with no activation."""

    stages: list
    final: nk.DenseLayer
    residual_at: int

    @classmethod
    def create(cls, output_dim: int, hidden=DEFAULT_HIDDEN, seed: int = 0) -> "DecoderNet":
        rev = tuple(reversed(hidden))
        dims = [LATENT_DIM, *rev]
        stages = []
        residual_at = -1
        for i in range(len(dims) - 1):
            rng = streams.stream(seed, streams.PARAM_INIT, layer=100 + i)
            stages.append(_Block.create(dims[i], dims[i + 1], rng))
            if dims[i] == dims[i + 1] and residual_at < 0:
                residual_at = i
        if residual_at < 0:
            raise ParameterError("decoder hidden dims must contain a dimension-preserving stage")
        final_rng = streams.stream(seed, streams.PARAM_INIT, layer=100 + len(dims))
        return cls(
            stages=stages,
            final=nk.DenseLayer.create(rev[-1], output_dim, final_rng),
            residual_at=residual_at,
        )

    @property
    def output_dim(self) -> int:
        return self.final.out_dim

    def forward(self, z, tape=None, dropout_rngs=None, dropout_rate: float = 0.0) -> nk.Node:
        node = nk.wrap(z)
        if node.value.ndim != 2 or node.value.shape[1] != LATENT_DIM:
            raise ShapeError(f"decoder expects (batch, {LATENT_DIM}), got {node.value.shape}")
        for i, block in enumerate(self.stages):
            skip = node
            node = block.forward(node, tape, _layer_rng(dropout_rngs, i), dropout_rate)
            if i == self.residual_at:
                node = nk.residual_add(node, skip, tape)
        return nk.dense_forward(self.final, node, tape)


@dataclass
class _Block:
    dense: nk.DenseLayer
    norm: nk.LayerNormParams

    @classmethod
    def create(cls, in_dim, out_dim, rng):
        return cls(dense=nk.DenseLayer.create(in_dim, out_dim, rng), norm=nk.LayerNormParams.create(out_dim))

    def forward(self, node, tape, rng, dropout_rate):
        node = nk.dense_forward(self.dense, node, tape)
        node = nk.layernorm_forward(self.norm, node, tape)
        node = nk.gelu_forward(node, tape)
        if rng is not None and dropout_rate > 0.0:
            node, _ = nk.dropout_forward(node, dropout_rate, "train", rng=rng, tape=tape)
        return node


def _layer_rng(dropout_rngs, i):
    if dropout_rngs is None:
        return None
    return dropout_rngs(i)


@dataclass
class Codebook:
    """K x 128 entries with EMA statistics and lifetime usage counts."""

    entries: np.ndarray
    ema_cluster_size: np.ndarray
    ema_embed_sum: np.ndarray
    decay: float
    usage_counts: np.ndarray
    initialized: bool = False

    @classmethod
    def create(cls, k: int, decay: float = EMA_DECAY, allow_nonstandard_k: bool = False) -> "Codebook":
        if k < 2:
            raise ParameterError("codebook needs at least 2 entries")
        if k not in STANDARD_CODEBOOK_SIZES and not allow_nonstandard_k:
            raise ParameterError(
                f"codebook size {k} is non-standard; pass allow_nonstandard_k=True to use it"
            )
        if not 0.0 <= decay < 1.0:
            raise ParameterError(f"EMA decay must lie in [0, 1), got {decay}")
        return cls(
            entries=np.zeros((k, LATENT_DIM)),
            ema_cluster_size=np.zeros(k),
            ema_embed_sum=np.zeros((k, LATENT_DIM)),
            decay=decay,
            usage_counts=np.zeros(k, dtype=np.int64),
            initialized=False,
        )

    @property
    def k(self) -> int:
        return int(self.entries.shape[0])

    @property
    def dim(self) -> int:
        return int(self.entries.shape[1])

    def validate(self):
        if not np.all(np.isfinite(self.entries)):
            raise NumericError("codebook entries contain non-finite values")
        if np.any(self.ema_cluster_size < 0):
            raise NumericError("EMA cluster sizes must be non-negative")

    def initialize_from(self, latents: np.ndarray, rng: np.random.Generator) -> "Codebook":
        """Seed entries by sampling rows of ``latents`` uniformly at random."""
        n = latents.shape[0]
        if n >= self.k:
            idx = rng.choice(n, size=self.k, replace=False)
        else:
            idx = rng.choice(n, size=self.k, replace=True)
        entries = np.array(latents[idx], dtype=np.float64)
        return Codebook(
            entries=entries,
            ema_cluster_size=np.ones(self.k),
            ema_embed_sum=entries.copy(),
            decay=self.decay,
            usage_counts=self.usage_counts.copy(),
            initialized=True,
        )


@dataclass(frozen=True)
class QuantizeResult:
    indices: np.ndarray
    quantized: np.ndarray
    soft_assign: np.ndarray


def _normalize_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise NumericError(f"zero-norm {what} row: normalized distance undefined")
    return x / norms


def _sq_distances(zn: np.ndarray, en: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Exact pairwise squared distances via direct differences, chunked."""
    n, k = zn.shape[0], en.shape[0]
    out = np.empty((n, k))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = zn[start:stop, None, :] - en[None, :, :]
        out[start:stop] = (diff * diff).sum(axis=2)
    return out


def _soft_assign(d2: np.ndarray, tau: float) -> np.ndarray:
    logits = -d2 / tau
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def quantize(book: Codebook, z_e: np.ndarray, tau: float = DIVERSITY_TEMPERATURE) -> QuantizeResult:
    """Nearest codebook entry under L2 over unit-normalized vectors.

    Ties break to the smallest index.  The quantized vector is the raw
    (un-normalized) entry.  Soft assignments are a row softmax of -d2/tau
    over the same normalized distances.
    """
    z_e = np.asarray(z_e, dtype=np.float64)
    if z_e.ndim != 2 or z_e.shape[1] != book.dim:
        raise ShapeError(f"latents must be (batch, {book.dim}), got {z_e.shape}")
    if not np.all(np.isfinite(z_e)):
        raise NumericError("non-finite latents passed to quantize")
    book.validate()
    zn = _normalize_rows(z_e, "latent")
    en = _normalize_rows(book.entries, "codebook entry")
    d2 = _sq_distances(zn, en)
    indices = d2.argmin(axis=1)
    return QuantizeResult(
        indices=indices,
        quantized=book.entries[indices],
        soft_assign=_soft_assign(d2, tau),
    )


def ema_update(book: Codebook, z_e: np.ndarray, indices: np.ndarray) -> Codebook:
    """One EMA step over the batch's hard assignments.

    Unassigned entries simply decay; Laplace smoothing on the cluster sizes
    keeps the entry quotient defined for dead entries.
    """
    z_e = np.asarray(z_e, dtype=np.float64)
    indices = np.asarray(indices)
    k = book.k
    counts = np.bincount(indices, minlength=k).astype(np.float64)
    sums = np.zeros((k, book.dim))
    np.add.at(sums, indices, z_e)
    a = book.decay
    new_size = a * book.ema_cluster_size + (1.0 - a) * counts
    new_sum = a * book.ema_embed_sum + (1.0 - a) * sums
    entries = new_sum / (new_size + EPS_LAPLACE)[:, None]
    return Codebook(
        entries=entries,
        ema_cluster_size=new_size,
        ema_embed_sum=new_sum,
        decay=book.decay,
        usage_counts=book.usage_counts + np.bincount(indices, minlength=k),
        initialized=book.initialized,
    )


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    codebook: float
    commit: float
    diversity: float
    total: float


def diversity_value(soft_assign: np.ndarray) -> float:
    """log K minus the entropy of the batch-mean soft assignment."""
    p = soft_assign.mean(axis=0)
    k = p.shape[0]
    nz = p[p > 0]
    entropy = -float((nz * np.log(nz)).sum())
    return float(np.log(k) - entropy)


def composite_loss(
    x: np.ndarray,
    x_hat: np.ndarray,
    z_e: np.ndarray,
    z_q: np.ndarray,
    soft_assign: np.ndarray,
    weights: LossWeights,
    phase: str,
) -> tuple[float, LossBreakdown]:
    """Reconstruction plus the weighted quantization terms.

    Warmup returns the reconstruction term alone.  In the full phase the
    total is recon + lam * (codebook + beta * commit + gamma * diversity),
    where codebook and commit are the mean per-row squared errors between
    the latent and its entry (with the stop-gradient on opposite sides) and
    diversity is log K minus the entropy of the mean soft assignment, which
    is non-negative and zero exactly at uniform usage.
    """
    if phase not in ("warmup", "full"):
        raise ParameterError(f"phase must be 'warmup' or 'full', got {phase!r}")
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"x {x.shape} vs x_hat {x_hat.shape}")
    n = max(1, x.shape[0])
    recon = float(((x - x_hat) ** 2).sum() / n)
    if phase == "warmup":
        return recon, LossBreakdown(recon, 0.0, 0.0, 0.0, recon)
    z_e = np.asarray(z_e, dtype=np.float64)
    z_q = np.asarray(z_q, dtype=np.float64)
    if z_e.shape != z_q.shape:
        raise ShapeError(f"z_e {z_e.shape} vs z_q {z_q.shape}")
    m = max(1, z_e.shape[0])
    codebook = float(((z_q - z_e) ** 2).sum() / m)
    commit = codebook  # same value; gradients route differently
    diversity = diversity_value(soft_assign)
    total = recon + weights.lam * (codebook + weights.beta * commit + weights.gamma * diversity)
    return total, LossBreakdown(recon, codebook, commit, diversity, total)


def straight_through(z_e_node: nk.Node, z_q_value: np.ndarray, tape: nk.Tape | None = None) -> nk.Node:
    """Forward the quantized value; copy the gradient onto the latent."""
    out = nk.Node(np.asarray(z_q_value, dtype=np.float64))
    if tape is not None:

        def backward():
            if out.grad is not None:
                z_e_node.add_grad(out.grad)

        tape.record(backward)
    return out


def commit_loss_op(z_e_node: nk.Node, z_q_value: np.ndarray, tape: nk.Tape | None = None) -> nk.Node:
    """Mean squared pull of the latent toward its (stop-gradient) entry."""
    z_q_value = np.asarray(z_q_value, dtype=np.float64)
    diff = z_e_node.value - z_q_value
    n = max(1, diff.shape[0])
    out = nk.Node(np.float64((diff * diff).sum() / n))
    if tape is not None:

        def backward():
            if out.grad is not None:
                z_e_node.add_grad(out.grad * 2.0 * diff / n)

        tape.record(backward)
    return out


def diversity_loss_op(
    z_e_node: nk.Node,
    entries: np.ndarray,
    tau: float = DIVERSITY_TEMPERATURE,
    tape: nk.Tape | None = None,
) -> tuple[nk.Node, np.ndarray]:
    """Diversity term as a differentiable function of the latents.

    The soft assignments are a softmax over negative squared normalized
    distances, so the term is smooth in z_e; entries are constants here.
    Returns the scalar node and the soft assignment matrix.
    """
    z = z_e_node.value
    norms = np.sqrt((z * z).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise NumericError("zero-norm latent row: normalized distance undefined")
    zn = z / norms
    en = _normalize_rows(np.asarray(entries, dtype=np.float64), "codebook entry")
    d2 = _sq_distances(zn, en)
    s = _soft_assign(d2, tau)
    n, k = s.shape
    p_bar = s.mean(axis=0)
    value = np.float64(np.log(k) + (p_bar * np.log(p_bar)).sum())
    out = nk.Node(value)
    if tape is not None:

        def backward():
            g = out.grad
            if g is None:
                return
            # dL/ds through p_bar, then the softmax Jacobian, then the
            # distance and the row normalization.
            dp = (np.log(p_bar) + 1.0) / n
            ds = np.broadcast_to(dp, (n, k))
            dot = (ds * s).sum(axis=1, keepdims=True)
            dlogits = s * (ds - dot)
            dd2 = -dlogits / tau
            dzn = 2.0 * (zn * dd2.sum(axis=1, keepdims=True) - dd2 @ en)
            radial = (dzn * zn).sum(axis=1, keepdims=True)
            z_e_node.add_grad(float(g) * (dzn - zn * radial) / norms)

        tape.record(backward)
    return out, s


@dataclass
class VqVae:
    """Full model: encoder, codebook, decoder, loss weights."""

    encoder: EncoderNet
    decoder: DecoderNet
    codebook: Codebook
    weights: LossWeights = field(default_factory=LossWeights)
    dropout_rate: float = DROPOUT_RATE
    tau: float = DIVERSITY_TEMPERATURE
    seed: int = 0
    phase: str = "warmup"

    @classmethod
    def create(
        cls,
        input_dim: int,
        k: int,
        hidden=DEFAULT_HIDDEN,
        seed: int = 0,
        decay: float = EMA_DECAY,
        weights: LossWeights | None = None,
        dropout_rate: float = DROPOUT_RATE,
        allow_nonstandard_k: bool = False,
    ) -> "VqVae":
        return cls(
            encoder=EncoderNet.create(input_dim, hidden, seed),
            decoder=DecoderNet.create(input_dim, hidden, seed),
            codebook=Codebook.create(k, decay, allow_nonstandard_k),
            weights=weights or LossWeights(),
            dropout_rate=dropout_rate,
            seed=seed,
        )

    def named_params(self) -> list[tuple[str, nk.Param]]:
        out = []
        for i, block in enumerate(self.encoder.stages):
            out += [
                (f"enc{i}.weight", block.dense.weight),
                (f"enc{i}.bias", block.dense.bias),
                (f"enc{i}.gain", block.norm.gain),
                (f"enc{i}.shift", block.norm.shift),
            ]
        for i, block in enumerate(self.decoder.stages):
            out += [
                (f"dec{i}.weight", block.dense.weight),
                (f"dec{i}.bias", block.dense.bias),
                (f"dec{i}.gain", block.norm.gain),
                (f"dec{i}.shift", block.norm.shift),
            ]
        out += [("dec_final.weight", self.decoder.final.weight), ("dec_final.bias", self.decoder.final.bias)]
        return out

    def params(self) -> list[nk.Param]:
        return [p for _, p in self.named_params()]

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def _dropout_rngs(self, epoch: int, batch: int):
        def factory(layer: int):
            return streams.stream(self.seed, streams.DROPOUT, epoch, batch, layer)

        def enc(layer):
            return factory(layer)

        def dec(layer):
            return factory(50 + layer)

        return enc, dec

    def train_forward(self, x: np.ndarray, phase: str, epoch: int, batch: int):
        """One training forward pass on a fresh tape.

        Warmup bypasses the quantizer entirely (decoder consumes z_e).  In
        the full phase the reconstruction gradient crosses the quantizer
        straight through, the commitment gradient reaches only the encoder,
        the codebook term is a constant (entries are EMA-owned), and the
        diversity gradient reaches the encoder through the soft assignments.
        Returns (tape, loss node, breakdown, latent values, indices).
        """
        tape = nk.Tape()
        enc_rngs, dec_rngs = self._dropout_rngs(epoch, batch)
        z_node = self.encoder.forward(x, tape, enc_rngs, self.dropout_rate)
        if phase == "warmup":
            x_hat = self.decoder.forward(z_node, tape, dec_rngs, self.dropout_rate)
            loss_node = nk.sq_error_mean(x_hat, x, tape)
            recon = float(loss_node.value)
            breakdown = LossBreakdown(recon, 0.0, 0.0, 0.0, recon)
            return tape, loss_node, breakdown, z_node.value, None
        if not self.codebook.initialized:
            raise ParameterError("full-phase forward requires an initialized codebook")
        q = quantize(self.codebook, z_node.value, self.tau)
        st = straight_through(z_node, q.quantized, tape)
        x_hat = self.decoder.forward(st, tape, dec_rngs, self.dropout_rate)
        recon_node = nk.sq_error_mean(x_hat, x, tape)
        commit_node = commit_loss_op(z_node, q.quantized, tape)
        div_node, soft = diversity_loss_op(z_node, self.codebook.entries, self.tau, tape)
        w = self.weights
        codebook_term = float(commit_node.value)  # same value, no gradient path
        loss_node = nk.affine_combine(
            [recon_node, commit_node, div_node],
            [1.0, w.lam * w.beta, w.lam * w.gamma],
            const=w.lam * codebook_term,
            tape=tape,
        )
        breakdown = LossBreakdown(
            recon=float(recon_node.value),
            codebook=codebook_term,
            commit=float(commit_node.value),
            diversity=float(div_node.value),
            total=float(loss_node.value),
        )
        return tape, loss_node, breakdown, z_node.value, q.indices

    def loss_backward(self, tape: nk.Tape, loss_node: nk.Node) -> dict:
        """Accumulate gradients for a recorded forward pass.

        Returns name -> gradient for every trainable parameter; codebook
        entries never appear (EMA is their only update path).
        """
        nk.backward(tape, loss_node)
        return {name: p.grad for name, p in self.named_params()}

    def eval_latents(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode encoder output (no dropout, no tape)."""
        return self.encoder.forward(x).value


def encode(net: EncoderNet, x: np.ndarray) -> np.ndarray:
    """Eval-mode latents for a batch of frames."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite encoder input")
    return net.forward(x).value


def decode(net: DecoderNet, z: np.ndarray) -> np.ndarray:
    """Eval-mode reconstruction for a batch of latents."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite decoder input")
    return net.forward(z).value


# --- checkpoint container ---------------------------------------------------
#
# Versioned binary layout.  save -> load -> save is byte-identical: metadata
# is canonical JSON (sorted keys) and arrays are written sorted by name.
#
#   magic 'HVQC' | version u8=1 | meta_len u32 | meta JSON utf-8
#   | n_arrays u32 | per array: name_len u16, name, dtype u8, ndim u8,
#     shape u64 * ndim, raw little-endian data

_CKPT_MAGIC = b"HVQC"
_CKPT_VERSION = 1
_DTYPE_CODES = {0: "<f8", 1: "<i8", 2: "|u1"}
_DTYPE_TO_CODE = {np.dtype(np.float64): 0, np.dtype(np.int64): 1, np.dtype(np.uint8): 2}


def save_container(meta: dict, arrays: dict) -> bytes:
    blob = [_CKPT_MAGIC, struct.pack("<B", _CKPT_VERSION)]
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob.append(struct.pack("<I", len(meta_bytes)))
    blob.append(meta_bytes)
    blob.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype not in _DTYPE_TO_CODE:
            raise ParameterError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
        nb = name.encode("utf-8")
        blob.append(struct.pack("<H", len(nb)))
        blob.append(nb)
        blob.append(struct.pack("<BB", _DTYPE_TO_CODE[arr.dtype], arr.ndim))
        blob.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        blob.append(arr.astype(_DTYPE_CODES[_DTYPE_TO_CODE[arr.dtype]], copy=False).tobytes())
    return b"".join(blob)


def load_container(raw: bytes) -> tuple[dict, dict]:
    if len(raw) < 5 or raw[:4] != _CKPT_MAGIC:
        raise FormatError("not a checkpoint container (bad magic)")
    version = raw[4]
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    offset = 5
    (meta_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    meta = json.loads(raw[offset:offset + meta_len].decode("utf-8"))
    offset += meta_len
    (n_arrays,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    arrays = {}
    for _ in range(n_arrays):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        code, ndim = struct.unpack_from("<BB", raw, offset)
        offset += 2
        shape = struct.unpack_from(f"<{ndim}Q", raw, offset)
        offset += 8 * ndim
        dtype = np.dtype(_DTYPE_CODES[code])
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise FormatError(f"checkpoint array {name!r} truncated")
        arrays[name] = np.frombuffer(raw[offset:offset + nbytes], dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError("trailing bytes after checkpoint arrays")
    return meta, arrays


def model_meta(model: VqVae) -> dict:
    return {
        "kind": "vqvae",
        "input_dim": model.encoder.input_dim,
        "hidden": [b.dense.out_dim for b in model.encoder.stages[:-1]],
        "latent_dim": LATENT_DIM,
        "k": model.codebook.k,
        "decay": model.codebook.decay,
        "weights": {"lam": model.weights.lam, "beta": model.weights.beta, "gamma": model.weights.gamma},
        "dropout_rate": model.dropout_rate,
        "tau": model.tau,
        "seed": model.seed,
        "phase": model.phase,
        "codebook_initialized": model.codebook.initialized,
        "refined": False,
    }


def model_arrays(model: VqVae, prefix: str = "model/") -> dict:
    arrays = {prefix + name: p.value for name, p in model.named_params()}
    arrays[prefix + "codebook/entries"] = model.codebook.entries
    arrays[prefix + "codebook/ema_cluster_size"] = model.codebook.ema_cluster_size
    arrays[prefix + "codebook/ema_embed_sum"] = model.codebook.ema_embed_sum
    arrays[prefix + "codebook/usage_counts"] = model.codebook.usage_counts
    return arrays


def save_model(model: VqVae, extra_meta: dict | None = None, extra_arrays: dict | None = None) -> bytes:
    meta = model_meta(model)
    if extra_meta:
        meta.update(extra_meta)
    arrays = model_arrays(model)
    if extra_arrays:
        arrays.update(extra_arrays)
    return save_container(meta, arrays)


def load_model(raw: bytes) -> tuple[VqVae, dict, dict]:
    """Rebuild a model from container bytes; returns (model, meta, arrays)."""
    meta, arrays = load_container(raw)
    if meta.get("kind") != "vqvae":
        raise FormatError("container does not hold a model checkpoint")
    w = meta["weights"]
    model = VqVae.create(
        input_dim=int(meta["input_dim"]),
        k=int(meta["k"]),
        hidden=tuple(int(h) for h in meta["hidden"]),
        seed=int(meta["seed"]),
        decay=float(meta["decay"]),
        weights=LossWeights(w["lam"], w["beta"], w["gamma"]),
        dropout_rate=float(meta["dropout_rate"]),
        allow_nonstandard_k=True,
    )
    model.tau = float(meta["tau"])
    model.phase = meta["phase"]
    for name, p in model.named_params():
        p.value[...] = arrays["model/" + name]
    model.codebook = Codebook(
        entries=arrays["model/codebook/entries"].astype(np.float64),
        ema_cluster_size=arrays["model/codebook/ema_cluster_size"].astype(np.float64),
        ema_embed_sum=arrays["model/codebook/ema_embed_sum"].astype(np.float64),
        decay=float(meta["decay"]),
        usage_counts=arrays["model/codebook/usage_counts"].astype(np.int64),
        initialized=bool(meta["codebook_initialized"]),
    )
    return model, meta, arrays
