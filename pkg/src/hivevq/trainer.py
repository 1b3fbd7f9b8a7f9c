"""Two-phase training loop with early stopping and checkpointing.

Epochs 1..warmup_epochs optimize reconstruction only, with the quantizer
fully bypassed.  At the first post-warmup epoch the codebook is seeded from
encoder outputs of that epoch's first batch, and from then on the full
composite loss, quantization, and EMA updates are active.  Early stopping
watches the post-warmup validation loss and never fires while fewer than
floor(K/6) tokens are active.  The run is bit-reproducible: shuffling,
dropout, and initialization all come from counter-based streams keyed by
(seed, epoch, batch, layer), so a run resumed from a checkpoint continues
exactly as the uninterrupted run would have.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import datahub, numkernel as nk, streams, vqvae
from .errors import DivergenceError, ParameterError, StateError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    k: int
    max_epochs: int
    seed: int = 0
    batch_size: int = 256
    learning_rate: float = 1e-3
    warmup_epochs: int = 10
    early_stop_min_delta: float = 0.0005
    early_stop_patience: int = 15
    val_fraction: float = 0.1
    active_token_floor_fraction: float = 0.005
    grad_clip: float | None = 5.0
    hidden: tuple = vqvae.DEFAULT_HIDDEN
    dropout_rate: float = vqvae.DROPOUT_RATE
    decay: float = vqvae.EMA_DECAY
    weights: vqvae.LossWeights = field(default_factory=vqvae.LossWeights)
    allow_nonstandard_k: bool = False

    def __post_init__(self):
        if self.k < 2:
            raise ParameterError("codebook size must be at least 2")
        if self.warmup_epochs > self.max_epochs:
            raise ParameterError("warmup_epochs must not exceed max_epochs")
        if self.early_stop_patience < 1:
            raise ParameterError("patience must be at least 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ParameterError("val_fraction must lie in (0, 1)")

    @property
    def min_active_tokens(self) -> int:
        return self.k // 6


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    phase: str
    train_loss: float
    val_loss: float
    val_recon_loss: float
    perplexity: float
    active_token_count: int

    def __post_init__(self):
        for name in ("train_loss", "val_loss", "val_recon_loss"):
            if not math.isfinite(getattr(self, name)):
                raise DivergenceError(self.epoch, f"{name} is not finite at epoch {self.epoch}")

    def to_json_line(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    best_checkpoint: bytes
    final_checkpoint: bytes
    stats: list


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_params(cls, values) -> "AdamState":
        return cls(m=[np.zeros_like(v) for v in values], v=[np.zeros_like(v) for v in values])


def adam_step(values, grads, state: AdamState, learning_rate: float) -> None:
    """Standard first/second-moment update with bias correction, in place."""
    if len(values) != len(grads) or len(values) != len(state.m):
        raise ParameterError("values, grads, and state must be parallel lists")
    state.t += 1
    c1 = 1.0 - ADAM_BETA1**state.t
    c2 = 1.0 - ADAM_BETA2**state.t
    for val, g, m, v in zip(values, grads, state.m, state.v):
        if val.shape != g.shape:
            raise ParameterError(f"gradient shape {g.shape} does not match value shape {val.shape}")
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        val -= learning_rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def clip_global_norm(grads, max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def compute_perplexity(usage_counts) -> float:
    """exp of the usage-distribution entropy; effective vocabulary size."""
    counts = np.asarray(usage_counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ParameterError("usage counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise ParameterError("perplexity undefined for all-zero usage")
    p = counts / total
    nz = p[p > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))


def early_stop_check(history, stats: EpochStats, config: TrainConfig) -> str:
    """'stop' once the best loss has stagnated for a full patience window
    and the codebook has formed; 'continue' otherwise.

    An improvement of exactly min_delta counts as no improvement.
    """
    history = list(history)
    if not history:
        raise ParameterError("early stop needs at least one post-warmup epoch")
    best = math.inf
    stagnant = 0
    for v in history:
        if best - v > config.early_stop_min_delta:
            best = v
            stagnant = 0
        else:
            stagnant += 1
    if stagnant >= config.early_stop_patience and stats.active_token_count >= config.min_active_tokens:
        return "stop"
    return "continue"


def _config_echo(config: TrainConfig) -> dict:
    d = dataclasses.asdict(config)
    d["hidden"] = list(d["hidden"])
    return d


def _evaluate(model: vqvae.VqVae, val_x: np.ndarray, phase: str, chunk: int = 4096):
    """Eval-mode validation pass; full composite loss once quantizing."""
    n = val_x.shape[0]
    k = model.codebook.k
    recon_sum = 0.0
    quant_sum = 0.0
    soft_sum = np.zeros(k)
    usage = np.zeros(k, dtype=np.int64)
    for start in range(0, n, chunk):
        xc = val_x[start:start + chunk]
        z = model.eval_latents(xc)
        if phase == "full":
            q = vqvae.quantize(model.codebook, z, model.tau)
            x_hat = model.decoder.forward(q.quantized).value
            quant_sum += float(((q.quantized - z) ** 2).sum())
            soft_sum += q.soft_assign.sum(axis=0)
            usage += np.bincount(q.indices, minlength=k)
        else:
            x_hat = model.decoder.forward(z).value
        recon_sum += float(((xc - x_hat) ** 2).sum())
    recon = recon_sum / n
    if phase != "full":
        return recon, recon, usage
    quant = quant_sum / n
    p_bar = soft_sum / n
    nz = p_bar[p_bar > 0]
    diversity = float(np.log(k) + (nz * np.log(nz)).sum())
    w = model.weights
    total = recon + w.lam * (quant + w.beta * quant + w.gamma * diversity)
    return total, recon, usage


def _train_state_meta(epoch, es_history, best_val, best_epoch, stopped_early, config) -> dict:
    return {
        "epoch": epoch,
        "es_history": es_history,
        "best_val": best_val,
        "best_epoch": best_epoch,
        "stopped_early": stopped_early,
        "config": _config_echo(config),
    }


def train(data, config: TrainConfig, instrument=None, resume_from: bytes | None = None) -> TrainResult:
    """Run (or resume) the two-phase loop over a list of EmbeddingSequence.

    Returns the best-validation checkpoint, the final resumable state, and
    the full per-epoch stats history.
    """
    note = instrument or (lambda event, **info: None)
    if len(data) < 2:
        raise ParameterError("need at least 2 recordings to split train/validation")
    ids = [s.recording_id for s in data]
    if len(set(ids)) != len(ids):
        raise ParameterError("recording ids must be unique")
    dims = {s.dim for s in data}
    if len(dims) != 1:
        raise ParameterError(f"recordings disagree on embedding dim: {sorted(dims)}")
    if any(s.n_frames == 0 for s in data):
        raise ParameterError("empty recordings cannot be trained on")
    input_dim = dims.pop()
    total_frames = sum(s.n_frames for s in data)
    if total_frames < config.batch_size:
        raise ParameterError(f"{total_frames} frames < batch size {config.batch_size}")

    by_id = {s.recording_id: s for s in data}
    train_ids, val_ids = datahub.split_recordings(ids, config.val_fraction, config.seed)
    train_x = np.concatenate([by_id[i].frames for i in train_ids]).astype(np.float64)
    val_x = np.concatenate([by_id[i].frames for i in val_ids]).astype(np.float64)
    n_train = train_x.shape[0]

    all_stats: list[EpochStats] = []
    if resume_from is None:
        model = vqvae.VqVae.create(
            input_dim=input_dim,
            k=config.k,
            hidden=config.hidden,
            seed=config.seed,
            decay=config.decay,
            weights=config.weights,
            dropout_rate=config.dropout_rate,
            allow_nonstandard_k=config.allow_nonstandard_k,
        )
        values = [p.value for p in model.params()]
        adam = AdamState.for_params(values)
        start_epoch = 1
        es_history: list[float] = []
        best_val = None
        best_epoch = None
        best_bytes = None
        stopped_early = False
    else:
        model, adam, ts, best_bytes, prior_stats = _load_train_state(resume_from, config, input_dim)
        all_stats.extend(prior_stats)
        start_epoch = ts["epoch"] + 1
        es_history = list(ts["es_history"])
        best_val = ts["best_val"]
        best_epoch = ts["best_epoch"]
        stopped_early = False

    params = model.params()
    values = [p.value for p in params]
    grads = [p.grad for p in params]

    for epoch in range(start_epoch, config.max_epochs + 1):
        phase = "warmup" if epoch <= config.warmup_epochs else "full"
        model.phase = phase
        note("epoch_start", epoch=epoch, phase=phase)
        order = streams.stream(config.seed, streams.SHUFFLE, epoch).permutation(n_train)
        if phase == "full" and not model.codebook.initialized:
            first = train_x[order[: config.batch_size]]
            latents = model.eval_latents(first)
            model.codebook = model.codebook.initialize_from(
                latents, streams.stream(config.seed, streams.CODEBOOK_INIT)
            )
            note("codebook_init", epoch=epoch)

        loss_sum = 0.0
        n_batches = (n_train + config.batch_size - 1) // config.batch_size
        for b in range(n_batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            x = train_x[idx]
            model.zero_grads()
            tape, loss_node, breakdown, z_vals, indices = model.train_forward(x, phase, epoch, b)
            if not math.isfinite(breakdown.total):
                raise DivergenceError(epoch)
            nk.backward(tape, loss_node)
            if config.grad_clip:
                clip_global_norm(grads, config.grad_clip)
            adam_step(values, grads, adam, config.learning_rate)
            if phase == "full":
                model.codebook = vqvae.ema_update(model.codebook, z_vals, indices)
                note("ema_update", epoch=epoch, batch=b)
                note("quantize_loss", epoch=epoch, batch=b)
            loss_sum += breakdown.total * len(idx)

        train_loss = loss_sum / n_train
        val_loss, val_recon, usage = _evaluate(model, val_x, phase)
        if not (math.isfinite(val_loss) and math.isfinite(val_recon)):
            raise DivergenceError(epoch)
        n_val = val_x.shape[0]
        if phase == "full":
            active = int((usage >= config.active_token_floor_fraction * n_val).sum())
            perplexity = compute_perplexity(usage) if usage.sum() > 0 else 0.0
        else:
            active = 0
            perplexity = 0.0
        stats = EpochStats(
            epoch=epoch,
            phase=phase,
            train_loss=train_loss,
            val_loss=val_loss,
            val_recon_loss=val_recon,
            perplexity=perplexity,
            active_token_count=active,
        )
        all_stats.append(stats)
        note("epoch_end", epoch=epoch, stats=stats)

        if phase == "full":
            if best_val is None or val_loss < best_val:
                best_val = val_loss
                best_epoch = epoch
                best_bytes = vqvae.save_model(model, extra_meta={"epoch": epoch})
            es_history.append(val_loss)
            if early_stop_check(es_history, stats, config) == "stop":
                stopped_early = True
                note("early_stop", epoch=epoch)
                break

    if best_bytes is None:
        # warmup-only run: keep the last model, unusable for tokenization
        best_epoch = all_stats[-1].epoch if all_stats else 0
        best_bytes = vqvae.save_model(model, extra_meta={"epoch": best_epoch})

    extra_arrays = {}
    for (name, _), m, v in zip(model.named_params(), adam.m, adam.v):
        extra_arrays[f"adam/m/{name}"] = m
        extra_arrays[f"adam/v/{name}"] = v
    extra_arrays["train/best_checkpoint"] = np.frombuffer(best_bytes, dtype=np.uint8)
    final_bytes = vqvae.save_model(
        model,
        extra_meta={
            "train_state": _train_state_meta(
                all_stats[-1].epoch if all_stats else 0,
                es_history,
                best_val,
                best_epoch,
                stopped_early,
                config,
            ),
            "adam_t": adam.t,
            "stats_history": [dataclasses.asdict(s) for s in all_stats],
        },
        extra_arrays=extra_arrays,
    )
    return TrainResult(best_checkpoint=best_bytes, final_checkpoint=final_bytes, stats=all_stats)


def _load_train_state(raw: bytes, config: TrainConfig, input_dim: int):
    model, meta, arrays = vqvae.load_model(raw)
    if "train_state" not in meta:
        raise StateError("checkpoint is not resumable (no training state)")
    ts = meta["train_state"]
    stored = dict(ts["config"])
    current = _config_echo(config)
    stored.pop("max_epochs")  # resuming with a larger budget is the point
    current.pop("max_epochs")
    if stored != current:
        raise StateError("resume config differs from the checkpointed run")
    if model.encoder.input_dim != input_dim:
        raise StateError(f"checkpoint expects dim {model.encoder.input_dim}, data has {input_dim}")
    m, v = [], []
    for name, _ in model.named_params():
        m.append(arrays[f"adam/m/{name}"].copy())
        v.append(arrays[f"adam/v/{name}"].copy())
    adam = AdamState(m=m, v=v, t=int(meta["adam_t"]))
    best_bytes = arrays["train/best_checkpoint"].tobytes() if "train/best_checkpoint" in arrays else None
    prior_stats = [EpochStats(**d) for d in meta.get("stats_history", [])]
    return model, adam, ts, best_bytes, prior_stats
