"""Post-training codebook cleanup: merge, prune, reassign, renumber.

Merging proceeds greedily from the most similar pair: while any active pair
has cosine similarity above the merge threshold, the higher-usage member
absorbs the other's usage mass and the loser is deactivated.  Pruning then
drops tokens below the usage floor, moving each pruned token's mass to the
nearest surviving entry under the same normalized-L2 metric the quantizer
uses.  Survivors are renumbered densely in descending-usage order.  Usage
is tracked as integer counts throughout, so total mass is conserved
exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tokenizer, vqvae
from .errors import DegeneracyError, NumericError, ParameterError

MERGE_COSINE_THRESHOLD = 0.92
PRUNE_USAGE_FLOOR = 0.02


@dataclass(frozen=True)
class RefineReport:
    """What the cleanup did: merges, prunes, and the surviving id map."""

    merges: list  # (kept_old_id, absorbed_old_id, cosine)
    pruned: list  # (old_id, usage_fraction_at_prune_time)
    id_map: dict  # old id -> new id, survivors only (bijection onto 0..n-1)
    final_active: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "merges": [
                    {"kept": k, "absorbed": a, "cosine": c} for k, a, c in self.merges
                ],
                "pruned": [{"token": t, "usage_fraction": f} for t, f in self.pruned],
                "id_map": {str(k): v for k, v in sorted(self.id_map.items())},
                "final_active": self.final_active,
            },
            sort_keys=True,
            indent=2,
        )


def _unit_rows(entries: np.ndarray) -> np.ndarray:
    norms = np.sqrt((entries * entries).sum(axis=1, keepdims=True))
    if np.any(norms == 0.0):
        raise NumericError("zero-norm codebook entry: cosine similarity undefined")
    return entries / norms


def refine_codebook(
    book: vqvae.Codebook,
    usage_counts,
    merge_threshold: float = MERGE_COSINE_THRESHOLD,
    usage_floor: float = PRUNE_USAGE_FLOOR,
) -> tuple[vqvae.Codebook, RefineReport]:
    """Merge near-duplicates, prune rare tokens, renumber by usage.

    ``usage_counts`` are hard-assignment counts over a reference corpus
    (at least one full pass).  Raises DegeneracyError if fewer than two
    tokens would survive.
    """
    counts = np.asarray(usage_counts, dtype=np.int64).copy()
    k = book.k
    if counts.shape != (k,):
        raise ParameterError(f"usage counts must have length {k}, got {counts.shape}")
    if np.any(counts < 0):
        raise ParameterError("usage counts must be non-negative")
    total = int(counts.sum())
    if total <= 0:
        raise ParameterError("refinement needs usage from at least one corpus pass")

    unit = _unit_rows(book.entries)
    sim = unit @ unit.T
    active = np.ones(k, dtype=bool)
    merges = []
    while True:
        idx = np.flatnonzero(active)
        if idx.size < 2:
            break
        sub = sim[np.ix_(idx, idx)]
        mask = np.triu(np.ones_like(sub, dtype=bool), k=1)
        best_flat = np.argmax(np.where(mask, sub, -np.inf))
        i_sub, j_sub = np.unravel_index(best_flat, sub.shape)
        best_cos = float(sub[i_sub, j_sub])
        if not best_cos > merge_threshold:
            break
        a, b = int(idx[i_sub]), int(idx[j_sub])
        # keep the higher-usage member; ties keep the smaller id
        kept, absorbed = (a, b) if counts[a] >= counts[b] else (b, a)
        counts[kept] += counts[absorbed]
        counts[absorbed] = 0
        active[absorbed] = False
        merges.append((kept, absorbed, best_cos))

    if active.sum() < 2:
        raise DegeneracyError("merging left fewer than 2 tokens")

    fractions = counts / total
    survivors = active & (fractions >= usage_floor)
    if survivors.sum() < 2:
        raise DegeneracyError("pruning would leave fewer than 2 tokens")
    pruned = []
    surv_idx = np.flatnonzero(survivors)
    for old in np.flatnonzero(active & ~survivors):
        frac = float(fractions[old])
        # all of the pruned token's frames sit at its entry; send them to
        # the nearest surviving entry under normalized L2
        d2 = ((unit[old] - unit[surv_idx]) ** 2).sum(axis=1)
        target = int(surv_idx[int(np.argmin(d2))])
        counts[target] += counts[old]
        counts[old] = 0
        pruned.append((int(old), frac))

    order = sorted(surv_idx.tolist(), key=lambda i: (-counts[i], i))
    id_map = {old: new for new, old in enumerate(order)}
    n_final = len(order)

    refined = vqvae.Codebook(
        entries=book.entries[order].copy(),
        ema_cluster_size=book.ema_cluster_size[order].copy(),
        ema_embed_sum=book.ema_embed_sum[order].copy(),
        decay=book.decay,
        usage_counts=counts[order].copy(),
        initialized=book.initialized,
    )
    report = RefineReport(
        merges=merges,
        pruned=pruned,
        id_map=id_map,
        final_active=n_final,
    )
    return refined, report


def refine_model(
    checkpoint: bytes,
    sequences,
    merge_threshold: float = MERGE_COSINE_THRESHOLD,
    usage_floor: float = PRUNE_USAGE_FLOOR,
) -> tuple[bytes, RefineReport]:
    """Produce a refined checkpoint from a trained one and a reference corpus.

    Usage is measured by a full inference pass, the codebook is refined,
    and the stored usage statistics are then re-measured against the
    refined entries so they agree exactly with inference-time assignment.
    """
    model, meta, _ = vqvae.load_model(checkpoint)
    if not model.codebook.initialized:
        raise ParameterError("cannot refine a warmup-only checkpoint")
    usage = tokenizer.corpus_usage(model, sequences)
    refined_book, report = refine_codebook(model.codebook, usage, merge_threshold, usage_floor)
    model.codebook = refined_book
    final_usage = tokenizer.corpus_usage(model, sequences)
    model.codebook = vqvae.Codebook(
        entries=refined_book.entries,
        ema_cluster_size=refined_book.ema_cluster_size,
        ema_embed_sum=refined_book.ema_embed_sum,
        decay=refined_book.decay,
        usage_counts=final_usage,
        initialized=True,
    )
    raw = vqvae.save_model(
        model,
        extra_meta={
            "refined": True,
            "refine_id_map": {str(k): v for k, v in sorted(report.id_map.items())},
            "reference_frames": int(final_usage.sum()),
            "epoch": meta.get("epoch"),
        },
    )
    return raw, report
