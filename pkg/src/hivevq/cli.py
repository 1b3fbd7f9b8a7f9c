"""Command-line surface for the full pipeline.

Subcommands: synth, train, tokenize, eval-state, eval-temporal,
eval-generalize, report.  Every command echoes its resolved configuration
into the output directory and, for a fixed seed and inputs, produces
byte-identical artifacts (no timestamps are written).  Exit codes: 0
success, 1 internal or numeric failure, 2 bad input.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import sys
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from . import datahub, metrics_state, metrics_temporal, refine, tokenizer, trainer
from .errors import (
    AmbiguityError,
    DataError,
    DegeneracyError,
    FormatError,
    HiveVqError,
    NumericError,
    ParameterError,
    ShapeError,
    StateError,
)

WORKERS_ENV = "HIVEVQ_WORKERS"

_INPUT_ERRORS = (
    FormatError,
    DataError,
    ParameterError,
    ShapeError,
    AmbiguityError,
    DegeneracyError,
    FileNotFoundError,
    NotADirectoryError,
    IsADirectoryError,
)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _echo_config(args: argparse.Namespace, out_dir: Path) -> None:
    skip = {"func", "config"}
    lines = []
    for key in sorted(vars(args)):
        if key in skip:
            continue
        value = getattr(args, key)
        if isinstance(value, Path):
            value = str(value)
        lines.append(f"{key}={value}")
    (out_dir / "run_config.txt").write_text("\n".join(lines) + "\n")


def _list_embedding_files(embeddings_dir: Path, manifest_rows=None) -> list[Path]:
    if not embeddings_dir.is_dir():
        raise FileNotFoundError(f"embeddings directory not found: {embeddings_dir}")
    if manifest_rows is not None:
        paths = [embeddings_dir / f"{rid}.beev" for rid, _, _ in manifest_rows]
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise FileNotFoundError(f"embedding files missing for manifest entries: {missing}")
        return sorted(paths)
    paths = sorted(embeddings_dir.glob("*.beev"))
    if not paths:
        raise FileNotFoundError(f"no .beev files under {embeddings_dir}")
    return paths


def _load_sequences(paths) -> list[datahub.EmbeddingSequence]:
    return [datahub.read_embedding_file(p) for p in paths]


def _read_token_dir(tokens_dir: Path) -> dict[str, tokenizer.TokenSequence]:
    tokens_dir = Path(tokens_dir)
    if not tokens_dir.is_dir():
        raise FileNotFoundError(f"token directory not found: {tokens_dir}")
    out = {}
    for path in sorted(tokens_dir.glob("*.tokens.json")):
        seq = tokenizer.TokenSequence.from_json(path.read_text())
        out[seq.recording_id] = seq
    if not out:
        raise FileNotFoundError(f"no *.tokens.json files under {tokens_dir}")
    return out


def _token_space(token_seqs) -> int:
    top = 0
    for seq in token_seqs:
        if len(seq):
            top = max(top, int(seq.tokens.max()))
    return top + 1


# --- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = datahub.parse_synthetic_config(Path(args.config_file).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = date.fromisoformat(args.start_date)
    manifest_path = out / "manifest.csv"
    new_manifest = not manifest_path.exists()
    with open(manifest_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new_manifest:
            writer.writerow(["recording_id", "hive_id", "timestamp"])
        for i in range(args.recordings):
            rec_spec = datahub.SyntheticSpec(
                n_states=spec.n_states,
                dim=spec.dim,
                transition=spec.transition,
                means=spec.means,
                noise_std=spec.noise_std,
                n_frames=spec.n_frames,
                seed=spec.seed + i,
            )
            rid = f"{args.prefix}_{i:03d}"
            seq, states = datahub.generate_synthetic(rec_spec, recording_id=rid)
            datahub.write_embedding_file(seq, out / f"{rid}.beev")
            _write_json(out / f"truth_{rid}.json", {"recording_id": rid, "states": states.tolist()})
            ts = datetime.combine(start + timedelta(days=i), datetime.min.time()).replace(hour=12)
            writer.writerow([rid, args.hive_id, ts.isoformat()])
    if args.condition:
        insp_path = out / "inspections.csv"
        new_insp = not insp_path.exists()
        with open(insp_path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new_insp:
                writer.writerow(["hive_id", "timestamp", "queen_status"])
            ts = datetime.combine(start - timedelta(days=1), datetime.min.time())
            writer.writerow([args.hive_id, ts.isoformat(), args.condition])
    (out / f"synth_config_{args.prefix}.txt").write_text(datahub.format_synthetic_config(spec))
    _echo_config(args, out)
    print(f"wrote {args.recordings} recordings to {out}")
    return 0


# --- train -------------------------------------------------------------------


def _parse_hidden(text: str) -> tuple:
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise ParameterError(f"bad hidden dims {text!r}") from exc
    if not dims:
        raise ParameterError("hidden dims must be non-empty")
    return dims


def cmd_train(args) -> int:
    manifest_rows = datahub.read_manifest_csv(args.manifest) if args.manifest else None
    paths = _list_embedding_files(Path(args.embeddings), manifest_rows)
    data = _load_sequences(paths)
    grad_clip = None if args.grad_clip in ("none", "0") else float(args.grad_clip)
    config = trainer.TrainConfig(
        k=args.codebook_size,
        max_epochs=args.max_epochs,
        seed=args.seed,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        warmup_epochs=args.warmup_epochs,
        early_stop_min_delta=args.min_delta,
        early_stop_patience=args.patience,
        val_fraction=args.val_fraction,
        active_token_floor_fraction=args.active_floor,
        grad_clip=grad_clip,
        hidden=_parse_hidden(args.hidden),
        dropout_rate=args.dropout,
        decay=args.decay,
        allow_nonstandard_k=args.allow_nonstandard_k,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = trainer.train(data, config)
    (out / "checkpoint.hvqc").write_bytes(result.best_checkpoint)
    (out / "final_state.hvqc").write_bytes(result.final_checkpoint)
    (out / "epochs.jsonl").write_text("".join(s.to_json_line() + "\n" for s in result.stats))
    refined_bytes, report = refine.refine_model(
        result.best_checkpoint, data, args.merge_threshold, args.usage_floor
    )
    (out / "refined.hvqc").write_bytes(refined_bytes)
    (out / "refine_report.json").write_text(report.to_json() + "\n")
    _echo_config(args, out)
    last = result.stats[-1]
    print(
        f"trained {last.epoch} epochs; val recon {last.val_recon_loss:.6f}; "
        f"{report.final_active} tokens survive refinement"
    )
    return 0


# --- tokenize ----------------------------------------------------------------


def cmd_tokenize(args) -> int:
    checkpoint = Path(args.checkpoint).read_bytes()
    inf = tokenizer.load_inference_model(checkpoint)
    paths = _list_embedding_files(Path(args.embeddings))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def work(path: Path) -> str:
        seq = datahub.read_embedding_file(path)
        toks, traj = tokenizer.tokenize(inf, seq, raw=args.raw)
        (out / f"{seq.recording_id}.tokens.json").write_text(toks.to_json() + "\n")
        latent_seq = tokenizer.latent_trajectory_sequence(
            traj, seq.frame_interval_ms, seq.sample_rate_hz
        )
        datahub.write_embedding_file(latent_seq, out / f"{seq.recording_id}.latents.beev")
        return seq.recording_id

    workers = args.workers
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(work, paths))
    else:
        done = [work(p) for p in paths]
    _echo_config(args, out)
    print(f"tokenized {len(done)} recordings into {out}")
    return 0


# --- eval-state --------------------------------------------------------------


def _conditions_from_args(args, token_map) -> tuple[dict, list]:
    rows = datahub.read_manifest_csv(args.manifest)
    inspections = datahub.read_inspections_csv(args.inspections)
    table = datahub.match_conditions(rows, inspections)
    matched = {rid: cond for rid, cond in table.entries.items() if rid in token_map}
    manifest_ids = {rid for rid, _, _ in rows}
    unmatched = [rid for rid in table.unmatched if rid in token_map]
    unmatched += [rid for rid in token_map if rid not in manifest_ids]
    if unmatched and args.strict:
        raise DataError(f"unmatched recordings under --strict: {sorted(unmatched)}")
    return matched, unmatched


def cmd_eval_state(args) -> int:
    token_map = _read_token_dir(Path(args.tokens))
    matched, unmatched = _conditions_from_args(args, token_map)
    by_condition: dict[str, list[str]] = {}
    for rid, cond in sorted(matched.items()):
        by_condition.setdefault(cond, []).append(rid)
    if set(by_condition) != {"QR", "QNL"}:
        raise ParameterError(
            f"need two conditions (QR and QNL); found {sorted(by_condition) or 'none'}"
        )

    n_tokens = _token_space(token_map.values())
    dists = {
        cond: metrics_state.token_distribution(
            cond, [token_map[r] for r in rids], n_tokens, args.activity_threshold
        )
        for cond, rids in by_condition.items()
    }
    divergence = metrics_state.jsd(dists["QR"], dists["QNL"])

    latents_dir = Path(args.latents)

    def stack_latents(rids):
        parts = []
        for rid in rids:
            seq = datahub.read_embedding_file(latents_dir / f"{rid}.latents.beev")
            parts.append(seq.frames.astype(np.float64))
        return np.concatenate(parts)

    lat_qr = stack_latents(by_condition["QR"])
    lat_qnl = stack_latents(by_condition["QNL"])
    silhouette = metrics_state.silhouette_two_conditions(
        lat_qr, lat_qnl, sample_size=args.silhouette_sample, seed=args.seed
    )
    outliers = metrics_state.outlier_fraction(lat_qnl, lat_qr.mean(axis=0), lat_qnl.mean(axis=0))

    qnl_tokens = np.concatenate([token_map[r].tokens for r in by_condition["QNL"]])
    km = metrics_state.kmeans(lat_qnl, args.substates, seed=args.seed)
    sub_report = metrics_state.substate_report(km.assignments, qnl_tokens)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    proj, explained = metrics_state.pca_project(lat_qnl, min(2, lat_qnl.shape[1]))
    with open(out / "qnl_pca.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording_id", "frame", "pc1", "pc2", "substate"])
        row = 0
        for rid in by_condition["QNL"]:
            n = len(token_map[rid])
            for i in range(n):
                writer.writerow(
                    [rid, i, repr(float(proj[row, 0])), repr(float(proj[row, 1])), int(km.assignments[row])]
                )
                row += 1

    embeddings_dir = Path(args.embeddings)
    frames_by_substate: dict[str, list] = {}
    row = 0
    for rid in by_condition["QNL"]:
        seq = datahub.read_embedding_file(embeddings_dir / f"{rid}.beev")
        n = seq.n_frames
        for s in range(args.substates):
            mask = km.assignments[row:row + n] == s
            if mask.any():
                frames_by_substate.setdefault(str(s), []).append(seq.frames[mask].astype(np.float64))
        row += n
    profiles = metrics_state.feature_deviation_profile(
        {label: np.concatenate(chunks) for label, chunks in frames_by_substate.items()}
    )
    labels = sorted(profiles)
    with open(out / "substate_feature_deviation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dim"] + [f"substate_{s}" for s in labels])
        dim = len(next(iter(profiles.values())))
        for d in range(dim):
            writer.writerow([d] + [repr(float(profiles[s][d])) for s in labels])

    with open(out / "token_usage.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["token", "qr_fraction", "qnl_fraction"])
        for t in range(n_tokens):
            writer.writerow(
                [t, repr(float(dists["QR"].probabilities[t])), repr(float(dists["QNL"].probabilities[t]))]
            )

    payload = {
        "jsd": divergence,
        "conditions": {
            cond: {
                "recordings": len(by_condition[cond]),
                "frames": d.total_frames,
                "active_tokens": len(d.active),
                "total_tokens": n_tokens,
                "entropy_bits": d.entropy_bits,
                "top_token": d.top_token,
                "top_token_pct": d.top_token_fraction * 100.0,
            }
            for cond, d in dists.items()
        },
        "silhouette": silhouette,
        "qnl_outlier_pct": outliers * 100.0,
        "substates": [
            {
                "size_pct": c.size_pct,
                "dominant_token": c.dominant_token,
                "purity_pct": c.purity_pct,
            }
            for c in sub_report.clusters
        ],
        "pca_explained_variance": [float(e) for e in explained],
        "unmatched_recordings": sorted(unmatched),
    }
    _write_json(out / "state_report.json", payload)
    _echo_config(args, out)
    print(f"state report written to {out / 'state_report.json'} (JSD {divergence:.4f})")
    return 0


# --- eval-temporal -----------------------------------------------------------


def cmd_eval_temporal(args) -> int:
    token_map = _read_token_dir(Path(args.tokens))
    seqs = [token_map[r] for r in sorted(token_map)]
    n_tokens = args.n_tokens or _token_space(seqs)
    model = metrics_temporal.build_transitions(seqs, n_tokens)
    if not model.active:
        raise ParameterError("no transitions found (all recordings shorter than 2 frames)")
    entropy = metrics_temporal.transition_entropy(model)
    active = list(model.active)
    sub = model.counts[np.ix_(active, active)]
    independence = metrics_temporal.chi2_independence(sub)
    per_token = []
    for pos, tok in enumerate(active):
        row = sub[pos]
        entry = {
            "token": int(tok),
            "entropy_bits": entropy.per_token[tok],
            "self_probability": float(model.probs[tok, tok]),
        }
        if row.sum() > 0 and row.size >= 2:
            gof = metrics_temporal.chi2_goodness_of_fit(row)
            entry["gof"] = {
                "statistic": gof.statistic,
                "df": gof.degrees_of_freedom,
                "p": gof.p_value,
                "reject_05": gof.reject_05,
                "low_count": gof.low_count,
            }
        per_token.append(entry)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "transitions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from", "to", "count", "probability"])
        for i in active:
            for j in active:
                writer.writerow([i, j, int(model.counts[i, j]), repr(float(model.probs[i, j]))])

    payload = {
        "active_tokens": len(active),
        "total_tokens": n_tokens,
        "transitions_total": int(model.counts.sum()),
        "self_transition_pct": model.self_transition_fraction * 100.0,
        "entropy_mean": entropy.mean,
        "entropy_std": entropy.std,
        "entropy_h_max": entropy.h_max,
        "entropy_ratio": entropy.ratio,
        "chi2": {
            "statistic": independence.statistic,
            "df": independence.degrees_of_freedom,
            "p": independence.p_value,
            "reject_05": independence.reject_05,
            "reject_001": independence.reject_001,
            "low_count": independence.low_count,
        },
        "per_token": per_token,
    }
    _write_json(out / "temporal_report.json", payload)
    _echo_config(args, out)
    print(
        f"temporal report written to {out / 'temporal_report.json'} "
        f"(chi2 p={independence.p_value:.3e})"
    )
    return 0


# --- eval-generalize ---------------------------------------------------------


def cmd_eval_generalize(args) -> int:
    train_map = _read_token_dir(Path(args.train_tokens))
    test_map = _read_token_dir(Path(args.test_tokens))
    n_tokens = max(_token_space(train_map.values()), _token_space(test_map.values()))
    train_dist = metrics_state.token_distribution(
        "train", [train_map[r] for r in sorted(train_map)], n_tokens, args.activity_threshold
    )
    test_dist = metrics_state.token_distribution(
        "test", [test_map[r] for r in sorted(test_map)], n_tokens, args.activity_threshold
    )
    result = metrics_state.generalization_metrics(train_dist, test_dist)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "jaccard": result.jaccard,
        "jsd": result.jsd,
        "verdict": result.verdict,
        "train_active": len(train_dist.active),
        "test_active": len(test_dist.active),
    }
    _write_json(out / "generalization_report.json", payload)
    _echo_config(args, out)
    print(f"generalization: jaccard={result.jaccard:.4f} jsd={result.jsd:.4f} ({result.verdict})")
    return 0


# --- report ------------------------------------------------------------------


def cmd_report(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise FileNotFoundError(f"run directory not found: {run}")
    summary: dict = {}
    epochs_path = run / "epochs.jsonl"
    if epochs_path.exists():
        lines = [json.loads(line) for line in epochs_path.read_text().splitlines() if line.strip()]
        if lines:
            last = lines[-1]
            summary["model"] = {
                "epochs": last["epoch"],
                "final_val_recon_loss": last["val_recon_loss"],
                "final_perplexity": last["perplexity"],
                "final_active_tokens": last["active_token_count"],
            }
    for name, key in [
        ("refine_report.json", "refinement"),
        ("state_report.json", "state"),
        ("temporal_report.json", "temporal"),
        ("generalization_report.json", "generalization"),
    ]:
        path = run / name
        if path.exists():
            summary[key] = json.loads(path.read_text())
    if not summary:
        raise FileNotFoundError(f"no report artifacts found under {run}")
    out = Path(args.out)
    _write_json(out, summary)
    print(f"summary written to {out}")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hivevq",
        description="Learn, tokenize, and evaluate a discrete vocabulary of acoustic states.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic hidden-Markov embedding recordings")
    p.add_argument("--config-file", required=True, help="key=value synthetic spec")
    p.add_argument("--recordings", type=int, default=1, help="number of recordings to generate")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prefix", default="rec", help="recording id prefix")
    p.add_argument("--hive-id", default="hive0", help="hive id for the manifest")
    p.add_argument("--start-date", default="2021-06-01", help="date of the first recording")
    p.add_argument("--condition", choices=datahub.QUEEN_STATUSES, default=None,
                   help="also append an inspection row with this status")
    p.add_argument("--config", help="key=value file of defaults for this command")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the quantizer and refine its codebook")
    p.add_argument("--embeddings", required=True, help="directory of .beev files")
    p.add_argument("--manifest", default=None, help="restrict to recordings in this manifest CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--codebook-size", type=int, default=64, help="number of codebook entries")
    p.add_argument("--allow-nonstandard-k", action="store_true",
                   help="permit codebook sizes other than 32 or 64")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--max-epochs", type=int, default=60, help="epoch budget")
    p.add_argument("--warmup-epochs", type=int, default=10, help="reconstruction-only epochs")
    p.add_argument("--batch-size", type=int, default=256, help="frames per batch")
    p.add_argument("--learning-rate", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--val-fraction", type=float, default=0.1, help="validation recording fraction")
    p.add_argument("--patience", type=int, default=15, help="early-stop stagnation window")
    p.add_argument("--min-delta", type=float, default=0.0005, help="early-stop improvement floor")
    p.add_argument("--active-floor", type=float, default=0.005,
                   help="validation usage fraction for an active token")
    p.add_argument("--grad-clip", default="5.0", help="global gradient norm cap, or 'none'")
    p.add_argument("--hidden", default="1024,512,512", help="encoder hidden widths")
    p.add_argument("--dropout", type=float, default=0.1, help="dropout rate")
    p.add_argument("--decay", type=float, default=0.99, help="EMA decay for codebook entries")
    p.add_argument("--merge-threshold", type=float, default=refine.MERGE_COSINE_THRESHOLD,
                   help="cosine similarity above which tokens merge")
    p.add_argument("--usage-floor", type=float, default=refine.PRUNE_USAGE_FLOOR,
                   help="usage fraction below which tokens are pruned")
    p.add_argument("--config", help="key=value file of defaults for this command")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tokenize", help="map recordings to token sequences and latents")
    p.add_argument("--checkpoint", required=True, help="refined checkpoint path")
    p.add_argument("--embeddings", required=True, help="directory of .beev files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--raw", action="store_true", help="allow a pre-refinement checkpoint")
    p.add_argument("--workers", type=int, default=_default_workers(),
                   help=f"parallel recordings (default ${WORKERS_ENV} or 1)")
    p.add_argument("--config", help="key=value file of defaults for this command")
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("eval-state", help="condition-level evaluation of token usage and latents")
    p.add_argument("--tokens", required=True, help="directory of *.tokens.json")
    p.add_argument("--latents", required=True, help="directory of *.latents.beev")
    p.add_argument("--embeddings", required=True, help="directory of original .beev files")
    p.add_argument("--manifest", required=True, help="recording manifest CSV")
    p.add_argument("--inspections", required=True, help="inspection CSV with queen status")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--substates", type=int, default=3, help="k for queenless sub-state clustering")
    p.add_argument("--silhouette-sample", type=int, default=metrics_state.SILHOUETTE_SAMPLE,
                   help="max sampled frames per condition for silhouette")
    p.add_argument("--activity-threshold", type=float, default=metrics_state.ACTIVITY_THRESHOLD,
                   help="usage fraction for an active token")
    p.add_argument("--seed", type=int, default=0, help="seed for sampling and clustering")
    p.add_argument("--strict", action="store_true", help="fail on unmatched recordings")
    p.add_argument("--config", help="key=value file of defaults for this command")
    p.set_defaults(func=cmd_eval_state)

    p = sub.add_parser("eval-temporal", help="transition-structure evaluation of token streams")
    p.add_argument("--tokens", required=True, help="directory of *.tokens.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-tokens", type=int, default=None, help="token space size (default: inferred)")
    p.add_argument("--config", help="key=value file of defaults for this command")
    p.set_defaults(func=cmd_eval_temporal)

    p = sub.add_parser("eval-generalize", help="train-vs-unseen token distribution comparison")
    p.add_argument("--train-tokens", required=True, help="token directory for the training corpus")
    p.add_argument("--test-tokens", required=True, help="token directory for unseen recordings")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--activity-threshold", type=float, default=metrics_state.ACTIVITY_THRESHOLD,
                   help="usage fraction for an active token")
    p.add_argument("--config", help="key=value file of defaults for this command")
    p.set_defaults(func=cmd_eval_generalize)

    p = sub.add_parser("report", help="merge run artifacts into one summary JSON")
    p.add_argument("--run", required=True, help="directory holding the run's report files")
    p.add_argument("--out", required=True, help="summary JSON path")
    p.add_argument("--config", help="key=value file of defaults for this command")
    p.set_defaults(func=cmd_report)

    return parser


def _expand_config_argv(argv: list[str]) -> list[str]:
    """Splice key=value config-file entries in as flags; explicit flags win."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        return argv
    path = Path(argv[i + 1])
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    extra: list[str] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() in ("true", "false"):
            if value.lower() == "true":
                extra.append(flag)
        else:
            extra.extend([flag, value])
    # insert right after the subcommand so explicit flags override
    return argv[:1] + extra + argv[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and not argv[0].startswith("-"):
            argv = _expand_config_argv(argv)
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, StateError, HiveVqError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
