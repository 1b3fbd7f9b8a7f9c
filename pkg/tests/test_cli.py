import json

import numpy as np
import pytest

from hivevq import cli, datahub


def synth_config_text(mix, seed, dim=8, n_states=4, frames=400, noise=0.3):
    """Chain with strong self-transitions whose stationary mass favors ``mix``."""
    rng = np.random.default_rng(99)  # shared means across conditions
    means = rng.normal(scale=4.0, size=(n_states, dim))
    t = np.zeros((n_states, n_states))
    for i in range(n_states):
        others = [j for j in range(n_states) if j != i]
        stay = 0.9 if mix[i] > 0.1 else 0.7
        t[i, i] = stay
        weights = np.array([mix[j] for j in others])
        weights = weights / weights.sum()
        for j, w in zip(others, weights):
            t[i, j] = (1.0 - stay) * w
    spec = datahub.SyntheticSpec(
        n_states=n_states,
        dim=dim,
        transition=t / t.sum(axis=1, keepdims=True),
        means=means,
        noise_std=noise,
        n_frames=frames,
        seed=seed,
    )
    return datahub.format_synthetic_config(spec)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> train -> tokenize -> eval-state -> eval-temporal -> report."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    cfg_a = root / "synth_a.cfg"
    cfg_b = root / "synth_b.cfg"
    cfg_a.write_text(synth_config_text([0.45, 0.45, 0.05, 0.05], seed=100))
    cfg_b.write_text(synth_config_text([0.05, 0.05, 0.45, 0.45], seed=200))
    assert cli.main([
        "synth", "--config-file", str(cfg_a), "--recordings", "4", "--out", str(data),
        "--prefix", "qr", "--hive-id", "hiveA", "--condition", "QR",
    ]) == 0
    assert cli.main([
        "synth", "--config-file", str(cfg_b), "--recordings", "4", "--out", str(data),
        "--prefix", "qnl", "--hive-id", "hiveB", "--condition", "QNL",
    ]) == 0

    run = root / "run"
    assert cli.main([
        "train", "--embeddings", str(data), "--manifest", str(data / "manifest.csv"),
        "--out", str(run), "--codebook-size", "8", "--allow-nonstandard-k",
        "--max-epochs", "6", "--warmup-epochs", "3", "--batch-size", "128",
        "--val-fraction", "0.25", "--hidden", "8,4,4", "--seed", "0",
    ]) == 0

    tokens = root / "tokens"
    assert cli.main([
        "tokenize", "--checkpoint", str(run / "refined.hvqc"),
        "--embeddings", str(data), "--out", str(tokens), "--workers", "2",
    ]) == 0

    state = root / "state"
    assert cli.main([
        "eval-state", "--tokens", str(tokens), "--latents", str(tokens),
        "--embeddings", str(data), "--manifest", str(data / "manifest.csv"),
        "--inspections", str(data / "inspections.csv"), "--out", str(state),
    ]) == 0

    temporal = root / "temporal"
    assert cli.main([
        "eval-temporal", "--tokens", str(tokens), "--out", str(temporal),
    ]) == 0

    general = root / "general"
    assert cli.main([
        "eval-generalize", "--train-tokens", str(tokens), "--test-tokens", str(tokens),
        "--out", str(general),
    ]) == 0

    summary_dir = root / "summary"
    summary_dir.mkdir()
    merged = run / "merged"
    merged.mkdir()
    for src in ("epochs.jsonl", "refine_report.json"):
        (merged / src).write_bytes((run / src).read_bytes())
    for directory, name in ((state, "state_report.json"), (temporal, "temporal_report.json"),
                            (general, "generalization_report.json")):
        (merged / name).write_bytes((directory / name).read_bytes())
    summary = summary_dir / "summary.json"
    assert cli.main(["report", "--run", str(merged), "--out", str(summary)]) == 0

    return {
        "root": root, "data": data, "run": run, "tokens": tokens,
        "state": state, "temporal": temporal, "general": general, "summary": summary,
    }


class TestPipeline:
    def test_all_artifacts_exist(self, pipeline):
        run = pipeline["run"]
        for name in ("checkpoint.hvqc", "refined.hvqc", "final_state.hvqc",
                     "epochs.jsonl", "refine_report.json", "run_config.txt"):
            assert (run / name).exists(), name
        assert (pipeline["state"] / "state_report.json").exists()
        assert (pipeline["state"] / "qnl_pca.csv").exists()
        assert (pipeline["state"] / "substate_feature_deviation.csv").exists()
        assert (pipeline["temporal"] / "temporal_report.json").exists()
        assert (pipeline["temporal"] / "transitions.csv").exists()

    def test_state_report_shape(self, pipeline):
        report = json.loads((pipeline["state"] / "state_report.json").read_text())
        assert 0.0 <= report["jsd"] <= 1.0
        assert set(report["conditions"]) == {"QR", "QNL"}
        assert len(report["substates"]) == 3
        for c in report["substates"]:
            assert set(c) == {"size_pct", "dominant_token", "purity_pct"}
        assert report["unmatched_recordings"] == []

    def test_temporal_report_shape(self, pipeline):
        report = json.loads((pipeline["temporal"] / "temporal_report.json").read_text())
        assert report["active_tokens"] >= 2
        assert 0.0 <= report["self_transition_pct"] <= 100.0
        assert report["chi2"]["p"] <= 1.0
        assert len(report["per_token"]) == report["active_tokens"]

    def test_self_generalization_is_identity(self, pipeline):
        report = json.loads((pipeline["general"] / "generalization_report.json").read_text())
        assert report["jaccard"] == 1.0
        assert report["jsd"] == 0.0
        assert report["verdict"] == "stable"

    def test_summary_merges_sections(self, pipeline):
        summary = json.loads(pipeline["summary"].read_text())
        assert {"model", "refinement", "state", "temporal", "generalization"} <= set(summary)

    def test_tokens_match_frame_counts(self, pipeline):
        for beev in sorted(pipeline["data"].glob("*.beev")):
            seq = datahub.read_embedding_file(beev)
            tok = json.loads((pipeline["tokens"] / f"{seq.recording_id}.tokens.json").read_text())
            assert len(tok["tokens"]) == seq.n_frames


class TestErrors:
    def test_missing_embeddings_dir_exits_2(self, tmp_path, capsys):
        code = cli.main([
            "train", "--embeddings", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
            "--codebook-size", "8", "--allow-nonstandard-k", "--max-epochs", "2",
            "--warmup-epochs", "1",
        ])
        assert code == 2
        assert "nope" in capsys.readouterr().err

    def test_single_condition_needs_two(self, pipeline, tmp_path, capsys):
        data = pipeline["data"]
        # an inspections table that labels every hive QR
        insp = tmp_path / "insp.csv"
        insp.write_text(
            "hive_id,timestamp,queen_status\n"
            "hiveA,2021-01-01T00:00:00,QR\nhiveB,2021-01-01T00:00:00,QR\n"
        )
        code = cli.main([
            "eval-state", "--tokens", str(pipeline["tokens"]), "--latents", str(pipeline["tokens"]),
            "--embeddings", str(data), "--manifest", str(data / "manifest.csv"),
            "--inspections", str(insp), "--out", str(tmp_path / "o"),
        ])
        assert code == 2
        assert "two conditions" in capsys.readouterr().err

    def test_recording_missing_from_manifest_reported_unmatched(self, pipeline, tmp_path):
        data = pipeline["data"]
        trimmed = tmp_path / "manifest.csv"
        lines = (data / "manifest.csv").read_text().splitlines()
        trimmed.write_text("\n".join(lines[:-1]) + "\n")  # drop the last recording
        dropped = lines[-1].split(",")[0]
        out = tmp_path / "state"
        assert cli.main([
            "eval-state", "--tokens", str(pipeline["tokens"]), "--latents", str(pipeline["tokens"]),
            "--embeddings", str(data), "--manifest", str(trimmed),
            "--inspections", str(data / "inspections.csv"), "--out", str(out),
        ]) == 0
        report = json.loads((out / "state_report.json").read_text())
        assert dropped in report["unmatched_recordings"]
        # and the same invocation fails under --strict
        assert cli.main([
            "eval-state", "--tokens", str(pipeline["tokens"]), "--latents", str(pipeline["tokens"]),
            "--embeddings", str(data), "--manifest", str(trimmed),
            "--inspections", str(data / "inspections.csv"), "--out", str(out), "--strict",
        ]) == 2

    def test_tokenize_unrefined_checkpoint_fails(self, pipeline, tmp_path, capsys):
        code = cli.main([
            "tokenize", "--checkpoint", str(pipeline["run"] / "checkpoint.hvqc"),
            "--embeddings", str(pipeline["data"]), "--out", str(tmp_path / "t"),
        ])
        assert code == 1
        assert "refine" in capsys.readouterr().err

    def test_nonstandard_k_without_flag(self, pipeline, tmp_path, capsys):
        code = cli.main([
            "train", "--embeddings", str(pipeline["data"]), "--out", str(tmp_path / "o"),
            "--codebook-size", "7", "--max-epochs", "2", "--warmup-epochs", "1",
        ])
        assert code == 2

    def test_report_on_empty_dir(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert cli.main(["report", "--run", str(tmp_path / "empty"), "--out", str(tmp_path / "s.json")]) == 2


class TestHelp:
    @pytest.mark.parametrize(
        "command",
        ["synth", "train", "tokenize", "eval-state", "eval-temporal", "eval-generalize", "report"],
    )
    def test_help_lists_defaults(self, command, capsys):
        with pytest.raises(SystemExit) as excinfo:
            cli.main([command, "--help"])
        assert excinfo.value.code == 0
        out = capsys.readouterr().out
        assert "--out" in out

    def test_train_help_shows_defaults(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["train", "--help"])
        out = capsys.readouterr().out
        for flag in ("--codebook-size", "--warmup-epochs", "--patience", "--min-delta",
                     "--decay", "--dropout", "--merge-threshold", "--usage-floor"):
            assert flag in out


class TestConfigFile:
    def test_config_file_sets_defaults_and_flags_override(self, pipeline, tmp_path):
        cfg = tmp_path / "tok.cfg"
        cfg.write_text("workers=1\nraw=false\n")
        out = tmp_path / "tok_out"
        code = cli.main([
            "tokenize", "--config", str(cfg),
            "--checkpoint", str(pipeline["run"] / "refined.hvqc"),
            "--embeddings", str(pipeline["data"]), "--out", str(out),
        ])
        assert code == 0
        echoed = (out / "run_config.txt").read_text()
        assert "workers=1" in echoed

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        for out in (out_a, out_b):
            assert cli.main([
                "eval-temporal", "--tokens", str(pipeline["tokens"]), "--out", str(out),
            ]) == 0
        for name in ("temporal_report.json", "transitions.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
