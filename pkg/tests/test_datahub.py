import struct
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hivevq import datahub
from hivevq.errors import (
    AmbiguityError,
    DataError,
    FormatError,
    ParameterError,
    TruncationError,
)


def make_seq(frames, recording_id="rec", rate=22050.0, hop=512):
    return datahub.EmbeddingSequence(
        recording_id=recording_id,
        frames=np.asarray(frames, dtype=np.float32),
        frame_interval_ms=hop / rate * 1000.0,
        sample_rate_hz=rate,
    )


class TestEmbeddingSequence:
    def test_rejects_nan(self):
        with pytest.raises(DataError):
            make_seq([[1.0, np.nan]])

    def test_rejects_inf(self):
        with pytest.raises(DataError):
            make_seq([[np.inf, 0.0]])

    def test_rejects_bad_interval(self):
        with pytest.raises(DataError):
            datahub.EmbeddingSequence("r", np.zeros((1, 2), np.float32), frame_interval_ms=0.0)

    def test_shape_properties(self):
        seq = make_seq(np.zeros((3, 5)))
        assert seq.n_frames == 3
        assert seq.dim == 5
        assert seq.hop_samples == 512

    def test_frames_read_only(self):
        seq = make_seq(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            seq.frames[0, 0] = 1.0


class TestBeevFormat:
    def test_hand_computed_bytes(self, tmp_path):
        # 2x3 matrix [[1,2,3],[4,5,6]]: header + name + 24 payload bytes.
        seq = make_seq([[1, 2, 3], [4, 5, 6]], recording_id="ab")
        path = tmp_path / "x.beev"
        datahub.write_embedding_file(seq, path)
        expected = struct.pack("<4sBIQfIH", b"BEEV", 1, 3, 2, 22050.0, 512, 2)
        expected += b"ab"
        expected += struct.pack("<6f", 1, 2, 3, 4, 5, 6)
        assert path.read_bytes() == expected

    def test_empty_sequence_header_only(self, tmp_path):
        seq = make_seq(np.zeros((0, 1295)))
        path = tmp_path / "e.beev"
        datahub.write_embedding_file(seq, path)
        loaded = datahub.read_embedding_file(path)
        assert loaded.n_frames == 0
        assert loaded.dim == 1295
        assert path.stat().st_size == struct.calcsize("<4sBIQfIH") + len(b"rec")

    def test_roundtrip_bytes_identical(self, tmp_path):
        rng = np.random.default_rng(7)
        seq = make_seq(rng.normal(size=(11, 4)).astype(np.float32), recording_id="hive_é")
        p1, p2 = tmp_path / "a.beev", tmp_path / "b.beev"
        datahub.write_embedding_file(seq, p1)
        datahub.write_embedding_file(datahub.read_embedding_file(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    @settings(max_examples=25, deadline=None)
    @given(
        n=st.integers(min_value=0, max_value=7),
        d=st.integers(min_value=1, max_value=9),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_roundtrip_property(self, tmp_path_factory, n, d, seed):
        rng = np.random.default_rng(seed)
        seq = make_seq(rng.normal(scale=10, size=(n, d)).astype(np.float32), recording_id=f"r{seed}")
        path = tmp_path_factory.mktemp("rt") / "f.beev"
        datahub.write_embedding_file(seq, path)
        loaded = datahub.read_embedding_file(path)
        assert loaded.recording_id == seq.recording_id
        assert np.array_equal(loaded.frames, seq.frames)
        assert loaded.sample_rate_hz == seq.sample_rate_hz
        assert loaded.hop_samples == seq.hop_samples

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.beev"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError):
            datahub.read_embedding_file(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.beev"
        path.write_bytes(struct.pack("<4sBIQfIH", b"BEEV", 2, 1, 0, 22050.0, 512, 0))
        with pytest.raises(FormatError):
            datahub.read_embedding_file(path)

    def test_payload_one_frame_short(self, tmp_path):
        seq = make_seq([[1, 2, 3], [4, 5, 6]])
        path = tmp_path / "t.beev"
        datahub.write_embedding_file(seq, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 3 * 4])
        with pytest.raises(TruncationError):
            datahub.read_embedding_file(path)

    def test_payload_too_long(self, tmp_path):
        seq = make_seq([[1, 2, 3]])
        path = tmp_path / "t.beev"
        datahub.write_embedding_file(seq, path)
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(TruncationError):
            datahub.read_embedding_file(path)

    def test_nonfinite_payload_rejected_on_read(self, tmp_path):
        path = tmp_path / "n.beev"
        header = struct.pack("<4sBIQfIH", b"BEEV", 1, 1, 1, 22050.0, 512, 1) + b"r"
        path.write_bytes(header + struct.pack("<f", float("nan")))
        with pytest.raises(DataError):
            datahub.read_embedding_file(path)


class TestMatchConditions:
    def test_nearest_preceding(self):
        inspections = [
            datahub.InspectionRecord("h1", datetime(2021, 6, 3), "QR"),
            datahub.InspectionRecord("h1", datetime(2021, 6, 8), "QNL"),
        ]
        table = datahub.match_conditions([("r1", "h1", "2021-06-10T00:00:00")], inspections)
        assert table.entries == {"r1": "QNL"}
        assert table.unmatched == []

    def test_no_preceding_goes_unmatched(self):
        inspections = [datahub.InspectionRecord("h1", datetime(2021, 6, 3), "QR")]
        table = datahub.match_conditions([("r1", "h1", "2021-06-02T00:00:00")], inspections)
        assert table.entries == {}
        assert table.unmatched == ["r1"]

    def test_equal_timestamp_counts_as_preceding(self):
        inspections = [
            datahub.InspectionRecord("h1", datetime(2021, 6, 3), "QR"),
            datahub.InspectionRecord("h1", datetime(2021, 6, 8), "QNL"),
        ]
        table = datahub.match_conditions([("r1", "h1", "2021-06-08T00:00:00")], inspections)
        assert table.entries == {"r1": "QNL"}

    def test_never_uses_later_inspection(self):
        inspections = [datahub.InspectionRecord("h1", datetime(2021, 6, 8), "QNL")]
        table = datahub.match_conditions([("r1", "h1", "2021-06-07T23:59:59")], inspections)
        assert "r1" in table.unmatched

    def test_hive_isolation(self):
        inspections = [datahub.InspectionRecord("h2", datetime(2021, 6, 1), "QR")]
        table = datahub.match_conditions([("r1", "h1", "2021-06-10T00:00:00")], inspections)
        assert table.unmatched == ["r1"]

    def test_duplicate_inspection_rows_ambiguous(self):
        inspections = [
            datahub.InspectionRecord("h1", datetime(2021, 6, 3), "QR"),
            datahub.InspectionRecord("h1", datetime(2021, 6, 3), "QNL"),
        ]
        with pytest.raises(AmbiguityError):
            datahub.match_conditions([("r1", "h1", "2021-06-10T00:00:00")], inspections)

    def test_bad_status_rejected(self):
        with pytest.raises(DataError):
            datahub.InspectionRecord("h1", datetime(2021, 6, 3), "queenish")

    def test_timezone_aware_timestamps_rejected(self):
        inspections = [datahub.InspectionRecord("h1", datetime(2021, 6, 3), "QR")]
        with pytest.raises(DataError):
            datahub.match_conditions([("r1", "h1", "2021-06-10T00:00:00+02:00")], inspections)
        with pytest.raises(DataError):
            datahub.InspectionRecord("h1", datetime.fromisoformat("2021-06-03T00:00:00+00:00"), "QR")


class TestSplitRecordings:
    def test_ten_ids_fraction_point_one(self):
        train, val = datahub.split_recordings([f"r{i}" for i in range(10)], 0.1, seed=0)
        assert len(train) == 9 and len(val) == 1
        assert set(train) | set(val) == {f"r{i}" for i in range(10)}
        assert set(train) & set(val) == set()

    def test_deterministic(self):
        ids = [f"r{i}" for i in range(23)]
        assert datahub.split_recordings(ids, 0.25, 42) == datahub.split_recordings(ids, 0.25, 42)

    def test_single_id_rejected(self):
        with pytest.raises(ParameterError):
            datahub.split_recordings(["only"], 0.5, 0)

    def test_bad_fraction(self):
        for f in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ParameterError):
                datahub.split_recordings(["a", "b"], f, 0)


class TestSynthetic:
    def two_state_spec(self, noise=0.0, n=50, seed=3):
        return datahub.SyntheticSpec(
            n_states=2,
            dim=3,
            transition=np.array([[0.5, 0.5], [0.5, 0.5]]),
            means=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            noise_std=noise,
            n_frames=n,
            seed=seed,
        )

    def test_zero_noise_hits_means_exactly(self):
        spec = self.two_state_spec()
        seq, states = datahub.generate_synthetic(spec)
        for frame, s in zip(seq.frames, states):
            assert np.array_equal(frame, spec.means[s].astype(np.float32))

    def test_identity_transition_is_constant(self):
        spec = datahub.SyntheticSpec(
            n_states=3,
            dim=2,
            transition=np.eye(3),
            means=np.arange(6, dtype=float).reshape(3, 2),
            noise_std=0.0,
            n_frames=40,
            seed=9,
        )
        _, states = datahub.generate_synthetic(spec)
        assert len(set(states.tolist())) == 1

    def test_empirical_transition_converges(self):
        t = np.array([[0.8, 0.15, 0.05], [0.1, 0.7, 0.2], [0.25, 0.25, 0.5]])
        spec = datahub.SyntheticSpec(
            n_states=3,
            dim=2,
            transition=t,
            means=np.zeros((3, 2)),
            noise_std=0.0,
            n_frames=100_000,
            seed=11,
        )
        _, states = datahub.generate_synthetic(spec)
        counts = np.zeros((3, 3))
        np.add.at(counts, (states[:-1], states[1:]), 1.0)
        empirical = counts / counts.sum(axis=1, keepdims=True)
        assert np.max(np.abs(empirical - t)) < 0.02

    def test_bit_reproducible(self):
        spec = self.two_state_spec(noise=0.3, n=200)
        a, sa = datahub.generate_synthetic(spec)
        b, sb = datahub.generate_synthetic(spec)
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(sa, sb)

    def test_row_sum_validation(self):
        with pytest.raises(ParameterError):
            datahub.SyntheticSpec(
                n_states=2,
                dim=1,
                transition=np.array([[0.6, 0.5], [0.5, 0.5]]),
                means=np.zeros((2, 1)),
                noise_std=0.1,
                n_frames=10,
                seed=0,
            )

    def test_config_roundtrip(self):
        spec = self.two_state_spec(noise=0.25, n=77, seed=5)
        text = datahub.format_synthetic_config(spec)
        parsed = datahub.parse_synthetic_config(text)
        assert parsed.n_states == spec.n_states
        assert parsed.seed == spec.seed
        assert np.array_equal(parsed.transition, spec.transition)
        assert np.array_equal(parsed.means, spec.means)
        seq_a, _ = datahub.generate_synthetic(spec)
        seq_b, _ = datahub.generate_synthetic(parsed)
        assert np.array_equal(seq_a.frames, seq_b.frames)

    def test_config_missing_key(self):
        with pytest.raises(FormatError):
            datahub.parse_synthetic_config("n_states=2\n")


class TestCsvReaders:
    def test_manifest_and_inspections(self, tmp_path):
        man = tmp_path / "manifest.csv"
        man.write_text("recording_id,hive_id,timestamp\nr1,h1,2021-06-10T00:00:00\n")
        insp = tmp_path / "inspections.csv"
        insp.write_text("hive_id,timestamp,queen_status\nh1,2021-06-01T00:00:00,QR\n")
        recs = datahub.read_manifest_csv(man)
        ins = datahub.read_inspections_csv(insp)
        table = datahub.match_conditions(recs, ins)
        assert table.entries == {"r1": "QR"}

    def test_manifest_missing_column(self, tmp_path):
        man = tmp_path / "manifest.csv"
        man.write_text("recording_id,timestamp\nr1,2021-06-10\n")
        with pytest.raises(FormatError):
            datahub.read_manifest_csv(man)
