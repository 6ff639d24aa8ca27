import json
import struct

import numpy as np
import pytest

import oracles
from videoimprint import (ConfigError, DomainError, FeatureSequence, ParseError,
                          SynthSpec, bilinear_resize, downsample_to_tessellation,
                          load_manifest, read_features, synth_event_dataset,
                          synth_two_shot_sequence, write_features)


def _random_seq(rng, t=3, wx=8, wy=8, d=16, video_id="v"):
    return FeatureSequence(video_id=video_id,
                           frames=rng.random((t, wx, wy, d)).astype(np.float32))


class TestImprFile:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        seq = _random_seq(rng, t=3, wx=8, wy=8, d=16)
        path = tmp_path / "a.impr"
        write_features(path, seq)
        back = read_features(path)
        assert back.frames.dtype == np.float32
        assert np.array_equal(back.frames, seq.frames)
        assert back.video_id == "a"

    @pytest.mark.parametrize("shape", [(1, 1, 1, 1), (2, 3, 4, 5), (1, 8, 8, 1)])
    def test_round_trip_edge_shapes(self, tmp_path, shape):
        rng = np.random.default_rng(1)
        seq = FeatureSequence(video_id="e", frames=rng.random(shape).astype(np.float32))
        path = tmp_path / "e.impr"
        write_features(path, seq)
        assert np.array_equal(read_features(path).frames, seq.frames)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.impr"
        path.write_bytes(b"XXXX" + struct.pack("<5I", 1, 1, 1, 1, 1) + b"\x00" * 4)
        with pytest.raises(ParseError, match="bad magic"):
            read_features(path)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(2)
        seq = _random_seq(rng, t=2, wx=2, wy=2, d=2)
        path = tmp_path / "t.impr"
        write_features(path, seq)
        data = path.read_bytes()
        path.write_bytes(data[: 24 + 4 * 2 * 2 * 2])  # one frame only
        with pytest.raises(ParseError, match="truncated"):
            read_features(path)

    def test_trailing_bytes(self, tmp_path):
        rng = np.random.default_rng(3)
        seq = _random_seq(rng, t=1, wx=2, wy=2, d=1)
        path = tmp_path / "x.impr"
        write_features(path, seq)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ParseError, match="trailing"):
            read_features(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "v.impr"
        path.write_bytes(b"IMPR" + struct.pack("<5I", 9, 1, 1, 1, 1) + b"\x00" * 4)
        with pytest.raises(ParseError, match="version"):
            read_features(path)

    def test_shape_overflow(self, tmp_path):
        path = tmp_path / "o.impr"
        path.write_bytes(b"IMPR" + struct.pack("<5I", 1, 2 ** 16, 2 ** 16, 2, 2))
        with pytest.raises(ParseError, match="overflow"):
            read_features(path)

    def test_zero_dim(self, tmp_path):
        path = tmp_path / "z.impr"
        path.write_bytes(b"IMPR" + struct.pack("<5I", 1, 0, 2, 2, 2))
        with pytest.raises(ParseError, match="zero dimension"):
            read_features(path)


class TestFeatureSequence:
    def test_requires_4d(self):
        with pytest.raises(DomainError):
            FeatureSequence(video_id="x", frames=np.zeros((2, 2, 2)))

    def test_rejects_nan(self):
        frames = np.zeros((1, 2, 2, 2))
        frames[0, 0, 0, 0] = np.nan
        with pytest.raises(DomainError):
            FeatureSequence(video_id="x", frames=frames)


class TestBilinearResize:
    def test_constant(self):
        arr = np.full((8, 8, 3), 7.0)
        assert np.allclose(bilinear_resize(arr, (4, 4)), 7.0)

    def test_identity(self):
        rng = np.random.default_rng(4)
        arr = rng.random((5, 6, 2))
        assert np.allclose(bilinear_resize(arr, (5, 6)), arr)

    def test_matches_oracle(self):
        rng = np.random.default_rng(5)
        arr = rng.random((8, 8, 4))
        fast = bilinear_resize(arr, (4, 4))
        slow = oracles.bilinear_resize(arr, (4, 4))
        assert np.abs(fast - slow).max() < 1e-6

    def test_upscale_matches_oracle(self):
        rng = np.random.default_rng(6)
        arr = rng.random((4, 4))
        assert np.abs(bilinear_resize(arr, (9, 7)) - oracles.bilinear_resize(arr, (9, 7))).max() < 1e-12


class TestTessellation:
    def test_constant_frame_gives_normalized_channel_vector(self):
        channel = np.array([1.0, 3.0, 0.0, 4.0])
        frames = np.tile(channel, (2, 8, 8, 1)).astype(np.float32)
        seq = FeatureSequence(video_id="c", frames=frames)
        counts = downsample_to_tessellation(seq, (4, 4))
        assert counts.shape == (2, 4, 4, 4)
        assert np.allclose(counts, channel / channel.sum())

    def test_identity_resolution(self):
        rng = np.random.default_rng(7)
        frames = rng.random((1, 4, 4, 3))
        seq = FeatureSequence(video_id="i", frames=frames)
        counts = downsample_to_tessellation(seq, (4, 4))
        expected = frames[0] / frames[0].sum(-1, keepdims=True)
        assert np.allclose(counts[0], expected)

    def test_cells_sum_to_one(self):
        rng = np.random.default_rng(8)
        seq = _random_seq(rng, t=4, wx=8, wy=6, d=5)
        counts = downsample_to_tessellation(seq, (4, 3))
        assert np.abs(counts.sum(-1) - 1.0).max() < 1e-6

    def test_negative_rejected(self):
        frames = -np.ones((1, 4, 4, 2))
        seq = FeatureSequence(video_id="n", frames=frames)
        with pytest.raises(DomainError):
            downsample_to_tessellation(seq, (2, 2))

    def test_tessellation_larger_than_frame(self):
        rng = np.random.default_rng(9)
        seq = _random_seq(rng, t=1, wx=4, wy=4, d=2)
        with pytest.raises(DomainError):
            downsample_to_tessellation(seq, (8, 8))


class TestSynth:
    def test_deterministic(self, tmp_path):
        spec = SynthSpec(n_events=2, videos_per_event=3, frames_per_video=8,
                         seed=42, feature_dim=12)
        m1, a1 = synth_event_dataset(spec, tmp_path / "d1")
        m2, a2 = synth_event_dataset(spec, tmp_path / "d2")
        assert [e.video_id for e in m1.entries] == [e.video_id for e in m2.entries]
        assert a1 == a2
        for e1, e2 in zip(m1.entries, m2.entries):
            f1 = read_features(tmp_path / "d1" / e1.path)
            f2 = read_features(tmp_path / "d2" / e2.path)
            assert np.array_equal(f1.frames, f2.frames)

    def test_zero_noise_repeats_bitwise_equal(self, tmp_path):
        spec = SynthSpec(n_events=1, videos_per_event=1, frames_per_video=12,
                         shot_pool_size=2, noise_sigma=0.0, max_repeat=1,
                         distractor_frame_prob=0.0, distractor_ratio=0.0,
                         seed=7, feature_dim=8, queries_per_event=1)
        manifest, ann = synth_event_dataset(spec, tmp_path)
        entry = manifest.entries[0]
        seq = read_features(tmp_path / entry.path)
        shots = ann[entry.video_id]["shot_index"]
        for i in range(len(shots)):
            for j in range(i + 1, len(shots)):
                if shots[i] == shots[j]:
                    assert np.array_equal(seq.frames[i], seq.frames[j])

    def test_orthogonal_events_separate_in_cosine(self, tmp_path):
        spec = SynthSpec(n_events=2, videos_per_event=4, frames_per_video=10,
                         distractor_frame_prob=0.0, distractor_ratio=0.0,
                         noise_sigma=0.01, seed=3, feature_dim=16)
        manifest, _ = synth_event_dataset(spec, tmp_path)
        vecs, labels = [], []
        for e in manifest.entries:
            seq = read_features(tmp_path / e.path)
            v = seq.frames.mean(axis=(0, 1, 2))
            vecs.append(v / np.linalg.norm(v))
            labels.append(e.label)
        vecs = np.stack(vecs)
        labels = np.array(labels)
        sims = vecs @ vecs.T
        same = sims[labels[:, None] == labels[None]]
        cross = sims[labels[:, None] != labels[None]]
        assert cross.mean() < same.mean()

    def test_distractor_shots_cross_events(self, tmp_path):
        spec = SynthSpec(n_events=3, videos_per_event=4, frames_per_video=20,
                         distractor_frame_prob=0.4, distractor_ratio=0.0,
                         seed=11, feature_dim=16)
        manifest, ann = synth_event_dataset(spec, tmp_path)
        events_with_distractors = {
            e.label for e in manifest.entries
            if e.label >= 0 and "distractor" in ann[e.video_id]["source"]}
        assert len(events_with_distractors) >= 2

    def test_manifest_round_trip(self, tmp_path):
        spec = SynthSpec(n_events=2, videos_per_event=2, frames_per_video=4,
                         seed=1, feature_dim=8, distractor_ratio=1.0)
        manifest, _ = synth_event_dataset(spec, tmp_path)
        loaded = load_manifest(tmp_path / "manifest.json")
        assert [e.video_id for e in loaded.entries] == [e.video_id for e in manifest.entries]
        assert loaded.label_names == manifest.label_names
        assert all(not e.is_query for e in loaded.entries if e.label < 0)
        assert any(e.is_query for e in loaded.entries)

    def test_manifest_missing_file(self, tmp_path):
        doc = {"label_names": [], "entries": [
            {"video_id": "a", "path": "missing.impr", "label": 0, "is_query": True}]}
        p = tmp_path / "manifest.json"
        p.write_text(json.dumps(doc))
        with pytest.raises(ParseError, match="not found"):
            load_manifest(p)

    def test_bad_params(self, tmp_path):
        with pytest.raises(ConfigError):
            synth_event_dataset(SynthSpec(n_events=0), tmp_path)
        with pytest.raises(ConfigError):
            synth_event_dataset(SynthSpec(noise_sigma=-1.0), tmp_path)


def test_two_shot_sequence_labels_match_frames():
    seq, labels = synth_two_shot_sequence(20, (4, 4), dim=8, noise_sigma=0.0, seed=0)
    assert len(labels) == 20
    assert set(labels) == {0, 1}
    # frames with the same label are identical at zero noise
    for lab in (0, 1):
        group = seq.frames[labels == lab]
        assert np.array_equal(group, np.tile(group[0], (len(group), 1, 1, 1)))
