import numpy as np
import pytest

from pseudoae.dataset import (
    LABELS_FILE,
    DatasetError,
    SynthConfig,
    Video,
    add_audit_hook,
    load_dataset,
    load_video_dir,
    read_labels,
    remove_audit_hook,
    sample_window,
    save_dataset,
    synth_benchmark,
    write_pgm,
    write_video_dir,
)

SMALL = SynthConfig(n_train=2, n_test=2, n_frames=40)


@pytest.fixture(scope="module")
def small_bench():
    return synth_benchmark(3, SMALL)


@pytest.fixture(scope="module")
def default_bench():
    return synth_benchmark(0)


class TestVideo:
    def test_label_length_must_match(self):
        with pytest.raises(DatasetError, match="labels"):
            Video("v", np.zeros((4, 2, 2)), np.zeros(3))

    def test_frames_must_be_3d(self):
        with pytest.raises(DatasetError):
            Video("v", np.zeros((4, 2)))


class TestSampleWindow:
    def test_indices_are_consecutive(self):
        v = Video("v", np.arange(10)[:, None, None] * np.ones((1, 2, 2)) / 10)
        ws, block = sample_window(v, 3, 4)
        assert ws.indices == [3, 4, 5, 6]
        assert block.shape == (4, 1, 2, 2)
        np.testing.assert_array_equal(block[:, 0, 0, 0], v.frames[3:7, 0, 0])

    def test_last_valid_start(self):
        v = Video("v", np.zeros((10, 2, 2)))
        ws, _ = sample_window(v, 6, 4)
        assert ws.indices[-1] == 9

    @pytest.mark.parametrize("n", [-1, 7])
    def test_out_of_range(self, n):
        with pytest.raises(DatasetError):
            sample_window(Video("v", np.zeros((10, 2, 2))), n, 4)


class TestFrameFiles:
    def test_roundtrip_is_lossless_at_8_bit(self, tmp_path, small_bench):
        v = small_bench[1][0]
        write_video_dir(v, tmp_path / "v")
        back = load_video_dir(tmp_path / "v", anomaly=v.anomaly)
        np.testing.assert_array_equal(back.frames, v.frames)
        np.testing.assert_array_equal(back.labels, v.labels)

    def test_missing_frame(self, tmp_path):
        d = tmp_path / "v"
        d.mkdir()
        write_pgm(d / "frame_000000.pgm", np.zeros((4, 4)))
        write_pgm(d / "frame_000002.pgm", np.zeros((4, 4)))
        with pytest.raises(DatasetError, match="missing frames"):
            load_video_dir(d)

    def test_size_mismatch(self, tmp_path):
        d = tmp_path / "v"
        d.mkdir()
        write_pgm(d / "frame_000000.pgm", np.zeros((4, 4)))
        write_pgm(d / "frame_000001.pgm", np.zeros((5, 4)))
        with pytest.raises(DatasetError, match="differs"):
            load_video_dir(d)

    def test_label_count_mismatch(self, tmp_path):
        d = tmp_path / "v"
        write_video_dir(Video("v", np.zeros((3, 4, 4))), d)
        (d / LABELS_FILE).write_text("0\n1\n")
        with pytest.raises(DatasetError, match="2 labels for 3 frames"):
            load_video_dir(d)

    def test_bad_label_value(self, tmp_path):
        p = tmp_path / "labels.txt"
        p.write_text("0\n2\n")
        with pytest.raises(DatasetError, match="expected 0 or 1"):
            read_labels(p)

    def test_no_frames(self, tmp_path):
        with pytest.raises(DatasetError):
            load_video_dir(tmp_path)


class TestManifest:
    def test_save_load(self, tmp_path, small_bench):
        train, test = small_bench
        save_dataset(tmp_path, train, test, {"seed": 3})
        ds = load_dataset(tmp_path)
        assert ds.info["seed"] == 3
        got = ds.test_videos()
        assert [v.id for v in got] == [v.id for v in test]
        assert [v.anomaly for v in got] == [v.anomaly for v in test]
        assert all(v.labels is None for v in ds.train_videos())

    def test_train_split_never_opens_labels(self, tmp_path, small_bench):
        train, test = small_bench
        # a stray labels file in a training video must still not be read
        save_dataset(tmp_path, train, test)
        (tmp_path / "train" / train[0].id / LABELS_FILE).write_text("0\n" * len(train[0]))
        seen = []
        hook = lambda path, kind: seen.append(kind)  # noqa: E731
        add_audit_hook(hook)
        try:
            load_dataset(tmp_path).train_videos()
        finally:
            remove_audit_hook(hook)
        assert "labels" not in seen and "frame" in seen

    def test_missing_labels_in_test(self, tmp_path, small_bench):
        train, test = small_bench
        save_dataset(tmp_path, train, test)
        (tmp_path / "test" / test[0].id / LABELS_FILE).unlink()
        with pytest.raises(DatasetError, match="no labels.txt"):
            load_dataset(tmp_path).test_videos()

    def test_unknown_manifest_key(self, tmp_path):
        (tmp_path / "manifest.toml").write_text('[[videos]]\nid = "a"\npath = "a"\nrole = "train"\nfoo = 1\n')
        with pytest.raises(DatasetError, match="foo"):
            load_dataset(tmp_path)

    def test_no_manifest(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path)


class TestSynthetic:
    def test_same_seed_same_videos(self, small_bench):
        again = synth_benchmark(3, SMALL)
        for a, b in zip(small_bench[0] + small_bench[1], again[0] + again[1]):
            np.testing.assert_array_equal(a.frames, b.frames)

    def test_different_seed_differs(self, small_bench):
        other = synth_benchmark(4, SMALL)
        assert not np.array_equal(small_bench[0][0].frames, other[0][0].frames)

    def test_training_split_has_no_anomalies(self, default_bench):
        train, _ = default_bench
        assert all(v.labels is None and v.anomaly == "none" for v in train)

    def test_test_split_alternates_kinds(self, default_bench):
        _, test = default_bench
        assert [v.anomaly for v in test] == ["appearance", "motion"] * (len(test) // 2)

    def test_anomalous_fraction(self, default_bench):
        # one contiguous interval covering 30-50 % of each test video
        for v in default_bench[1]:
            on = np.flatnonzero(v.labels)
            assert 0.3 <= v.labels.mean() <= 0.5
            assert np.all(np.diff(on) == 1)

    def test_default_geometry(self, default_bench):
        train, test = default_bench
        assert len(train) == 8 and len(test) == 10
        assert all(v.frames.shape == (200, 64, 64) for v in train + test)
        assert all(0 <= v.frames.min() and v.frames.max() <= 1 for v in train)

    def test_frames_are_8_bit_quantised(self, small_bench):
        f = small_bench[0][0].frames
        scaled = f.astype(np.float64) * 255
        assert np.abs(scaled - np.rint(scaled)).max() < 1e-4

    def test_too_small_frame(self):
        with pytest.raises(DatasetError, match="too small"):
            synth_benchmark(0, SynthConfig(frame_size=16))

    def test_invalid_anomaly_interval(self):
        with pytest.raises(DatasetError):
            synth_benchmark(0, SynthConfig(anomaly_start=(0.6, 0.7), anomaly_length=(0.4, 0.5)))
