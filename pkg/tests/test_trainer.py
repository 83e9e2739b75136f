import numpy as np
import pytest

from pseudoae.checkpoint import (
    Checkpoint,
    CheckpointError,
    check_signature,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from pseudoae.config import ExperimentConfig, ModelConfig, PatchConfig, SkipConfig, TrainConfig
from pseudoae.dataset import SynthConfig, Video, synth_benchmark
from pseudoae.model import Autoencoder
from pseudoae.pseudoanom import TrainingSample
from pseudoae.tensorcore import Adam
from pseudoae.trainer import (
    LOG_FILE,
    Trainer,
    TrainingError,
    model_from_checkpoint,
    train,
    train_step,
)

TINY = SynthConfig(n_train=2, n_test=2, n_frames=40, frame_size=36)
# mean loss of epochs 1 and 5, default benchmark and model, 8 steps per epoch, seed 0 (scripted run)
DEFAULT_RUN_LOSSES = (0.05012, 0.01642)


@pytest.fixture(scope="module")
def tiny_videos():
    return synth_benchmark(0, TINY)[0]


def tiny_config(**train):
    opts = dict(p=0.2, epochs=2, steps_per_epoch=3, batch_size=2, lr=1e-3, seed=0)
    opts.update(train)
    return ExperimentConfig(model=ModelConfig(channels=[2, 4, 4]), train=TrainConfig(**opts),
                            patch=PatchConfig(), skip=SkipConfig())


class TestCheckpointFormat:
    def make(self, rng):
        return Checkpoint("abc", 3, {"w": rng.random((2, 3)).astype(np.float32)},
                          {"m.w": np.zeros((2, 3), np.float32)}, 7, 1, 42, "final", {"k": [1, 2]})

    def test_roundtrip(self, rng, tmp_path):
        ck = self.make(rng)
        back = load_checkpoint(save_checkpoint(tmp_path / "c.bin", ck))
        np.testing.assert_array_equal(back.params["w"], ck.params["w"])
        assert (back.epoch, back.optimizer_step, back.sample_index, back.tag) == (3, 7, 42, "final")
        assert back.config == {"k": [1, 2]}
        assert to_bytes(back) == to_bytes(ck)

    def test_truncated(self, rng):
        blob = to_bytes(self.make(rng))
        with pytest.raises(CheckpointError, match="checksum"):
            from_bytes(blob[:-9] + blob[-4:])

    def test_corrupt_byte(self, rng):
        blob = bytearray(to_bytes(self.make(rng)))
        blob[-10] ^= 0xFF
        with pytest.raises(CheckpointError):
            from_bytes(bytes(blob))

    def test_bad_magic(self):
        with pytest.raises(CheckpointError, match="magic"):
            from_bytes(b"NOPE" + bytes(20))

    def test_wrong_version(self, rng):
        import struct
        import zlib

        body = bytearray(to_bytes(self.make(rng))[:-4])
        body[4:8] = struct.pack("<I", 99)
        with pytest.raises(CheckpointError, match="version"):
            from_bytes(bytes(body) + struct.pack("<I", zlib.crc32(body)))

    def test_signature_mismatch(self, rng):
        with pytest.raises(CheckpointError, match="do not match"):
            check_signature(self.make(rng), [("w", (3, 2))])


class TestTrainStep:
    def test_mixed_batch_routes_targets(self, rng):
        m = Autoencoder(tiny_config().autoencoder_config(36, 36))
        x = rng.random((8, 1, 36, 36)).astype(np.float32)
        y = rng.random((8, 1, 36, 36)).astype(np.float32)
        normal = TrainingSample(x, x, False, "a", 0)
        pseudo = TrainingSample(x, y, True, "a", 0)
        opt = Adam(m.parameters())
        xhat = m.reconstruct(x[None])[0]
        expect = (np.mean((xhat - x) ** 2) + np.mean((xhat - y) ** 2)) / 2
        assert train_step(m, [normal, pseudo], opt) == pytest.approx(expect, rel=1e-5)

    def test_non_finite_loss_reports_samples(self, rng):
        m = Autoencoder(tiny_config().autoencoder_config(36, 36))
        m.params["enc0.weight"].data[:] = np.nan
        x = rng.random((8, 1, 36, 36)).astype(np.float32)
        with pytest.raises(TrainingError, match="vid7"):
            train_step(m, [TrainingSample(x, x, False, "vid7", 3)], Adam(m.parameters()))


class TestTrainer:
    def test_rejects_labelled_training_video(self):
        v = Video("bad", np.zeros((20, 36, 36)), np.r_[np.zeros(19), 1])
        with pytest.raises(TrainingError, match="labels"):
            Trainer(tiny_config(), [v])

    def test_rejects_empty(self):
        with pytest.raises(TrainingError):
            Trainer(tiny_config(), [])

    def test_rejects_videos_too_short_for_skip(self):
        with pytest.raises(TrainingError, match="stride 5 needs 36"):
            Trainer(tiny_config(), [Video("s", np.zeros((30, 36, 36)))])

    def test_rejects_short_videos(self):
        cfg = tiny_config()
        cfg.skip = None
        with pytest.raises(TrainingError, match="at least"):
            Trainer(cfg, [Video("s", np.zeros((5, 36, 36)))])

    def test_outputs(self, tiny_videos, tmp_path):
        res = train(tiny_config(epochs=3, checkpoint_every=2), tiny_videos, tmp_path)
        assert [p.name for p in res.checkpoints] == ["ckpt_epoch_0002.bin", "ckpt_epoch_0003.bin"]
        assert load_checkpoint(res.checkpoints[-1]).tag == "final"
        assert load_checkpoint(res.checkpoints[0]).tag == ""
        lines = (tmp_path / LOG_FILE).read_text().splitlines()
        assert lines[0] == "epoch,step,loss,pseudo_fraction" and len(lines) == 1 + 9

    def test_bitwise_deterministic(self, tiny_videos, tmp_path):
        a = train(tiny_config(), tiny_videos, tmp_path / "a").checkpoints[-1].read_bytes()
        b = train(tiny_config(), tiny_videos, tmp_path / "b").checkpoints[-1].read_bytes()
        assert a == b

    def test_seed_matters(self, tiny_videos, tmp_path):
        a = train(tiny_config(seed=0), tiny_videos, tmp_path / "a").checkpoints[-1].read_bytes()
        b = train(tiny_config(seed=1), tiny_videos, tmp_path / "b").checkpoints[-1].read_bytes()
        assert a != b

    def test_resume_equals_uninterrupted(self, tiny_videos, tmp_path):
        full = train(tiny_config(epochs=3), tiny_videos, tmp_path / "full")
        part = train(tiny_config(epochs=3), tiny_videos, tmp_path / "part")
        resumed = train(tiny_config(epochs=3), tiny_videos, tmp_path / "resumed",
                        resume_from=part.checkpoints[0])
        assert resumed.checkpoints[-1].read_bytes() == full.checkpoints[-1].read_bytes()

    def test_resume_with_other_config_rejected(self, tiny_videos, tmp_path):
        ck = train(tiny_config(), tiny_videos, tmp_path / "a").checkpoints[0]
        with pytest.raises(TrainingError, match="different configuration"):
            train(tiny_config(lr=5e-3), tiny_videos, tmp_path / "b", resume_from=ck)

    def test_model_from_checkpoint(self, tiny_videos, tmp_path, rng):
        res = train(tiny_config(), tiny_videos, tmp_path)
        m = model_from_checkpoint(load_checkpoint(res.checkpoints[-1]))
        x = rng.random((1, 8, 1, 36, 36))
        np.testing.assert_array_equal(m.reconstruct(x), res.model.reconstruct(x))

    def test_baseline_draws_no_pseudo(self, tiny_videos):
        cfg = tiny_config(p=0.0)
        cfg.patch = cfg.skip = None
        assert train(cfg, tiny_videos).pseudo_fraction == 0.0

    def test_realized_pseudo_fraction(self, tiny_videos):
        t = Trainer(tiny_config(p=0.2), tiny_videos)
        hits = sum(t._sample(i % len(t.windows)).is_pseudo for i in range(3000))
        assert abs(hits / 3000 - 0.2) <= 0.02
        assert t.pseudo_fraction == hits / 3000

    def test_three_configs_give_three_models(self, tiny_videos):
        base = tiny_config(p=0.0)
        base.patch = base.skip = None
        patch, skip = tiny_config(), tiny_config()
        patch.skip, skip.patch = None, None
        blobs = [train(c, tiny_videos).model.params["dec2.weight"].data.tobytes()
                 for c in (base, patch, skip)]
        assert len(set(blobs)) == 3

    def test_unwritable_output(self, tiny_videos, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises((TrainingError, OSError)):
            train(tiny_config(), tiny_videos, blocker / "sub")


def test_loss_decreases_on_default_benchmark():
    train_videos, _ = synth_benchmark(0)
    cfg = ExperimentConfig(train=TrainConfig(epochs=5, steps_per_epoch=8, lr=1e-3), skip=SkipConfig())
    losses = train(cfg, train_videos).losses
    assert losses[4] < losses[0]
    np.testing.assert_allclose([losses[0], losses[4]], DEFAULT_RUN_LOSSES, rtol=0.05)
