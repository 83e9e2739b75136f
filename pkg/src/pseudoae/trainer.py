"""Training loop mixing normal windows with pseudo anomalies.

Every sample's randomness is derived from ``(seed, sample index)`` and every
epoch's shuffle from ``(seed, epoch)``, so a run restarted from a checkpoint
follows exactly the trajectory of an uninterrupted one.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint, check_signature, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .dataset import Video
from .model import Autoencoder, loss_normal, loss_pseudo
from .pseudoanom import GeneratorConfig, IntruderSource, TrainingSample, sample_training_input
from .tensorcore import Adam, Tensor, backward, mse_loss

log = logging.getLogger(__name__)

CKPT_PATTERN = "ckpt_epoch_{:04d}.bin"
LOG_FILE = "train_log.csv"


class TrainingError(RuntimeError):
    pass


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def generator_config(cfg: ExperimentConfig, videos: Sequence[Video]) -> GeneratorConfig:
    gen = GeneratorConfig(kinds=cfg.pseudo_kinds)
    if cfg.patch is not None:
        pc = cfg.patch
        gen.alpha, gen.beta, gen.mask_kind = pc.alpha, pc.beta, pc.mask
        gen.intruder = IntruderSource(pc.intruder, directory=Path(pc.intruder_dir) if pc.intruder_dir else None,
                                      videos=videos if pc.intruder == "self_dataset" else ())
    if cfg.skip is not None:
        gen.s_values = tuple(cfg.skip.s)
    gen.validate()
    return gen


def train_step(model: Autoencoder, samples: Sequence[TrainingSample], optimizer: Adam) -> float:
    """One Adam update on a batch; each sample is scored against its own target.

    Normal samples contribute the plain reconstruction loss, pseudo samples the
    loss against their normal source window. With equal-sized windows the batch
    loss is the mean of the per-sample losses, i.e. one MSE over the stacked batch.
    """
    x = np.stack([s.input for s in samples])
    target = np.stack([s.target for s in samples])
    optimizer.zero_grad()
    xhat = model.forward(x)
    if all(s.is_pseudo for s in samples):
        loss = loss_pseudo(xhat, target)
    elif not any(s.is_pseudo for s in samples):
        loss = loss_normal(xhat, target)
    else:
        loss = mse_loss(xhat, Tensor(target))
    value = float(loss.data)
    if not np.isfinite(value):
        meta = [(s.video_id, s.start, s.pseudo.kind if s.pseudo else "normal") for s in samples]
        raise TrainingError(f"non-finite loss {value}; batch samples (video, start, kind): {meta}")
    backward(loss)
    optimizer.step()
    return value


@dataclass
class TrainResult:
    checkpoints: list[Path]
    losses: list[float]  # mean loss per epoch
    pseudo_fraction: float
    model: Autoencoder


class Trainer:
    def __init__(self, cfg: ExperimentConfig, videos: Sequence[Video], out_dir=None):
        cfg.validate()
        if not videos:
            raise TrainingError("no training videos")
        for v in videos:
            if v.labels is not None and np.any(v.labels):
                raise TrainingError(f"training video {v.id} carries anomaly labels")
        shapes = {v.frame_shape for v in videos}
        if len(shapes) != 1:
            raise TrainingError(f"training videos have mixed frame sizes {sorted(shapes)}")
        self.cfg = cfg
        self.videos = list(videos)
        self.T = cfg.data.frames
        self.H, self.W = shapes.pop()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.gen = generator_config(cfg, self.videos)
        if "skip" in self.gen.kinds:
            span = (self.T - 1) * max(self.gen.s_values) + 1
            short = [v.id for v in self.videos if len(v) < span]
            if short:
                raise TrainingError(f"skip stride {max(self.gen.s_values)} needs {span} frames; "
                                    f"too short: {short}")
        self.windows = [(vi, n) for vi, v in enumerate(self.videos) for n in range(len(v) - self.T + 1)]
        if not self.windows:
            raise TrainingError(f"no training video has at least T={self.T} frames")
        t = cfg.train
        self.steps_per_epoch = t.steps_per_epoch or -(-len(self.windows) // t.batch_size)
        self.model = Autoencoder(cfg.autoencoder_config(self.H, self.W), seed=t.seed)
        self.optimizer = Adam(self.model.parameters(), t.lr, t.beta1, t.beta2, t.eps)
        self.epoch = 0
        self.sample_index = 0
        self.n_pseudo = 0

    # -- checkpoints
    def state(self, tag: str = "") -> Checkpoint:
        opt = {}
        for name, m, v in zip(self.model.params, self.optimizer.state.m, self.optimizer.state.v):
            opt["m." + name] = m.copy()
            opt["v." + name] = v.copy()
        return Checkpoint(self.cfg.hash(), self.epoch, {n: p.data.copy() for n, p in self.model.params.items()},
                          opt, self.optimizer.state.step, self.cfg.train.seed, self.sample_index, tag,
                          {"experiment": self.cfg.to_dict(), "model": self.model.config.to_dict(),
                           "n_pseudo": self.n_pseudo})

    def restore(self, ckpt: Checkpoint) -> None:
        if ckpt.config_hash != self.cfg.hash():
            raise TrainingError("checkpoint was produced by a different configuration")
        check_signature(ckpt, [(n, p.shape) for n, p in self.model.params.items()])
        for name, p in self.model.params.items():
            p.data = ckpt.params[name].copy()
            p.grad = None
        st = self.optimizer.state
        st.step = ckpt.optimizer_step
        st.m = [ckpt.optimizer["m." + n].copy() for n in self.model.params]
        st.v = [ckpt.optimizer["v." + n].copy() for n in self.model.params]
        self.optimizer.params = self.model.parameters()
        self.epoch = ckpt.epoch
        self.sample_index = ckpt.sample_index
        self.n_pseudo = int(ckpt.config.get("n_pseudo", 0))

    # -- loop
    def _epoch_order(self, epoch: int) -> np.ndarray:
        need = self.steps_per_epoch * self.cfg.train.batch_size
        rng = _stream(self.cfg.train.seed, 0, epoch)
        reps = -(-need // len(self.windows))
        order = np.concatenate([rng.permutation(len(self.windows)) for _ in range(reps)])
        return order[:need]

    def _sample(self, window: int) -> TrainingSample:
        vi, n = self.windows[window]
        rng = _stream(self.cfg.train.seed, 1, self.sample_index)
        self.sample_index += 1
        s = sample_training_input(self.videos[vi], n, self.T, self.cfg.train.p, self.gen, rng)
        self.n_pseudo += s.is_pseudo
        return s

    def run_epoch(self, log_writer=None) -> float:
        bs = self.cfg.train.batch_size
        order = self._epoch_order(self.epoch)
        total = 0.0
        for step in range(self.steps_per_epoch):
            batch = [self._sample(int(w)) for w in order[step * bs:(step + 1) * bs]]
            loss = train_step(self.model, batch, self.optimizer)
            total += loss
            if log_writer is not None:
                log_writer.writerow([self.epoch + 1, step, f"{loss:.8g}", f"{self.pseudo_fraction:.6f}"])
        self.epoch += 1
        return total / self.steps_per_epoch

    @property
    def pseudo_fraction(self) -> float:
        return self.n_pseudo / self.sample_index if self.sample_index else 0.0

    def run(self) -> TrainResult:
        t = self.cfg.train
        paths: list[Path] = []
        losses: list[float] = []
        log_file = None
        writer = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            log_path = self.out_dir / LOG_FILE
            fresh = self.epoch == 0 or not log_path.exists()
            log_file = open(log_path, "w" if fresh else "a", newline="")
            writer = csv.writer(log_file)
            if fresh:
                writer.writerow(["epoch", "step", "loss", "pseudo_fraction"])
        try:
            while self.epoch < t.epochs:
                losses.append(self.run_epoch(writer))
                log.info("epoch %d/%d loss %.6f pseudo %.3f", self.epoch, t.epochs, losses[-1],
                         self.pseudo_fraction)
                last = self.epoch == t.epochs
                if self.out_dir is not None and (last or self.epoch % t.checkpoint_every == 0):
                    try:
                        paths.append(save_checkpoint(self.out_dir / CKPT_PATTERN.format(self.epoch),
                                                     self.state("final" if last else "")))
                    except OSError as e:
                        raise TrainingError(f"could not write checkpoint: {e}") from e
        finally:
            if log_file is not None:
                log_file.close()
        return TrainResult(paths, losses, self.pseudo_fraction, self.model)


def train(cfg: ExperimentConfig, videos: Sequence[Video], out_dir=None, resume_from=None) -> TrainResult:
    trainer = Trainer(cfg, videos, out_dir)
    if resume_from is not None:
        trainer.restore(load_checkpoint(resume_from))
    return trainer.run()


def model_from_checkpoint(ckpt: Checkpoint) -> Autoencoder:
    """Rebuild the autoencoder stored in ``ckpt`` (architecture from its embedded config)."""
    from .model import AutoencoderConfig

    mc = dict(ckpt.config.get("model", {}))
    if not mc:
        raise TrainingError("checkpoint carries no model configuration")
    model = Autoencoder(AutoencoderConfig(**mc))
    check_signature(ckpt, [(n, p.shape) for n, p in model.params.items()])
    for name, p in model.params.items():
        p.data = ckpt.params[name].copy()
    return model
