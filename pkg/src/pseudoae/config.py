"""Experiment configuration: TOML with [data], [model], [train], [pseudo.patch], [pseudo.skip].

Parsing is strict: an unknown section or key is an error that names it.
Enabled pseudo-anomaly kinds are the ``[pseudo.*]`` sections present.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

from .model import AutoencoderConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    root: str = ""
    frames: int = 8


@dataclass
class ModelConfig:
    channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    strides: list[list[int]] = field(default_factory=lambda: [[1, 2, 2], [2, 2, 2], [2, 2, 2]])
    kernel: int = 3
    activation: str = "leaky_relu"
    slope: float = 0.2
    final_activation: str = "sigmoid"


@dataclass
class TrainConfig:
    p: float = 0.2
    epochs: int = 5
    steps_per_epoch: int = 0  # 0: one full pass over every training window
    batch_size: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 1


@dataclass
class PatchConfig:
    alpha: float = 0.5
    beta: int = 3
    mask: str = "smoothmix_s"
    intruder: str = "procedural_textures"
    intruder_dir: str = ""


@dataclass
class SkipConfig:
    s: list[int] = field(default_factory=lambda: [2, 3, 4, 5])


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    patch: PatchConfig | None = None
    skip: SkipConfig | None = None

    @property
    def pseudo_kinds(self) -> tuple[str, ...]:
        return tuple(k for k, sec in (("patch", self.patch), ("skip", self.skip)) if sec is not None)

    def validate(self) -> "ExperimentConfig":
        t = self.train
        if not 0 <= t.p <= 1:
            raise ConfigError(f"train.p must be in [0, 1], got {t.p}")
        if t.p > 0 and not self.pseudo_kinds:
            raise ConfigError("train.p > 0 but no [pseudo.patch] or [pseudo.skip] section")
        if self.data.frames < 2:
            raise ConfigError(f"data.frames must be >= 2, got {self.data.frames}")
        for name in ("epochs", "batch_size", "checkpoint_every"):
            if getattr(t, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        if t.steps_per_epoch < 0:
            raise ConfigError("train.steps_per_epoch must be >= 0")
        if t.lr <= 0:
            raise ConfigError("train.lr must be positive")
        if self.patch is not None:
            if not 0 < self.patch.alpha <= 1:
                raise ConfigError(f"pseudo.patch.alpha must be in (0, 1], got {self.patch.alpha}")
            if self.patch.beta < 0:
                raise ConfigError(f"pseudo.patch.beta must be >= 0, got {self.patch.beta}")
        if self.skip is not None and (not self.skip.s or any(s <= 1 for s in self.skip.s)):
            raise ConfigError(f"pseudo.skip.s values must all be > 1, got {self.skip.s}")
        return self

    def autoencoder_config(self, height: int, width: int) -> AutoencoderConfig:
        m = self.model
        return AutoencoderConfig(frames=self.data.frames, channels_in=1, height=height, width=width,
                                 channels=tuple(m.channels), strides=tuple(map(tuple, m.strides)),
                                 kernel=m.kernel, activation=m.activation, slope=m.slope,
                                 final_activation=m.final_activation)

    def to_dict(self) -> dict:
        d = {"data": asdict(self.data), "model": asdict(self.model), "train": asdict(self.train)}
        pseudo = {}
        if self.patch is not None:
            pseudo["patch"] = asdict(self.patch)
        if self.skip is not None:
            pseudo["skip"] = asdict(self.skip)
        if pseudo:
            d["pseudo"] = pseudo
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(cls, table: dict, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    for key in table:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{where}]; allowed: {sorted(known)}")
    obj = cls(**table)
    for name, f in known.items():
        default = getattr(cls(), name)
        val = getattr(obj, name)
        if isinstance(default, bool) != isinstance(val, bool):
            raise ConfigError(f"{where}.{name}: expected {type(default).__name__}, got {val!r}")
        if isinstance(default, float) and isinstance(val, int):
            setattr(obj, name, float(val))
        elif isinstance(default, (int, float, str, list)) and not isinstance(val, type(default)):
            raise ConfigError(f"{where}.{name}: expected {type(default).__name__}, got {val!r}")
    return obj


def config_from_dict(doc: dict) -> ExperimentConfig:
    allowed = {"data", "model", "train", "pseudo"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown section {key!r}; allowed: {sorted(allowed)}")
    pseudo = doc.get("pseudo", {})
    if not isinstance(pseudo, dict):
        raise ConfigError("[pseudo] must be a table")
    for key in pseudo:
        if key not in ("patch", "skip"):
            raise ConfigError(f"unknown section 'pseudo.{key}'; allowed: pseudo.patch, pseudo.skip")
    cfg = ExperimentConfig(
        data=_build(DataConfig, doc.get("data", {}), "data"),
        model=_build(ModelConfig, doc.get("model", {}), "model"),
        train=_build(TrainConfig, doc.get("train", {}), "train"),
        patch=_build(PatchConfig, pseudo["patch"], "pseudo.patch") if "patch" in pseudo else None,
        skip=_build(SkipConfig, pseudo["skip"], "pseudo.skip") if "skip" in pseudo else None,
    )
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as f:
            doc = tomli.load(f)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_dict(doc)


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(Path(path), "wb") as f:
        tomli_w.dump(cfg.to_dict(), f)
