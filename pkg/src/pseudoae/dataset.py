"""Video frame storage, sliding windows, and the synthetic moving-sprites benchmark.

On-disk layout of one video directory::

    frame_000000.pgm   8-bit binary graymap (P5, maxval 255)
    frame_000001.pgm
    ...
    labels.txt         optional; one 0/1 per line, line i -> frame i

A dataset root holds ``manifest.toml`` listing every video directory with its
role (``train`` or ``test``).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import tomli
import tomli_w
from PIL import Image

log = logging.getLogger(__name__)

FRAME_PATTERN = "frame_{:06d}.pgm"
_FRAME_RE = re.compile(r"^frame_(\d{6})\.pgm$")
LABELS_FILE = "labels.txt"
MANIFEST_FILE = "manifest.toml"


class DatasetError(ValueError):
    pass


# Access audit: every file the dataset layer reads is reported to these hooks as
# (path, kind) with kind in {"frame", "labels", "manifest"}.
_audit_hooks: list[Callable[[Path, str], None]] = []


def add_audit_hook(hook: Callable[[Path, str], None]) -> None:
    _audit_hooks.append(hook)


def remove_audit_hook(hook: Callable[[Path, str], None]) -> None:
    _audit_hooks.remove(hook)


def _audit(path: Path, kind: str) -> None:
    for hook in list(_audit_hooks):
        hook(path, kind)


@dataclass
class Video:
    id: str
    frames: np.ndarray  # [K, H, W] float32 in [0, 1]
    labels: np.ndarray | None = None  # [K] uint8, test videos only
    anomaly: str = "none"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise DatasetError(f"video {self.id}: frames must be [K, H, W], got {self.frames.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8)
            if self.labels.shape != (len(self.frames),):
                raise DatasetError(
                    f"video {self.id}: {len(self.labels)} labels for {len(self.frames)} frames")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass(frozen=True)
class WindowSample:
    video_id: str
    start: int
    length: int

    @property
    def indices(self) -> list[int]:
        return [self.start + t for t in range(self.length)]


def sample_window(video: Video, n: int, T: int) -> tuple[WindowSample, np.ndarray]:
    """Frames ``n .. n+T-1`` of ``video`` as a ``[T, 1, H, W]`` block."""
    if T < 1:
        raise DatasetError(f"window length must be positive, got {T}")
    if not 0 <= n <= len(video) - T:
        raise DatasetError(f"window start {n} out of range for T={T}, K={len(video)}")
    return WindowSample(video.id, n, T), video.frames[n:n + T, None]


# ---------------------------------------------------------------- frame files

def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: Path, frame: np.ndarray) -> None:
    """Write a [0,1] float frame (or uint8 array) as binary P5."""
    arr = frame if frame.dtype == np.uint8 else to_uint8(frame)
    Image.fromarray(arr, mode="L").save(path, format="PPM")


def read_pgm(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise DatasetError(f"{path}: not an 8-bit grayscale PGM (format={im.format}, mode={im.mode})")
        return np.asarray(im, dtype=np.uint8)


def write_video_dir(video: Video, path: Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(video.frames):
        write_pgm(path / FRAME_PATTERN.format(i), frame)
    if video.labels is not None:
        (path / LABELS_FILE).write_text("".join(f"{int(v)}\n" for v in video.labels))


def read_labels(path: Path) -> np.ndarray:
    _audit(path, "labels")
    values = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if line not in ("0", "1"):
            raise DatasetError(f"{path}:{lineno}: expected 0 or 1, got {line!r}")
        values.append(int(line))
    return np.array(values, dtype=np.uint8)


def load_video_dir(path, with_labels: bool = True, video_id: str | None = None,
                   anomaly: str = "none") -> Video:
    """Load ``frame_%06d.pgm`` files (scaled to [0,1]) and, if asked, ``labels.txt``."""
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path}: not a directory")
    numbered = sorted((int(m.group(1)), p) for p in path.iterdir()
                      if (m := _FRAME_RE.match(p.name)))
    if not numbered:
        raise DatasetError(f"{path}: no frame_%06d.pgm files")
    missing = sorted(set(range(numbered[-1][0] + 1)) - {i for i, _ in numbered})
    if missing:
        raise DatasetError(f"{path}: missing frames {missing[:5]}{'...' if len(missing) > 5 else ''}")
    frames = []
    for i, p in numbered:
        _audit(p, "frame")
        img = read_pgm(p)
        if frames and img.shape != frames[0].shape:
            raise DatasetError(f"{p}: size {img.shape} differs from {frames[0].shape}")
        frames.append(img)
    labels = None
    if with_labels and (path / LABELS_FILE).exists():
        labels = read_labels(path / LABELS_FILE)
        if len(labels) != len(frames):
            raise DatasetError(f"{path}: {len(labels)} labels for {len(frames)} frames")
    data = np.stack(frames).astype(np.float32) / np.float32(255.0)
    return Video(video_id or path.name, data, labels, anomaly)


# ---------------------------------------------------------------- manifests

@dataclass
class VideoEntry:
    id: str
    path: str
    role: str
    anomaly: str = "none"


@dataclass
class Dataset:
    """A manifest-described dataset root. Videos load lazily by role."""

    root: Path
    entries: list[VideoEntry]
    info: dict = field(default_factory=dict)

    def entries_for(self, role: str) -> list[VideoEntry]:
        return [e for e in self.entries if e.role == role]

    def train_videos(self) -> list[Video]:
        # training never needs labels; they are not even opened
        return [load_video_dir(self.root / e.path, with_labels=False, video_id=e.id)
                for e in self.entries_for("train")]

    def test_videos(self, require_labels: bool = True) -> list[Video]:
        videos = []
        for e in self.entries_for("test"):
            v = load_video_dir(self.root / e.path, with_labels=True, video_id=e.id, anomaly=e.anomaly)
            if require_labels and v.labels is None:
                raise DatasetError(f"test video {e.id} has no {LABELS_FILE}")
            videos.append(v)
        return videos


def write_manifest(root: Path, entries: Iterable[VideoEntry], info: dict | None = None) -> None:
    doc = {"dataset": dict(info or {}),
           "videos": [{"id": e.id, "path": e.path, "role": e.role, "anomaly": e.anomaly}
                      for e in entries]}
    with open(Path(root) / MANIFEST_FILE, "wb") as f:
        tomli_w.dump(doc, f)


def load_dataset(root) -> Dataset:
    root = Path(root)
    mpath = root / MANIFEST_FILE
    if not mpath.exists():
        raise DatasetError(f"{root}: no {MANIFEST_FILE}")
    _audit(mpath, "manifest")
    with open(mpath, "rb") as f:
        doc = tomli.load(f)
    entries = []
    for i, v in enumerate(doc.get("videos", [])):
        unknown = set(v) - {"id", "path", "role", "anomaly"}
        if unknown:
            raise DatasetError(f"{mpath}: video #{i} has unknown keys {sorted(unknown)}")
        if v.get("role") not in ("train", "test"):
            raise DatasetError(f"{mpath}: video #{i} role must be 'train' or 'test'")
        entries.append(VideoEntry(v["id"], v["path"], v["role"], v.get("anomaly", "none")))
    return Dataset(root, entries, doc.get("dataset", {}))


def save_dataset(root, train: list[Video], test: list[Video], info: dict | None = None) -> Dataset:
    root = Path(root)
    entries = []
    for role, videos in (("train", train), ("test", test)):
        for v in videos:
            rel = f"{role}/{v.id}"
            write_video_dir(v, root / rel)
            entries.append(VideoEntry(v.id, rel, role, v.anomaly))
    write_manifest(root, entries, info)
    return Dataset(root, entries, dict(info or {}))


# ---------------------------------------------------------------- synthetic benchmark

@dataclass
class SynthConfig:
    n_train: int = 8
    n_test: int = 10
    frame_size: int = 64
    n_frames: int = 200
    min_sprites: int = 1
    max_sprites: int = 3
    sprite_min: int = 8
    sprite_max: int = 12
    normal_speed: tuple[float, float] = (1.0, 2.0)
    anomaly_speed: tuple[float, float] = (4.0, 6.0)
    # diameter of the stationary appearance anomaly
    anomaly_size: tuple[int, int] = (20, 24)
    # frames an optional sprite stays visible / stays away
    lifetime: tuple[int, int] = (30, 90)
    gap: tuple[int, int] = (5, 40)
    # anomalous interval, as fractions of the video length
    anomaly_start: tuple[float, float] = (0.2, 0.4)
    anomaly_length: tuple[float, float] = (0.3, 0.5)

    def validate(self) -> None:
        if self.sprite_min < 2 or self.sprite_min > self.sprite_max:
            raise DatasetError(f"invalid sprite size range [{self.sprite_min}, {self.sprite_max}]")
        if self.frame_size < 3 * self.sprite_max:
            raise DatasetError(
                f"frame size {self.frame_size} too small for sprites up to {self.sprite_max} px "
                f"(need >= {3 * self.sprite_max})")
        if not 2 <= self.anomaly_size[0] <= self.anomaly_size[1] <= self.frame_size:
            raise DatasetError(f"invalid anomaly size range {self.anomaly_size}")
        if self.n_frames < 10:
            raise DatasetError(f"videos need at least 10 frames, got {self.n_frames}")
        if self.n_train < 1 or self.n_test < 0:
            raise DatasetError("need at least one training video")
        if not 1 <= self.min_sprites <= self.max_sprites:
            raise DatasetError(f"invalid sprite count range [{self.min_sprites}, {self.max_sprites}]")
        if not (1 <= self.lifetime[0] <= self.lifetime[1] and 0 <= self.gap[0] <= self.gap[1]):
            raise DatasetError("invalid sprite lifetime / gap ranges")
        s0, l0 = self.anomaly_start, self.anomaly_length
        if not (0 <= s0[0] <= s0[1] and 0 < l0[0] <= l0[1] and s0[1] + l0[1] <= 1):
            raise DatasetError("anomaly interval must fit inside the video")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}


@dataclass
class _Sprite:
    x: float
    y: float
    vx: float
    vy: float
    size: int
    texture: np.ndarray  # [size, size]
    alpha: np.ndarray  # [size, size] coverage, 1 inside the shape

    def advance(self, limit: int) -> None:
        self.x += self.vx
        self.y += self.vy
        hi = limit - self.size
        # bounce off the frame border
        if self.x < 0 or self.x > hi:
            self.vx = -self.vx
            self.x = float(np.clip(self.x, 0, hi))
        if self.y < 0 or self.y > hi:
            self.vy = -self.vy
            self.y = float(np.clip(self.y, 0, hi))


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    gx, gy = rng.uniform(-0.15, 0.15, size=2)
    base = 0.25 + gx * (xx - 0.5) + gy * (yy - 0.5)
    # static floor tiles plus fixed grain; identical in every frame of the scene
    tiles = ((xx * size // 16 + yy * size // 16) % 2) * 0.04
    grain = rng.normal(0.0, 0.015, size=(size, size))
    return np.clip(base + tiles + grain, 0.0, 1.0).astype(np.float32)


def _normal_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    level = rng.uniform(0.55, 0.85)
    contrast = rng.uniform(0.025, 0.06)
    period = int(rng.choice([2, 3]))
    stripes = (np.arange(size) // period) % 2
    tex = np.repeat((level - contrast * stripes)[:, None], size, axis=1)
    if rng.random() < 0.5:
        tex = tex.T
    return np.ascontiguousarray(tex, dtype=np.float32)


def _anomalous_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Pattern unlike any normal sprite: checker, speckle, rings or diagonal stripes.

    Contrast is drawn from a wide range, so some anomalies are subtle.
    """
    kind = int(rng.integers(0, 4))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == 0:
        period = int(rng.integers(2, 5))
        pattern = ((xx // period) + (yy // period)) % 2
    elif kind == 1:
        pattern = rng.random((size, size))
    elif kind == 2:
        r = np.hypot(yy - (size - 1) / 2, xx - (size - 1) / 2)
        pattern = 0.5 + 0.5 * np.cos(2 * np.pi * r / rng.uniform(3, 6))
    else:
        period = int(rng.integers(4, 7))
        pattern = ((xx + yy) // (period // 2)) % 2
    level = rng.uniform(0.4, 0.7)
    contrast = rng.uniform(0.1, 0.5)
    return (level + contrast * (pattern - 0.5)).astype(np.float32)


def _square_alpha(size: int) -> np.ndarray:
    return np.ones((size, size), dtype=np.float32)


def _disk_alpha(size: int) -> np.ndarray:
    r = (size - 1) / 2
    yy, xx = np.mgrid[0:size, 0:size]
    return (((yy - r) ** 2 + (xx - r) ** 2) <= (r + 0.25) ** 2).astype(np.float32)


def _random_velocity(rng: np.random.Generator, speed: tuple[float, float]) -> tuple[float, float]:
    v = rng.uniform(*speed)
    ang = rng.uniform(0, 2 * np.pi)
    return v * np.cos(ang), v * np.sin(ang)


def _spawn(rng: np.random.Generator, cfg: SynthConfig, speed, texture_fn, alpha_fn,
           size: int | None = None) -> _Sprite:
    size = int(size if size is not None else rng.integers(cfg.sprite_min, cfg.sprite_max + 1))
    hi = cfg.frame_size - size
    vx, vy = _random_velocity(rng, speed)
    return _Sprite(float(rng.uniform(0, hi)), float(rng.uniform(0, hi)), vx, vy, size,
                   texture_fn(rng, size), alpha_fn(size))


def _render(bg: np.ndarray, sprites: list[_Sprite]) -> np.ndarray:
    frame = bg.copy()
    for s in sprites:
        x, y = int(round(s.x)), int(round(s.y))
        region = frame[y:y + s.size, x:x + s.size]
        region[...] = (1 - s.alpha) * region + s.alpha * s.texture
    return frame


def _slot_schedule(rng: np.random.Generator, cfg: SynthConfig, always_on: bool) -> list[tuple[int, int]]:
    """Visible intervals ``[start, stop)`` of one sprite slot over the video."""
    k = cfg.n_frames
    if always_on:
        return [(0, k)]
    spans = []
    t = int(rng.integers(0, cfg.gap[1] + 1))
    while t < k:
        life = int(rng.integers(cfg.lifetime[0], cfg.lifetime[1] + 1))
        spans.append((t, min(k, t + life)))
        t += life + int(rng.integers(cfg.gap[0], cfg.gap[1] + 1))
    return spans


def _make_video(rng: np.random.Generator, cfg: SynthConfig, bg: np.ndarray, vid: str,
                anomaly: str) -> Video:
    """Render one video from ``max_sprites`` slots.

    The first ``min_sprites`` slots are always occupied; the rest come and go. In
    a test video the anomalous sprite takes over slot 0 for its interval, so the
    on-screen sprite count never leaves the normal range.
    """
    k = cfg.n_frames
    schedules = [_slot_schedule(rng, cfg, i < cfg.min_sprites) for i in range(cfg.max_sprites)]
    sprites: list[_Sprite | None] = [None] * cfg.max_sprites
    start = stop = 0
    intruder = None
    if anomaly != "none":
        start = int(round(rng.uniform(*cfg.anomaly_start) * k))
        stop = min(k, start + int(round(rng.uniform(*cfg.anomaly_length) * k)))
        if anomaly == "appearance":
            size = int(rng.integers(cfg.anomaly_size[0], cfg.anomaly_size[1] + 1))
            intruder = _spawn(rng, cfg, (0.0, 0.0), _anomalous_texture, _disk_alpha, size)
        elif anomaly == "motion":
            intruder = _spawn(rng, cfg, cfg.anomaly_speed, _normal_texture, _square_alpha)
        else:
            raise DatasetError(f"unknown anomaly kind {anomaly!r}")
    frames = np.empty((k, cfg.frame_size, cfg.frame_size), dtype=np.float32)
    labels = np.zeros(k, dtype=np.uint8)
    for t in range(k):
        visible = []
        for i, spans in enumerate(schedules):
            alive = any(a <= t < b for a, b in spans)
            if not alive:
                sprites[i] = None
                continue
            if sprites[i] is None:
                sprites[i] = _spawn(rng, cfg, cfg.normal_speed, _normal_texture, _square_alpha)
            if intruder is not None and i == 0 and start <= t < stop:
                continue
            visible.append(sprites[i])
        if intruder is not None and start <= t < stop:
            visible.append(intruder)
            labels[t] = 1
        frames[t] = _render(bg, visible)
        for s in visible:
            s.advance(cfg.frame_size)
    # quantise once so the in-memory copy equals what a PGM round trip gives back
    frames = to_uint8(frames).astype(np.float32) / np.float32(255.0)
    return Video(vid, frames, labels if anomaly != "none" else None, anomaly)


def synth_benchmark(seed: int, cfg: SynthConfig | None = None) -> tuple[list[Video], list[Video]]:
    """Generate ``(train, test)`` videos of textured squares on a shared static scene.

    Training videos hold only normal motion (1-2 px/frame striped squares that
    come and go). Test video ``i`` carries one anomaly kind, alternating
    appearance (a stationary patterned disk, 20-24 px) and motion
    (a striped square moving 4-6 px/frame);
    labels flag exactly the frames where that sprite is rendered.
    """
    cfg = cfg or SynthConfig()
    cfg.validate()
    root = np.random.SeedSequence(seed)
    scene_seq, train_seq, test_seq = root.spawn(3)
    bg = _background(np.random.default_rng(scene_seq), cfg.frame_size)
    train = [_make_video(np.random.default_rng(s), cfg, bg, f"train_{i:03d}", "none")
             for i, s in enumerate(train_seq.spawn(cfg.n_train))]
    kinds = ("appearance", "motion")
    test = [_make_video(np.random.default_rng(s), cfg, bg, f"test_{i:03d}", kinds[i % 2])
            for i, s in enumerate(test_seq.spawn(cfg.n_test))]
    return train, test
