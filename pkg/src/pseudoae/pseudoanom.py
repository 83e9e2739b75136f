"""Pseudo-anomaly generators: moving intruder patches and skipped frames.

Both generators take a normal window and return a perturbed input whose
training target is the untouched normal window. All randomness comes from the
``numpy.random.Generator`` passed in; :func:`sample_rng` derives an independent
stream per (seed, sample index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .dataset import Video

MASK_KINDS = ("smoothmix_s", "cutmix", "smoothmix_c", "mixup_patch")
MIN_PATCH = 10
SMOOTHMIX_RAMP = 0.2
MIXUP_RANGE = (0.3, 0.7)
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".pgm", ".ppm", ".bmp", ".tif", ".tiff"}


class PseudoAnomalyError(ValueError):
    pass


class SkipRangeError(PseudoAnomalyError):
    """The requested skip-frame window runs past the end of the video."""


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


# ---------------------------------------------------------------- masks

def patch_bounds(center: tuple[int, int], size: tuple[int, int]) -> tuple[int, int, int, int]:
    """Pixel rectangle ``(x0, y0, x1, y1)`` (exclusive ends, unclipped) of a patch."""
    (cx, cy), (w, h) = center, size
    x0, y0 = cx - w // 2, cy - h // 2
    return x0, y0, x0 + w, y0 + h


def _raised_cosine_edge(coord: np.ndarray, lo: int, hi: int, ramp: float) -> np.ndarray:
    # distance (in px) from each pixel center to the nearer rectangle edge
    d = np.minimum(coord - lo + 0.5, hi - 0.5 - coord)
    out = np.where(d >= ramp, 1.0, 0.5 - 0.5 * np.cos(np.pi * np.clip(d, 0, None) / ramp))
    return np.where((coord >= lo) & (coord < hi), out, 0.0)


def build_mask(kind: str, center: tuple[int, int], size: tuple[int, int],
               frame_dims: tuple[int, int], lam: float | None = None,
               min_size: int = MIN_PATCH, max_size: tuple[int, int] | None = None) -> np.ndarray:
    """Blend mask ``M[H, W]`` in [0, 1] that is zero outside the patch rectangle.

    * ``smoothmix_s``: separable raised-cosine ramp over the outer 20 % of each half-extent
    * ``cutmix``: hard rectangle
    * ``smoothmix_c``: Gaussian bump on a disk of radius ``min(w, h) / 2``, 1 at the
      center and 0 at the rim
    * ``mixup_patch``: constant ``lam`` inside the rectangle
    """
    H, W = frame_dims
    cx, cy = center
    w, h = size
    max_w, max_h = max_size if max_size is not None else (W, H)
    if not (min_size <= w <= max_w and min_size <= h <= max_h):
        raise PseudoAnomalyError(
            f"patch size {(w, h)} outside [{min_size}, {(max_w, max_h)}]")
    if not (0 <= cx < W and 0 <= cy < H):
        raise PseudoAnomalyError(f"patch center {center} outside a {W}x{H} frame")
    x0, y0, x1, y1 = patch_bounds(center, size)
    xs = np.arange(W, dtype=np.float64)
    ys = np.arange(H, dtype=np.float64)
    inside = (((ys >= y0) & (ys < y1))[:, None] & ((xs >= x0) & (xs < x1))[None, :])

    if kind == "cutmix":
        m = inside.astype(np.float64)
    elif kind == "mixup_patch":
        if lam is None:
            raise PseudoAnomalyError("mixup_patch needs a blend weight lam")
        m = inside * float(lam)
    elif kind == "smoothmix_s":
        mx = _raised_cosine_edge(xs, x0, x1, SMOOTHMIX_RAMP * w / 2)
        my = _raised_cosine_edge(ys, y0, y1, SMOOTHMIX_RAMP * h / 2)
        m = my[:, None] * mx[None, :]
    elif kind == "smoothmix_c":
        radius = min(w, h) / 2
        sigma = radius / 2
        d2 = (ys[:, None] - cy) ** 2 + (xs[None, :] - cx) ** 2
        rim = np.exp(-radius ** 2 / (2 * sigma ** 2))
        bump = (np.exp(-d2 / (2 * sigma ** 2)) - rim) / (1 - rim)
        m = np.where(d2 < radius ** 2, bump, 0.0) * inside
    else:
        raise PseudoAnomalyError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    return np.clip(m, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------- intruders

def procedural_texture(rng: np.random.Generator, H: int, W: int) -> tuple[np.ndarray, str]:
    """One seeded texture image ``[H, W]`` in [0, 1] and a short description."""
    kind = ("noise", "checker", "gradient", "stripes", "blobs")[int(rng.integers(0, 5))]
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    if kind == "noise":
        img = rng.uniform(0, 1, (H, W))
    elif kind == "checker":
        period = int(rng.integers(2, 9))
        img = (((xx // period) + (yy // period)) % 2) * rng.uniform(0.5, 1.0)
    elif kind == "gradient":
        ang = rng.uniform(0, 2 * np.pi)
        g = np.cos(ang) * xx / W + np.sin(ang) * yy / H
        img = (g - g.min()) / max(g.max() - g.min(), 1e-9)
    elif kind == "stripes":
        period = rng.uniform(3, 12)
        ang = rng.uniform(0, np.pi)
        img = 0.5 + 0.5 * np.sin(2 * np.pi * (np.cos(ang) * xx + np.sin(ang) * yy) / period)
    else:
        img = np.zeros((H, W))
        for _ in range(int(rng.integers(3, 8))):
            bx, by = rng.uniform(0, W), rng.uniform(0, H)
            r = rng.uniform(3, max(4.0, min(H, W) / 4))
            img += rng.uniform(0.3, 1.0) * np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * r * r))
        img = np.clip(img, 0, 1)
    return img.astype(np.float32), kind


@dataclass
class IntruderSource:
    """Where patch content comes from.

    ``procedural_textures`` needs nothing else; ``image_directory`` reads every
    image under ``directory``; ``self_dataset`` draws ``T`` consecutive frames from
    ``videos`` so the intruder moves in step with the input.
    """

    kind: str = "procedural_textures"
    directory: Path | None = None
    videos: Sequence[Video] = ()
    _images: list[tuple[str, np.ndarray]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.kind not in ("procedural_textures", "image_directory", "self_dataset"):
            raise PseudoAnomalyError(f"unknown intruder source {self.kind!r}")
        if self.kind == "image_directory":
            if self.directory is None:
                raise PseudoAnomalyError("image_directory intruder needs a directory")
            files = sorted(p for p in Path(self.directory).rglob("*")
                           if p.suffix.lower() in IMAGE_SUFFIXES)
            if not files:
                raise PseudoAnomalyError(f"no images found under {self.directory}")
            for p in files:
                with Image.open(p) as im:
                    self._images.append((p.name, np.asarray(im.convert("L"), dtype=np.uint8)))
        if self.kind == "self_dataset" and not self.videos:
            raise PseudoAnomalyError("self_dataset intruder needs at least one video")

    def sample(self, rng: np.random.Generator, T: int, H: int, W: int) -> tuple[np.ndarray, str]:
        """Intruder frames ``[T, H, W]`` (resized to the input frame size) and a reference id."""
        if self.kind == "procedural_textures":
            img, desc = procedural_texture(rng, H, W)
            return np.broadcast_to(img, (T, H, W)), f"texture:{desc}"
        if self.kind == "image_directory":
            i = int(rng.integers(0, len(self._images)))
            name, arr = self._images[i]
            im = Image.fromarray(arr).resize((W, H), Image.BILINEAR)
            img = np.asarray(im, dtype=np.float32) / np.float32(255.0)
            return np.broadcast_to(img, (T, H, W)), f"image:{name}"
        v = self.videos[int(rng.integers(0, len(self.videos)))]
        if len(v) < T:
            raise PseudoAnomalyError(f"intruder video {v.id} shorter than T={T}")
        n = int(rng.integers(0, len(v) - T + 1))
        frames = v.frames[n:n + T]
        if frames.shape[1:] != (H, W):
            frames = np.stack([np.asarray(Image.fromarray(f).resize((W, H), Image.BILINEAR))
                               for f in frames])
        return frames.astype(np.float32), f"video:{v.id}@{n}"


# ---------------------------------------------------------------- samples

@dataclass
class PatchState:
    centers: list[tuple[int, int]]  # per frame, (x, y)
    size: tuple[int, int]  # (w, h)
    mask_kind: str
    intruder_ref: str
    deltas: list[tuple[int, int]]  # per frame i > 0
    lam: float | None = None


@dataclass
class PseudoAnomalySample:
    input: np.ndarray  # [T, C, H, W]
    target: np.ndarray  # [T, C, H, W]
    kind: str  # "patch" or "skip"
    patch: PatchState | None = None
    masks: np.ndarray | None = None  # [T, H, W], patch kind only
    stride: int | None = None
    input_indices: list[int] | None = None
    target_indices: list[int] | None = None


def move_center(center: tuple[int, int], delta: tuple[int, int],
                frame_dims: tuple[int, int]) -> tuple[int, int]:
    """One random-walk step of the patch center, clamped to the frame."""
    H, W = frame_dims
    return (min(max(center[0] + delta[0], 0), W - 1),
            min(max(center[1] + delta[1], 0), H - 1))


def make_patch_pseudo(xn: np.ndarray, intruder: IntruderSource, alpha: float, beta: int,
                      mask_kind: str, rng: np.random.Generator) -> PseudoAnomalySample:
    """Overlay a moving intruder patch on every frame of the normal window ``xn[T, C, H, W]``."""
    T, C, H, W = xn.shape
    max_w, max_h = int(np.floor(alpha * W)), int(np.floor(alpha * H))
    if max_w < MIN_PATCH or max_h < MIN_PATCH:
        raise PseudoAnomalyError(
            f"alpha={alpha} gives a maximum patch of {(max_w, max_h)} px, below {MIN_PATCH}")
    if beta < 0:
        raise PseudoAnomalyError(f"beta must be >= 0, got {beta}")
    if mask_kind not in MASK_KINDS:
        raise PseudoAnomalyError(f"unknown mask kind {mask_kind!r}")

    center = (int(rng.integers(0, W)), int(rng.integers(0, H)))
    size = (int(rng.integers(MIN_PATCH, max_w + 1)), int(rng.integers(MIN_PATCH, max_h + 1)))
    lam = float(rng.uniform(*MIXUP_RANGE)) if mask_kind == "mixup_patch" else None
    frames, ref = intruder.sample(rng, T, H, W)

    centers, deltas = [center], []
    for _ in range(1, T):
        d = (int(rng.integers(-beta, beta + 1)), int(rng.integers(-beta, beta + 1)))
        deltas.append(d)
        centers.append(move_center(centers[-1], d, (H, W)))

    masks = np.stack([build_mask(mask_kind, c, size, (H, W), lam, max_size=(max_w, max_h))
                      for c in centers])
    m = masks[:, None]  # broadcast over channels
    xp = (1 - m) * xn + m * frames[:, None].astype(np.float32)
    xp = np.clip(xp, 0.0, 1.0).astype(np.float32)
    state = PatchState(centers, size, mask_kind, ref, deltas, lam)
    return PseudoAnomalySample(xp, xn, "patch", patch=state, masks=masks)


def skip_indices(n: int, T: int, s: int) -> list[int]:
    return [n + t * s for t in range(T)]


def make_skip_pseudo(video: Video, n: int, T: int, s: int) -> PseudoAnomalySample:
    """Input frames ``n, n+s, ..., n+(T-1)s``; target the consecutive window from ``n``."""
    if s <= 1:
        raise PseudoAnomalyError(f"skip stride must be > 1, got {s}")
    K = len(video)
    last = n + (T - 1) * s
    if n < 0 or last >= K:
        raise SkipRangeError(f"skip window n={n}, T={T}, s={s} needs frame {last}, video has {K}")
    src = skip_indices(n, T, s)
    tgt = skip_indices(n, T, 1)
    return PseudoAnomalySample(video.frames[src][:, None], video.frames[tgt][:, None], "skip",
                               stride=s, input_indices=src, target_indices=tgt)


# ---------------------------------------------------------------- mixing

@dataclass
class GeneratorConfig:
    kinds: tuple[str, ...] = ("skip",)
    alpha: float = 0.5
    beta: int = 3
    mask_kind: str = "smoothmix_s"
    intruder: IntruderSource = field(default_factory=IntruderSource)
    s_values: tuple[int, ...] = (2, 3, 4, 5)

    def validate(self) -> None:
        bad = set(self.kinds) - {"patch", "skip"}
        if bad:
            raise PseudoAnomalyError(f"unknown pseudo-anomaly kinds {sorted(bad)}")
        if not 0 < self.alpha <= 1:
            raise PseudoAnomalyError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.beta < 0:
            raise PseudoAnomalyError(f"beta must be >= 0, got {self.beta}")
        if not self.s_values or any(s <= 1 for s in self.s_values):
            raise PseudoAnomalyError(f"skip strides must all be > 1, got {self.s_values}")
        if self.mask_kind not in MASK_KINDS:
            raise PseudoAnomalyError(f"unknown mask kind {self.mask_kind!r}")


@dataclass
class TrainingSample:
    input: np.ndarray
    target: np.ndarray
    is_pseudo: bool
    video_id: str
    start: int
    pseudo: PseudoAnomalySample | None = None


def sample_training_input(video: Video, n: int, T: int, p: float, gen: GeneratorConfig,
                          rng: np.random.Generator) -> TrainingSample:
    """With probability ``p`` turn window ``n`` of ``video`` into a pseudo anomaly.

    The target is always the normal window; for skip samples that would overrun
    the video, ``n`` is redrawn so the stride distribution stays as configured.
    """
    if not 0 <= p <= 1:
        raise PseudoAnomalyError(f"p must be in [0, 1], got {p}")
    if not rng.random() < p or not gen.kinds:
        xn = video.frames[n:n + T, None]
        return TrainingSample(xn, xn, False, video.id, n)
    kind = gen.kinds[int(rng.integers(0, len(gen.kinds)))] if len(gen.kinds) > 1 else gen.kinds[0]
    if kind == "skip":
        s = int(gen.s_values[int(rng.integers(0, len(gen.s_values)))])
        span = (T - 1) * s + 1
        if span > len(video):
            raise SkipRangeError(f"video {video.id} has {len(video)} frames, stride {s} needs {span}")
        if n + span > len(video):
            n = int(rng.integers(0, len(video) - span + 1))
        ps = make_skip_pseudo(video, n, T, s)
    else:
        xn = video.frames[n:n + T, None]
        for _ in range(8):
            ps = make_patch_pseudo(xn, gen.intruder, gen.alpha, gen.beta, gen.mask_kind, rng)
            # an intruder that happens to match the scene is not an anomaly; redraw
            if np.any(ps.input != ps.target):
                break
    return TrainingSample(ps.input, ps.target, True, video.id, n, ps)
