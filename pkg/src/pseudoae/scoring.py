"""PSNR-based frame scoring, per-video min-max normalisation, and error heatmaps."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .dataset import Video, write_pgm

PEAK = 1.0  # pixels live in [0, 1]
MSE_FLOOR = 1e-10  # caps PSNR at 100 dB for a perfect reconstruction


class ScoringError(ValueError):
    pass


def psnr(frame: np.ndarray, recon: np.ndarray, peak: float = PEAK) -> float:
    """Peak signal-to-noise ratio in dB between a frame and its reconstruction."""
    frame = np.asarray(frame, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if frame.shape != recon.shape:
        raise ScoringError(f"psnr: shapes differ: {frame.shape} vs {recon.shape}")
    mse = max(float(np.mean((recon - frame) ** 2)), MSE_FLOOR)
    return 10.0 * np.log10(peak * peak / mse)


def normalize_scores(p: Iterable[float]) -> np.ndarray:
    """Anomaly scores ``1 - (P - min P) / (max P - min P)``; a constant series maps to zeros."""
    p = np.asarray(list(p) if not isinstance(p, np.ndarray) else p, dtype=np.float64)
    if p.size == 0:
        raise ScoringError("normalize_scores: empty PSNR series")
    lo, hi = p.min(), p.max()
    if hi == lo:
        return np.zeros_like(p)
    return np.clip(1.0 - (p - lo) / (hi - lo), 0.0, 1.0)


def heatmap(frame: np.ndarray, recon: np.ndarray) -> np.ndarray:
    """Per-pixel squared error, min-max normalised over the frame (all zeros if constant)."""
    frame = np.asarray(frame, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if frame.shape != recon.shape:
        raise ScoringError(f"heatmap: shapes differ: {frame.shape} vs {recon.shape}")
    err = (frame - recon) ** 2
    lo, hi = err.min(), err.max()
    if hi == lo:
        return np.zeros_like(err)
    return (err - lo) / (hi - lo)


@dataclass
class ScoreSeries:
    video_id: str
    psnr: np.ndarray  # dB, one per frame
    score: np.ndarray  # in [0, 1], one per frame
    source: np.ndarray  # frame whose reconstruction produced each entry
    recon: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.score)


def center_offset(T: int) -> int:
    """0-based position of the scored frame inside a window of ``T`` frames."""
    return T // 2


def score_video(model, video: Video, T: int, batch_size: int = 8,
                keep_recon: bool = False) -> ScoreSeries:
    """Score every frame of ``video`` with stride-1 windows.

    Window ``n`` scores only frame ``n + T // 2``; frames before the first or
    after the last centre inherit the nearest computed PSNR. Labels are never read.
    """
    K = len(video)
    if K < T:
        raise ScoringError(f"video {video.id} has {K} frames, shorter than T={T}")
    c = center_offset(T)
    n_windows = K - T + 1
    computed = np.empty(n_windows)
    recon = {}
    for b0 in range(0, n_windows, batch_size):
        starts = range(b0, min(b0 + batch_size, n_windows))
        x = np.stack([video.frames[n:n + T, None] for n in starts])
        xhat = model.reconstruct(x)
        for i, n in enumerate(starts):
            computed[n] = psnr(x[i, c, 0], xhat[i, c, 0])
            if keep_recon:
                recon[n + c] = xhat[i, c, 0].copy()
    source = np.clip(np.arange(K), c, c + n_windows - 1)
    p = computed[source - c]
    return ScoreSeries(video.id, p, normalize_scores(p), source, recon)


SCORES_HEADER = ["video_id", "frame_idx", "psnr_db", "score"]


def write_scores_csv(path, series: Iterable[ScoreSeries]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SCORES_HEADER)
        for s in series:
            for t, (p, sc) in enumerate(zip(s.psnr, s.score)):
                w.writerow([s.video_id, t, f"{p:.6f}", f"{sc:.6f}"])


def read_scores_csv(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    out: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        if r.fieldnames != SCORES_HEADER:
            raise ScoringError(f"{path}: expected header {SCORES_HEADER}, got {r.fieldnames}")
        for row in r:
            ps, ss = out.setdefault(row["video_id"], ([], []))
            ps.append(float(row["psnr_db"]))
            ss.append(float(row["score"]))
    return {k: (np.array(a), np.array(b)) for k, (a, b) in out.items()}


def write_heatmaps(out_dir, video: Video, series: ScoreSeries) -> list[Path]:
    """Write ``heat_%06d.pgm`` and ``recon_%06d.pgm`` for every frame with a kept reconstruction."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for t, rec in sorted(series.recon.items()):
        write_pgm(out_dir / f"recon_{t:06d}.pgm", np.clip(rec, 0, 1))
        path = out_dir / f"heat_{t:06d}.pgm"
        write_pgm(path, heatmap(video.frames[t], rec))
        written.append(path)
    return written
