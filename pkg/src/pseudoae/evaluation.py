"""Frame-level ROC-AUC over a whole test set, evaluation reports, and sweeps."""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import tomli_w
from scipy.stats import rankdata

from .dataset import Video
from .scoring import ScoreSeries, score_video

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


def roc_auc(scores, labels) -> float:
    """Probability that a random positive frame outscores a random negative one.

    Computed from average ranks (Mann-Whitney U), so tied scores count 1/2.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvaluationError(f"scores {scores.shape} and labels {labels.shape} must be equal-length 1-D")
    if not np.all((labels == 0) | (labels == 1)):
        raise EvaluationError("labels must be 0 or 1")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError(f"AUC needs both classes, got {n_pos} positive / {n_neg} negative frames")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) at every distinct threshold, from (0, 0) to (1, 1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last_of_tie = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last_of_tie]
    fp = np.cumsum(~y)[last_of_tie]
    tpr = np.r_[0.0, tp / max(y.sum(), 1)]
    fpr = np.r_[0.0, fp / max((~y).sum(), 1)]
    return fpr, tpr


@dataclass
class LabeledScores:
    scores: np.ndarray
    labels: np.ndarray
    video_ids: np.ndarray

    @classmethod
    def concat(cls, series: Sequence[ScoreSeries], videos: Sequence[Video]) -> "LabeledScores":
        by_id = {v.id: v for v in videos}
        scores, labels, ids = [], [], []
        for s in series:
            v = by_id[s.video_id]
            if v.labels is None:
                raise EvaluationError(f"test video {v.id} has no labels")
            if len(v.labels) != len(s.score):
                raise EvaluationError(f"video {v.id}: {len(s.score)} scores for {len(v.labels)} labels")
            scores.append(s.score)
            labels.append(v.labels)
            ids.extend([s.video_id] * len(s.score))
        return cls(np.concatenate(scores), np.concatenate(labels).astype(np.uint8), np.array(ids))


@dataclass
class EvalReport:
    auc: float
    per_video: dict[str, float | None]
    per_anomaly: dict[str, float]
    histograms: dict[str, list[int]]
    provenance: dict[str, str] = field(default_factory=dict)
    n_frames: int = 0
    n_anomalous: int = 0

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "n_frames": self.n_frames,
            "n_anomalous": self.n_anomalous,
            "per_anomaly": dict(self.per_anomaly),
            # TOML has no null: videos without both classes are left out of the table
            "per_video": {k: v for k, v in self.per_video.items() if v is not None},
            "histograms": {"bins": list(np.linspace(0, 1, 11)), **self.histograms},
            "provenance": dict(self.provenance),
        }


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def videos_hash(videos: Sequence[Video]) -> str:
    h = hashlib.sha256()
    for v in videos:
        h.update(v.id.encode())
        h.update(np.ascontiguousarray(np.rint(v.frames * 255).astype(np.uint8)).tobytes())
        if v.labels is not None:
            h.update(v.labels.tobytes())
    return h.hexdigest()


def report_from_scores(series: Sequence[ScoreSeries], videos: Sequence[Video],
                       provenance: dict | None = None) -> tuple[EvalReport, LabeledScores]:
    ls = LabeledScores.concat(series, videos)
    per_video = {}
    for s in series:
        lab = next(v.labels for v in videos if v.id == s.video_id)
        per_video[s.video_id] = roc_auc(s.score, lab) if 0 < lab.sum() < len(lab) else None
    per_anomaly = {}
    kinds = sorted({v.anomaly for v in videos if v.anomaly != "none"})
    for kind in kinds:
        ids = {v.id for v in videos if v.anomaly == kind}
        sel = np.isin(ls.video_ids, list(ids))
        if 0 < ls.labels[sel].sum() < sel.sum():
            per_anomaly[kind] = roc_auc(ls.scores[sel], ls.labels[sel])
    bins = np.linspace(0, 1, 11)
    hist = {"normal": np.histogram(ls.scores[ls.labels == 0], bins)[0].tolist(),
            "anomalous": np.histogram(ls.scores[ls.labels == 1], bins)[0].tolist()}
    report = EvalReport(roc_auc(ls.scores, ls.labels), per_video, per_anomaly, hist,
                        dict(provenance or {}), int(ls.labels.size), int(ls.labels.sum()))
    return report, ls


def evaluate(model, videos: Sequence[Video], T: int, provenance: dict | None = None,
             keep_recon: bool = False) -> tuple[EvalReport, list[ScoreSeries]]:
    """Score every test video, then compute dataset-level and per-video AUC."""
    if not videos:
        raise EvaluationError("no test videos")
    for v in videos:
        if v.labels is None:
            raise EvaluationError(f"test video {v.id} has no labels")
    series = [score_video(model, v, T, keep_recon=keep_recon) for v in videos]
    prov = {"dataset_hash": videos_hash(videos), **(provenance or {})}
    report, _ = report_from_scores(series, videos, prov)
    return report, series


def write_report(out_dir, report: EvalReport, ls: LabeledScores | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.toml", "wb") as f:
        tomli_w.dump(report.to_dict(), f)
    if ls is not None:
        fpr, tpr = roc_curve(ls.scores, ls.labels)
        with open(out_dir / "roc.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["fpr", "tpr"])
            w.writerows(zip((f"{v:.6f}" for v in fpr), (f"{v:.6f}" for v in tpr)))


def dedupe_grid(values: Sequence) -> list:
    seen, out = set(), []
    for v in values:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


@dataclass
class SweepPoint:
    value: object
    auc: float | None
    per_anomaly: dict[str, float] = field(default_factory=dict)
    error: str = ""


def sweep(values: Sequence, run_point: Callable[[object], EvalReport]) -> list[SweepPoint]:
    """Evaluate ``run_point`` at each distinct grid value; a failing point is recorded and skipped."""
    points = []
    for v in dedupe_grid(values):
        try:
            rep = run_point(v)
            points.append(SweepPoint(v, rep.auc, dict(rep.per_anomaly)))
        except Exception as e:  # one bad grid point must not kill the sweep
            log.error("sweep point %r failed: %s", v, e)
            points.append(SweepPoint(v, None, {}, f"{type(e).__name__}: {e}"))
    return points


def write_sweep_csv(path, param: str, points: Sequence[SweepPoint]) -> None:
    kinds = sorted({k for p in points for k in p.per_anomaly})
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([param, "auc", *(f"auc_{k}" for k in kinds), "error"])
        for p in points:
            val = ",".join(map(str, p.value)) if isinstance(p.value, (list, tuple)) else p.value
            w.writerow([val, "" if p.auc is None else f"{p.auc:.6f}",
                        *(f"{p.per_anomaly[k]:.6f}" if k in p.per_anomaly else "" for k in kinds),
                        p.error])
