"""Command-line entry point: ``pseudoae {synth,preview-aug,train,score,eval,sweep}``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every command writes
``provenance.json`` (argv, config snapshot, seed, package version) into its
output directory.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, ExperimentConfig, PatchConfig, SkipConfig, load_config, save_config
from .dataset import DatasetError, SynthConfig, load_dataset, save_dataset, synth_benchmark, write_pgm
from .evaluation import (EvaluationError, evaluate, report_from_scores, sweep, write_report,
                         write_sweep_csv)
from .pseudoanom import PseudoAnomalyError, sample_training_input
from .scoring import ScoringError, write_heatmaps, write_scores_csv
from .trainer import TrainingError, generator_config, model_from_checkpoint, train

log = logging.getLogger("pseudoae")

PROVENANCE_FILE = "provenance.json"
SWEEP_PARAMS = {"p": ("train", "p"), "s": ("skip", "s"), "alpha": ("patch", "alpha"),
                "beta": ("patch", "beta"), "lr": ("train", "lr")}
RUNTIME_ERRORS = (ConfigError, DatasetError, CheckpointError, TrainingError, EvaluationError,
                  ScoringError, PseudoAnomalyError, OSError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers

def _prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and not out.is_dir():
        raise DatasetError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise DatasetError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_provenance(out: Path, args: argparse.Namespace, config: dict | None = None,
                     extra: dict | None = None) -> Path:
    record = {
        "command": args.command,
        "argv": list(args.argv),
        "seed": args.seed,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config or {},
        **(extra or {}),
    }
    path = out / PROVENANCE_FILE
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def _experiment_config(args, validate: bool = True) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.train.seed = args.seed
    if getattr(args, "data", None):
        cfg.data.root = str(args.data)
    return cfg.validate() if validate else cfg


def _data_root(args, cfg: ExperimentConfig | None = None) -> Path:
    root = getattr(args, "data", None) or (cfg.data.root if cfg else "")
    if not root:
        raise UsageError("no dataset given: pass --data or set data.root in the config")
    return Path(root)


def _model_and_T(ckpt_path):
    ckpt = load_checkpoint(ckpt_path)
    model = model_from_checkpoint(ckpt)
    return ckpt, model, model.config.frames


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> None:
    cfg = SynthConfig(n_train=args.videos, n_test=args.test_videos, frame_size=args.size,
                      n_frames=args.frames)
    cfg.validate()
    out = _prepare_out(Path(args.out), args.force)
    seed = 0 if args.seed is None else args.seed
    train_v, test_v = synth_benchmark(seed, cfg)
    save_dataset(out, train_v, test_v, {"generator": "synthetic", "seed": seed, **cfg.to_dict()})
    write_provenance(out, args, {"synth": cfg.to_dict()})
    print(f"wrote {len(train_v)} train / {len(test_v)} test videos to {out}")


def cmd_preview_aug(args) -> None:
    cfg = _experiment_config(args, validate=False)
    if args.kind == "patch" and cfg.patch is None:
        cfg.patch = PatchConfig()
    if args.kind == "skip" and cfg.skip is None:
        cfg.skip = SkipConfig()
    if args.kind == "patch":
        cfg.skip = None
    else:
        cfg.patch = None
    cfg.validate()
    seed = cfg.train.seed
    if args.data:
        videos = load_dataset(args.data).train_videos()
    else:
        videos, _ = synth_benchmark(seed)
    out = _prepare_out(Path(args.out), args.force)
    gen = generator_config(cfg, videos)
    T = cfg.data.frames
    rng = np.random.default_rng(seed)
    meta = []
    for i in range(args.count):
        v = videos[int(rng.integers(0, len(videos)))]
        n = int(rng.integers(0, len(v) - T + 1))
        s = sample_training_input(v, n, T, 1.0, gen, rng)
        if s.pseudo.masks is not None:
            mask = s.pseudo.masks
        else:
            mask = (np.abs(s.input - s.target)[:, 0] > 1e-6).astype(np.float32)
        # one row per frame: input | target | mask
        rows = [np.concatenate([s.input[t, 0], s.target[t, 0], mask[t]], axis=1) for t in range(T)]
        write_pgm(out / f"triptych_{i:03d}.pgm", np.clip(np.concatenate(rows, axis=0), 0, 1))
        p = s.pseudo
        meta.append({"index": i, "video_id": s.video_id, "start": s.start, "kind": p.kind,
                     "stride": p.stride, "input_indices": p.input_indices,
                     "patch": None if p.patch is None else {
                         "centers": [list(c) for c in p.patch.centers], "size": list(p.patch.size),
                         "mask": p.patch.mask_kind, "intruder": p.patch.intruder_ref}})
    (out / "samples.json").write_text(json.dumps(meta, indent=2) + "\n")
    write_provenance(out, args, cfg.to_dict())
    print(f"wrote {args.count} {args.kind} triptychs to {out}")


def cmd_train(args) -> None:
    if not args.config:
        raise UsageError("train requires --config")
    cfg = _experiment_config(args)
    videos = load_dataset(_data_root(args, cfg)).train_videos()
    out = Path(args.out)
    if args.resume is None:
        out = _prepare_out(out, args.force)
    save_config(cfg, out / "config.toml")
    write_provenance(out, args, cfg.to_dict(), {"config_hash": cfg.hash()})
    result = train(cfg, videos, out, resume_from=args.resume)
    final = result.checkpoints[-1] if result.checkpoints else None
    print(f"trained {cfg.train.epochs} epochs, pseudo fraction {result.pseudo_fraction:.3f}, "
          f"final checkpoint {final}")


def cmd_score(args) -> None:
    ckpt, model, T = _model_and_T(args.ckpt)
    ds = load_dataset(_data_root(args))
    videos = ds.test_videos(require_labels=False)
    out = _prepare_out(Path(args.out), args.force)
    from .scoring import score_video

    series = []
    for v in videos:
        s = score_video(model, v, T, keep_recon=args.heatmaps)
        if args.heatmaps:
            write_heatmaps(out / "heatmaps" / v.id, v, s)
            s.recon.clear()
        series.append(s)
    write_scores_csv(out / "scores.csv", series)
    write_provenance(out, args, ckpt.config.get("experiment", {}), {"checkpoint": str(args.ckpt)})
    print(f"scored {len(videos)} videos -> {out / 'scores.csv'}")


def cmd_eval(args) -> None:
    ckpt, model, T = _model_and_T(args.ckpt)
    videos = load_dataset(_data_root(args)).test_videos(require_labels=True)
    out = _prepare_out(Path(args.out), args.force)
    from .evaluation import file_hash

    report, series = evaluate(model, videos, T, {"checkpoint_hash": file_hash(args.ckpt),
                                                 "config_hash": ckpt.config_hash})
    _, ls = report_from_scores(series, videos)
    write_report(out, report, ls)
    write_scores_csv(out / "scores.csv", series)
    write_provenance(out, args, ckpt.config.get("experiment", {}), {"checkpoint": str(args.ckpt)})
    per = ", ".join(f"{k} {v:.4f}" for k, v in report.per_anomaly.items())
    print(f"AUC {report.auc:.4f}" + (f" ({per})" if per else ""))


def _parse_grid(param: str, grid: str) -> list:
    items = [g.strip() for g in grid.split(",") if g.strip()]
    if not items:
        raise UsageError("--grid is empty")
    try:
        if param == "s":
            return [tuple(int(x) for x in g.split("+")) for g in items]
        if param == "beta":
            return [int(g) for g in items]
        return [float(g) for g in items]
    except ValueError as e:
        raise UsageError(f"bad --grid value for {param}: {e}") from None


def cmd_sweep(args) -> None:
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"--param must be one of {sorted(SWEEP_PARAMS)}")
    base = _experiment_config(args, validate=False)
    values = _parse_grid(args.param, args.grid)
    ds = load_dataset(_data_root(args, base))
    train_v, test_v = ds.train_videos(), ds.test_videos(require_labels=True)
    out = _prepare_out(Path(args.out), args.force)
    section, key = SWEEP_PARAMS[args.param]

    def run_point(value):
        cfg = copy.deepcopy(base)
        if section == "skip" and cfg.skip is None:
            cfg.skip = SkipConfig()
        if section == "patch" and cfg.patch is None:
            cfg.patch = PatchConfig()
        setattr(getattr(cfg, section), key, list(value) if isinstance(value, tuple) else value)
        cfg.validate()
        tag = "_".join(map(str, value)) if isinstance(value, tuple) else str(value)
        res = train(cfg, train_v, out / f"{args.param}_{tag}")
        report, _ = evaluate(res.model, test_v, cfg.data.frames, {"config_hash": cfg.hash()})
        return report

    points = sweep(values, run_point)
    write_sweep_csv(out / "sweep.csv", args.param, points)
    write_provenance(out, args, base.to_dict(), {"param": args.param, "grid": args.grid})
    for p in points:
        print(f"{args.param}={p.value}: " + (f"AUC {p.auc:.4f}" if p.auc is not None else p.error))
    if all(p.auc is None for p in points):
        raise TrainingError("every sweep point failed")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pseudoae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pseudoae {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", type=Path, help="experiment TOML ([data], [model], [train], [pseudo.*])")
        p.add_argument("--seed", type=int, help="random seed (overrides train.seed)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty --out")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate the synthetic moving-sprites benchmark")
    p.add_argument("--frames", type=int, default=SynthConfig.n_frames, help="frames per video")
    p.add_argument("--videos", type=int, default=SynthConfig.n_train, help="number of training videos")
    p.add_argument("--test-videos", type=int, default=SynthConfig.n_test, help="number of test videos")
    p.add_argument("--size", type=int, default=SynthConfig.frame_size, help="frame side in pixels")

    p = command("preview-aug", cmd_preview_aug, "write input/target/mask triptychs of pseudo anomalies")
    p.add_argument("--kind", choices=("patch", "skip"), default="patch", help="pseudo-anomaly kind")
    p.add_argument("--count", type=int, default=4, help="number of samples")
    p.add_argument("--data", type=Path, help="dataset root (default: synthetic benchmark from --seed)")

    p = command("train", cmd_train, "train an autoencoder (baseline when train.p = 0)")
    p.add_argument("--data", type=Path, help="dataset root (overrides data.root)")
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")

    p = command("score", cmd_score, "write per-frame PSNR and anomaly scores")
    p.add_argument("--ckpt", type=Path, required=True, help="model checkpoint")
    p.add_argument("--data", type=Path, required=True, help="dataset root")
    p.add_argument("--heatmaps", action="store_true", help="also write error heatmaps")

    p = command("eval", cmd_eval, "frame-level ROC-AUC report for a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True, help="model checkpoint")
    p.add_argument("--data", type=Path, required=True, help="dataset root with labelled test videos")

    p = command("sweep", cmd_sweep, "train and evaluate over a grid of one hyperparameter")
    p.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)}")
    p.add_argument("--grid", required=True,
                   help="comma-separated values; for s join a stride set with '+', e.g. 2,3,2+3+4+5")
    p.add_argument("--data", type=Path, help="dataset root (overrides data.root)")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        args.argv = argv
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
