"""Command-line entry points tying data generation, training, evaluation,
and the weak-supervision sweep into reproducible experiments.

Commands: ``generate-data``, ``train``, ``eval``, ``sweep-supervision``.
Every command takes ``--config``, ``--seed``, ``--out``; each output
directory receives a ``run_meta.json`` recording the resolved config hash and
seed. Exit codes: 0 success, 2 config error, 3 data error, 4 training
failure, 1 unexpected error.

Set ``UPGAN_DEVICE`` (default ``cpu``) to select the compute backend.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import traceback
from pathlib import Path

import numpy as np

from . import tensorio
from .config import ConfigError, ExperimentConfig, load_config
from .dataset import (
    DataError,
    DatasetManifest,
    ingest_degradation_task,
    ingest_paired_dirs,
    procedural_pairs,
    subset_supervision,
)
from .degrade import MotionSeverity
from .evaluate import evaluate_cascade, supervision_curves
from .metrics import paired_significance
from .trainer import TrainingDivergedError, load_checkpoint, restore_best, train

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4

ARCH_FIELDS = (
    "phases", "base_width", "depth", "disc_layers", "disc_width",
    "conditional_disc", "beta_min", "beta_max", "alpha_floor",
)


def _write_meta(directory: Path, cfg: ExperimentConfig, command: str, **extra) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    tensorio.write_json(directory / "run_meta.json", {
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        **extra,
    })


def cmd_generate_data(cfg: ExperimentConfig, out_dir: Path) -> DatasetManifest:
    data_dir = out_dir / "data"
    size = cfg.data.image_size
    if cfg.task == "procedural":
        manifest = procedural_pairs(
            cfg.data.num_subjects, data_dir, size=(size, size),
            slices_per_subject=cfg.data.slices_per_subject, seed=cfg.seed,
            split_ratios=cfg.data.split_ratios, split_counts=cfg.data.split_counts,
        )
    elif cfg.task in ("undersample", "motion"):
        manifest = ingest_degradation_task(
            cfg.data.dir, data_dir, cfg.task, seed=cfg.seed,
            keep_fraction=cfg.data.keep_fraction, mask_mode=cfg.data.mask_mode,
            motion=MotionSeverity(cfg.data.motion_segments,
                                  cfg.data.motion_max_rotation_deg,
                                  cfg.data.motion_max_translation_px),
            split_ratios=cfg.data.split_ratios,
        )
    else:
        manifest = ingest_paired_dirs(cfg.data.dir, data_dir, seed=cfg.seed,
                                      split_ratios=cfg.data.split_ratios)
    manifest.params["config_hash"] = cfg.config_hash()
    manifest.save(data_dir)
    _write_meta(data_dir, cfg, "generate-data", n_samples=len(manifest.samples))
    return manifest


def resolve_manifest(cfg: ExperimentConfig, out_dir: Path) -> DatasetManifest:
    source = Path(cfg.data.manifest) if cfg.data.manifest else out_dir / "data"
    if not (source / "manifest.json").exists() and source.suffix != ".json":
        raise DataError(
            f"no manifest at {source}; run `upgan generate-data` first or set data.manifest"
        )
    return DatasetManifest.load(source)


def cmd_train(cfg: ExperimentConfig, out_dir: Path, ablation: str | None = None,
              resume: str | None = None) -> Path:
    manifest = resolve_manifest(cfg, out_dir)
    tc = cfg.train
    if ablation == "no-guidance":
        tc = dataclasses.replace(tc, guided=False)
    elif ablation is not None:
        raise ConfigError(f"unknown ablation {ablation!r}; supported: no-guidance")
    run_dir = out_dir / ("train" if tc.guided else "train_noguidance")
    if resume is not None:
        header = load_checkpoint_header(Path(resume))
        if header["config"] != tc.to_dict():
            raise ConfigError(
                f"checkpoint {resume} was trained with a different config; "
                "resume requires identical settings"
            )
    _write_meta(run_dir, cfg, "train", ablation=ablation, resume=str(resume) if resume else None)
    state = train(tc, manifest, out_dir=run_dir, resume_from=resume)
    final = run_dir / "checkpoints" / "final"
    print(f"training complete: {len(state.history)} records, final checkpoint {final}")
    return final


def load_checkpoint_header(path: Path) -> dict:
    import json

    header_path = Path(path) / "header.json"
    if not header_path.exists():
        raise ConfigError(f"no checkpoint header at {header_path}")
    return json.loads(header_path.read_text())


def _check_arch_match(cfg: ExperimentConfig, ckpt_config: dict, checkpoint: str) -> None:
    ours = cfg.train.to_dict()
    mismatched = [f for f in ARCH_FIELDS if ours[f] != ckpt_config.get(f)]
    if mismatched:
        raise ConfigError(
            f"checkpoint {checkpoint} architecture differs from config on {mismatched}"
        )


def cmd_eval(cfg: ExperimentConfig, out_dir: Path, checkpoint: str,
             compare: str | None = None):
    manifest = resolve_manifest(cfg, out_dir)
    state = load_checkpoint(checkpoint)
    _check_arch_match(cfg, state.config.to_dict(), checkpoint)
    eval_dir = out_dir / "eval"
    _write_meta(eval_dir, cfg, "eval", checkpoint=str(checkpoint),
                compare=str(compare) if compare else None)

    report = evaluate_cascade(
        state.generators, manifest, split=cfg.eval.split, guided=state.config.guided,
        batch_size=cfg.train.batch_size,
        figures_dir=eval_dir / "figures" if cfg.eval.figures else None,
        max_figures=cfg.eval.figures,
        meta={"config_hash": cfg.config_hash(), "seed": cfg.seed,
              "checkpoint": str(checkpoint)},
    )

    if compare is not None:
        other = load_checkpoint(compare)
        other_report = evaluate_cascade(
            other.generators, manifest, split=cfg.eval.split, guided=other.config.guided,
            batch_size=cfg.train.batch_size,
            meta={"checkpoint": str(compare)},
        )
        for metric in ("ssim", "mae", "psnr"):
            ours = [r[metric] for r in report.rows]
            theirs = [r[metric] for r in other_report.rows]
            finite = [(x, y) for x, y in zip(ours, theirs)
                      if np.isfinite(x) and np.isfinite(y)]
            if len(finite) >= 5:
                xs, ys = zip(*finite)
                report.p_values[f"{metric}_vs_compare"] = paired_significance(xs, ys)
        report.meta["compare_aggregates"] = other_report.aggregates
        other_report.save(eval_dir / "report_compare.json")

    report.save(eval_dir / "report.json")
    report.save_csv(eval_dir / "report.csv")
    agg = report.aggregates
    for metric in ("psnr", "ssim", "mae"):
        if metric in agg:
            print(f"{metric}: {agg[metric]['mean']:.4f} +- {agg[metric]['std']:.4f}")
    return report


def run_supervision_level(cfg: ExperimentConfig, manifest: DatasetManifest, level: int,
                          out_dir: Path | None, seed: int | None = None) -> dict:
    """Train and evaluate one supervision level; returns a summary row."""
    tc = cfg.train
    if seed is not None:
        tc = dataclasses.replace(tc, seed=seed)
    sub = subset_supervision(manifest, level, seed=tc.seed)
    state = train(tc, sub, out_dir=out_dir / "train" if out_dir else None)
    restore_best(state)  # evaluate the model-selection winner, not the last epoch
    report = evaluate_cascade(state.generators, sub, split=cfg.eval.split,
                              guided=tc.guided, batch_size=tc.batch_size)
    if out_dir is not None:
        report.save(out_dir / "report.json")
    agg = report.aggregates
    return {
        "level": level,
        "seed": tc.seed,
        "status": "ok",
        "mae": agg["mae"]["mean"],
        "psnr": agg["psnr"]["mean"],
        "ssim": agg["ssim"]["mean"],
    }


def cmd_sweep_supervision(cfg: ExperimentConfig, out_dir: Path,
                          levels=None) -> dict:
    manifest = resolve_manifest(cfg, out_dir)
    levels = list(levels) if levels else list(cfg.sweep.levels)
    sweep_dir = out_dir / "sweep"
    _write_meta(sweep_dir, cfg, "sweep-supervision", levels=levels)

    results = []
    for level in levels:
        try:
            row = run_supervision_level(cfg, manifest, level, sweep_dir / f"level{level}")
        except (DataError, ConfigError, TrainingDivergedError, ValueError) as exc:
            row = {"level": level, "status": "failed", "error": str(exc)}
            print(f"level {level} failed: {exc}", file=sys.stderr)
        results.append(row)
        if row["status"] == "ok":
            print(f"level {level}: mae={row['mae']:.4f} psnr={row['psnr']:.2f} "
                  f"ssim={row['ssim']:.4f}")

    ok_rows = sorted((r for r in results if r["status"] == "ok"), key=lambda r: r["level"])
    maes = [r["mae"] for r in ok_rows]
    summary = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "levels": levels,
        "results": results,
        "mae_non_increasing": bool(np.all(np.diff(maes) <= 0)) if len(maes) > 1 else None,
    }
    tensorio.write_json(sweep_dir / "sweep_report.json", summary)
    if ok_rows:
        supervision_curves(ok_rows, sweep_dir / "curves.png")
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="upgan",
        description="Uncertainty-guided progressive GAN experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config YAML")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")

    common(sub.add_parser("generate-data", help="build the paired dataset + manifest"))

    p_train = sub.add_parser("train", help="run the progressive training schedule")
    common(p_train)
    p_train.add_argument("--ablation", choices=["no-guidance"], default=None,
                         help="train the unguided cascade variant")
    p_train.add_argument("--resume", default=None, help="checkpoint directory to resume from")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p_eval.add_argument("--compare", default=None,
                        help="second checkpoint; adds paired significance tests")

    p_sweep = sub.add_parser("sweep-supervision", help="train/eval at several supervision levels")
    common(p_sweep)
    p_sweep.add_argument("--levels", default=None,
                         help="comma-separated subject counts (default: config sweep.levels)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        if args.out is not None:
            cfg.output.dir = args.out
        out_dir = cfg.out_path()

        if args.command == "generate-data":
            manifest = cmd_generate_data(cfg, out_dir)
            print(f"manifest: {out_dir / 'data' / 'manifest.json'} "
                  f"({len(manifest.samples)} samples)")
        elif args.command == "train":
            cmd_train(cfg, out_dir, ablation=args.ablation, resume=args.resume)
        elif args.command == "eval":
            cmd_eval(cfg, out_dir, checkpoint=args.checkpoint, compare=args.compare)
        elif args.command == "sweep-supervision":
            levels = [int(v) for v in args.levels.split(",")] if args.levels else None
            cmd_sweep_supervision(cfg, out_dir, levels=levels)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except Exception:
        traceback.print_exc()
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
