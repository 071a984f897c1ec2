"""Operator command line: gen, train, detect, eval, tile, bench, plot.

One JSON config file drives every command; flags override individual keys
(flags win). ``--threads`` falls back to the S3D_THREADS environment
variable. Exit code is 0 iff no error path was taken.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from .config import RunConfig
from .data import load_annotations
from .errors import S3DError
from .infer import load_detections
from .metrics import EvalConfig
from .pipeline import run_bench, run_detection, run_evaluation, run_generation, run_training
from .spans import SpanGridConfig, tile_default_spans
from .timeline import render_timeline_svg


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s3d", description="single-shot multi-span temporal activity detector"
    )
    parser.add_argument("--config", type=Path, help="JSON run-config file")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument(
        "--threads", type=int, help="worker threads (falls back to S3D_THREADS)"
    )
    parser.add_argument("--force", action="store_true", help="overwrite existing outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset (train and test splits)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--num-train", type=int, help="override train split size")
    p.add_argument("--num-test", type=int, help="override test split size")

    p = sub.add_parser("train", help="train a model on a dataset split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output model path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--overfit-one-window", action="store_true")
    p.add_argument("--steps", type=int, default=200, help="steps in overfit mode")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--log-csv", type=Path, help="per-step loss log")

    p = sub.add_parser("detect", help="run windowed inference over a dataset split")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output detections JSON")
    p.add_argument("--score-threshold", type=float)
    p.add_argument("--nms-threshold", type=float)

    p = sub.add_parser("eval", help="mAP over IoU thresholds")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--thresholds", type=_parse_float_list)
    p.add_argument("--out-csv", type=Path)

    p = sub.add_parser("tile", help="print the default-span table")
    p.add_argument("--layers", type=_parse_int_list)
    p.add_argument("--ratios", type=_parse_float_list)

    p = sub.add_parser("bench", help="forward-pass throughput")
    p.add_argument("--model", type=Path)
    p.add_argument("--windows", type=int, default=16)

    p = sub.add_parser("plot", help="SVG timeline of detections vs ground truth")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--min-score", type=float, default=0.0)

    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_json_file(args.config) if args.config else RunConfig()
    threads = args.threads
    if threads is None and os.environ.get("S3D_THREADS"):
        threads = int(os.environ["S3D_THREADS"])
    overrides = {
        "seed": args.seed,
        "threads": threads,
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "learning_rate": getattr(args, "lr", None),
        "score_threshold": getattr(args, "score_threshold", None),
        "nms_threshold": getattr(args, "nms_threshold", None),
        "iou_thresholds": getattr(args, "thresholds", None),
        "num_train_videos": getattr(args, "num_train", None),
        "num_test_videos": getattr(args, "num_test", None),
    }
    return cfg.with_overrides(**overrides)


def cmd_gen(cfg: RunConfig, args: argparse.Namespace) -> int:
    out: Path = args.out
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: {out} exists and is not empty (use --force)", file=sys.stderr)
        return 1
    manifests = run_generation(cfg, out)
    for split in ("train", "test"):
        m = manifests[split]
        total = sum(len(v["annotations"]) for v in _split_annotations(out / split))
        print(f"{split}: {len(m['videos'])} videos, {total} instances, classes {m['class_names']}")
    for split in ("train", "test"):
        for v in manifests[split]["videos"]:
            print(f"  {v['id']}  {v['duration_sec']:.1f}s  {v['num_frames']} frames")
    return 0


def _split_annotations(split_dir: Path) -> list[dict]:
    return load_annotations(split_dir / "annotations.json")


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.out.exists() and not args.force and args.resume is None:
        print(f"error: {args.out} exists (use --force)", file=sys.stderr)
        return 1
    _, history = run_training(
        cfg,
        args.data,
        args.out,
        epochs=args.epochs,
        overfit_one_window=args.overfit_one_window,
        overfit_steps=args.steps,
        resume=args.resume,
        log_csv=args.log_csv,
        progress=print,
    )
    if history:
        print(f"trained {len(history)} steps; final total loss {history[-1].total:.4f}")
    else:
        print("trained 0 steps; saved the initialized model")
    print(f"model written to {args.out}")
    return 0


def cmd_detect(cfg: RunConfig, args: argparse.Namespace) -> int:
    records = run_detection(cfg, args.model, args.data, args.out)
    total = sum(len(dets) for _, dets in records)
    print(f"{total} detections over {len(records)} videos written to {args.out}")
    return 0


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    eval_cfg = EvalConfig(cfg.iou_thresholds)
    detections = load_detections(args.detections)
    annotations = load_annotations(args.annotations)
    vocabulary = _dataset_vocabulary(args.annotations, detections, annotations)
    maps, rows = run_evaluation(detections, annotations, eval_cfg, vocabulary=vocabulary)
    header = "IoU threshold " + "".join(f"{t:>8.2f}" for t in eval_cfg.iou_thresholds)
    values = "mAP           " + "".join(f"{maps[t]:>8.4f}" for t in eval_cfg.iou_thresholds)
    print(header)
    print(values)
    if args.out_csv:
        with open(args.out_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iou_threshold", "class", "ap"])
            writer.writerows(rows)
            for t in eval_cfg.iou_thresholds:
                writer.writerow([t, "__mean__", maps[t]])
        print(f"per-class AP written to {args.out_csv}")
    return 0


def _dataset_vocabulary(annotations_path: Path, detections: list, annotations: list) -> list[str]:
    """Legal label set for evaluation: the manifest's class list when the
    annotation file lives in a dataset split, else every label seen in
    either file (bare-file runs cannot distinguish a typo from a class)."""
    manifest = Path(annotations_path).parent / "manifest.json"
    if manifest.exists():
        try:
            return json.loads(manifest.read_text())["class_names"]
        except (json.JSONDecodeError, KeyError):
            pass
    seen = {a["label"] for rec in annotations for a in rec.get("annotations", [])}
    seen |= {d["label"] for rec in detections for d in rec.get("detections", [])}
    return sorted(seen)


def cmd_tile(cfg: RunConfig, args: argparse.Namespace) -> int:
    layers = args.layers if args.layers else cfg.make_network_config().feature_lengths()
    ratios = args.ratios if args.ratios else cfg.ratios
    grid = tile_default_spans(SpanGridConfig(tuple(layers), tuple(ratios)))
    print(f"{'layer':>5} {'cells':>5} {'scale':>8} lengths")
    for f, layer_len in enumerate(grid.config.layer_lengths):
        lengths = " ".join(f"{r / layer_len:.4f}" for r in grid.config.ratios)
        print(f"{f:>5} {layer_len:>5} {1.0 / layer_len:>8.4f} {lengths}")
    print(f"{len(grid)} spans")
    return 0


def cmd_bench(cfg: RunConfig, args: argparse.Namespace) -> int:
    report = run_bench(cfg, args.model, args.windows)
    print(
        f"{report['num_windows']} windows x {report['frames_per_window']} frames "
        f"in {report['elapsed_sec']:.3f}s -> {report['fps']:.1f} FPS"
    )
    print(f"config_hash={report['config_hash']} threads={report['threads']}")
    return 0


def cmd_plot(cfg: RunConfig, args: argparse.Namespace) -> int:
    detections = load_detections(args.detections)
    annotations = load_annotations(args.annotations)
    render_timeline_svg(detections, annotations, args.out, min_score=args.min_score)
    print(f"timeline written to {args.out}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "tile": cmd_tile,
    "bench": cmd_bench,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except S3DError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
