"""End-to-end pipelines behind the CLI commands: dataset generation,
training with jitter and checkpointing, windowed detection with
cross-window merging, evaluation, and the throughput benchmark.

Every random stream is derived from (seed, purpose, epoch/video/window
indices) so results do not depend on processing order or thread count.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import (
    TrainingWindow,
    VideoRecord,
    extract_frames,
    generate_synthetic_dataset,
    jitter,
    load_dataset,
    window_annotations,
    window_offsets,
)
from .errors import ConfigError, InputError
from .infer import Detection, WindowPlacement, detect_window, merge_windows, save_detections, to_absolute
from .loss import LossReport
from .metrics import average_precision, mean_ap
from .net.network import Network, SgdMomentum, train_step
from .net.serial import load_checkpoint, load_model, save_checkpoint, save_model

# spawn-key namespaces for derived rng streams
KEY_INIT, KEY_SHUFFLE, KEY_WINDOW, KEY_PAD, KEY_BENCH = 10, 11, 12, 13, 14
SPLIT_TRAIN, SPLIT_TEST = 0, 1


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def run_generation(cfg: RunConfig, out_dir: str | Path) -> dict:
    """Write train/ and test/ splits under out_dir; returns both manifests."""
    out = Path(out_dir)
    train = generate_synthetic_dataset(cfg.data, cfg.num_train_videos, out / "train", SPLIT_TRAIN)
    test = generate_synthetic_dataset(cfg.data, cfg.num_test_videos, out / "test", SPLIT_TEST)
    return {"train": train, "test": test}


def _training_window(
    cfg: RunConfig, video: VideoRecord, offset: int, window_len: int,
    epoch: int, video_index: int, augment: bool,
) -> TrainingWindow:
    rng = derived_rng(cfg.seed, KEY_WINDOW, epoch, video_index, offset)
    amp = cfg.data.noise_amplitude
    frames = extract_frames(video.frames, offset, window_len, amp, rng)
    placement = WindowPlacement(offset / video.fps, window_len / video.fps, video.fps)
    window = TrainingWindow(
        frames, placement, window_annotations(video.annotations, offset, window_len, video.fps)
    )
    if augment:
        window = jitter(window, cfg.jitter_spec(), rng, source=video, noise_amplitude=amp)
    return window


def run_training(
    cfg: RunConfig,
    data_dir: str | Path,
    out_model: str | Path,
    *,
    epochs: int | None = None,
    overfit_one_window: bool = False,
    overfit_steps: int = 200,
    resume: str | Path | None = None,
    log_csv: str | Path | None = None,
    progress=None,
) -> tuple[Network, list[LossReport]]:
    manifest, videos = load_dataset(data_dir)
    num_classes = len(manifest["class_names"])
    if num_classes != cfg.data.num_classes:
        raise ConfigError(
            f"dataset has {num_classes} classes but config expects {cfg.data.num_classes}"
        )
    netcfg = cfg.make_network_config()
    window_len = netcfg.input_shape[0]

    if resume is not None:
        network, optimizer, meta = load_checkpoint(resume)
        if network.config.to_json_dict() != netcfg.to_json_dict():
            raise ConfigError("checkpoint network config does not match the run config")
        start_epoch = int(meta["epoch"]) + 1
        global_step = int(meta["step"])
    else:
        network = Network(netcfg, rng=derived_rng(cfg.seed, KEY_INIT))
        optimizer = SgdMomentum(cfg.learning_rate, cfg.momentum)
        start_epoch = 0
        global_step = 0

    history: list[LossReport] = []
    log_rows: list[tuple] = []

    def log(report: LossReport) -> None:
        history.append(report)
        log_rows.append((len(log_rows) + 1, report.loc, report.conf, report.act, report.total))

    if overfit_one_window:
        batch = _first_positive_window(cfg, videos, window_len, network)
        for _ in range(overfit_steps):
            log(train_step(network, batch, optimizer))
        save_checkpoint(network, optimizer, out_model, epoch=0, step=len(history))
    else:
        index = [
            (vi, off)
            for vi, video in enumerate(videos)
            for off in window_offsets(video.num_frames, cfg.window_stride)
        ]
        total_epochs = cfg.epochs if epochs is None else epochs
        for epoch in range(start_epoch, total_epochs):
            optimizer.learning_rate = cfg.learning_rate_at(epoch)
            order = derived_rng(cfg.seed, KEY_SHUFFLE, epoch).permutation(len(index))
            for chunk_start in range(0, len(order), cfg.batch_size):
                chunk = order[chunk_start : chunk_start + cfg.batch_size]
                batch = []
                for flat in chunk:
                    vi, off = index[flat]
                    window = _training_window(cfg, videos[vi], off, window_len, epoch, vi, True)
                    match = network.match(window.annotations)
                    batch.append((window.frames, match))
                report = train_step(network, batch, optimizer)
                global_step += 1
                log(report)
            save_checkpoint(network, optimizer, out_model, epoch=epoch, step=global_step)
            if progress is not None:
                tail = [r.total for r in history[-20:]]
                progress(f"epoch {epoch + 1}/{total_epochs}: mean total loss {np.mean(tail):.4f}")
        if start_epoch >= total_epochs and resume is None:
            # zero-epoch run still produces a model file (the initialization)
            save_checkpoint(network, optimizer, out_model, epoch=-1, step=0)

    save_model(network, out_model)
    if log_csv is not None:
        with open(log_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loc", "conf", "act", "total"])
            writer.writerows(log_rows)
    return network, history


def _first_positive_window(cfg, videos, window_len, network):
    for vi, video in enumerate(videos):
        for off in window_offsets(video.num_frames, cfg.window_stride):
            window = _training_window(cfg, video, off, window_len, 0, vi, False)
            match = network.match(window.annotations)
            if match.num_positives > 0:
                return [(window.frames, match)]
    raise InputError("no window with a positive span match; cannot overfit")


def detect_video(
    cfg: RunConfig, network: Network, video: VideoRecord, video_index: int,
    noise_amplitude: float,
) -> list[Detection]:
    window_len = network.config.input_shape[0]
    per_window: list[list[Detection]] = []
    for off in window_offsets(video.num_frames, cfg.window_stride):
        rng = derived_rng(cfg.seed, KEY_PAD, video_index, off)
        frames = extract_frames(video.frames, off, window_len, noise_amplitude, rng)
        placement = WindowPlacement(off / video.fps, window_len / video.fps, video.fps)
        preds = network.forward(frames)
        window_dets = detect_window(preds, network.grid, cfg.score_threshold, cfg.nms_threshold)
        absolute = [to_absolute(d, placement) for d in window_dets]
        per_window.append([d for d in absolute if d is not None])
    return merge_windows(per_window, cfg.nms_threshold)


def run_detection(
    cfg: RunConfig, model_path: str | Path, data_dir: str | Path, out_json: str | Path
) -> list[tuple[str, list[Detection]]]:
    network = load_model(model_path)
    manifest, videos = load_dataset(data_dir)
    class_names = manifest["class_names"]
    if len(class_names) != network.config.num_classes:
        raise ConfigError(
            f"model predicts {network.config.num_classes} classes, dataset has {len(class_names)}"
        )
    expected = (*network.config.input_shape[1:], network.config.in_channels)
    for video in videos:
        if video.frames.shape[1:] != expected:
            raise ConfigError(
                f"video {video.video_id} frames {video.frames.shape[1:]} do not match "
                f"network input {expected}"
            )
    amp = manifest.get("spec", {}).get("noise_amplitude", 0.0)

    def work(item):
        vi, video = item
        return detect_video(cfg, network, video, vi, amp)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            detections = list(pool.map(work, enumerate(videos)))
    else:
        detections = [work(item) for item in enumerate(videos)]

    records = [(video.video_id, dets) for video, dets in zip(videos, detections)]
    save_detections(records, class_names, out_json)
    return records


def evaluation_inputs(detection_records: list[dict], annotation_records: list[dict]):
    dets = [
        (d["label"], rec["video_id"], d["start_sec"], d["end_sec"], d["score"])
        for rec in detection_records
        for d in rec.get("detections", [])
    ]
    gts = [
        (a["label"], rec["video_id"], a["start_sec"], a["end_sec"])
        for rec in annotation_records
        for a in rec.get("annotations", [])
    ]
    return dets, gts


def run_evaluation(detection_records, annotation_records, eval_cfg, vocabulary=None):
    """Returns (mAP by threshold, per-class AP rows (threshold, label, ap))."""
    dets, gts = evaluation_inputs(detection_records, annotation_records)
    maps = mean_ap(dets, gts, eval_cfg, vocabulary=vocabulary)
    rows = []
    classes = sorted({label for label, *_ in gts})
    for t in eval_cfg.iou_thresholds:
        for label in classes:
            cd = [(v, s, e, sc) for l, v, s, e, sc in dets if l == label]
            cg = [(v, (s, e)) for l, v, s, e in gts if l == label]
            rows.append((t, label, average_precision(cd, cg, t).ap))
    return maps, rows


def run_bench(cfg: RunConfig, model_path: str | Path | None = None, num_windows: int = 16) -> dict:
    if model_path is not None:
        network = load_model(model_path)
    else:
        network = Network(cfg.make_network_config(), rng=derived_rng(cfg.seed, KEY_BENCH))
    shape = (*network.config.input_shape, network.config.in_channels)
    rng = derived_rng(cfg.seed, KEY_BENCH, 1)
    frames = rng.uniform(0.0, 1.0, size=shape)
    for _ in range(3):  # warm-up passes excluded from timing
        network.forward_raw(frames, keep_cache=False)
    t0 = time.perf_counter()
    for _ in range(num_windows):
        network.forward_raw(frames, keep_cache=False)
    elapsed = time.perf_counter() - t0
    frames_per_window = network.config.input_shape[0]
    return {
        "num_windows": num_windows,
        "frames_per_window": frames_per_window,
        "elapsed_sec": elapsed,
        "fps": num_windows * frames_per_window / elapsed,
        "config_hash": cfg.config_hash(),
        "threads": cfg.threads,
    }
