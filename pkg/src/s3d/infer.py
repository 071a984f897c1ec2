"""Single-pass prediction pipeline: activity-score filtering, offset
decoding, greedy temporal NMS, label assignment, and merging of per-window
detections into absolute-time records.

Within a window NMS is class-agnostic and labels are assigned afterwards;
the cross-window merge suppresses per class, since labels exist by then.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .net.network import PredictionVector
from .spans import DefaultSpanGrid, Span, decode_offsets, temporal_iou

DEFAULT_SCORE_THRESHOLD = 0.05
DEFAULT_NMS_THRESHOLD = 0.5


@dataclass(frozen=True)
class Detection:
    """Final output record in absolute seconds."""

    start_sec: float
    end_sec: float
    label: int
    score: float

    def __post_init__(self) -> None:
        if not (self.end_sec > self.start_sec):
            raise InputError(f"detection interval [{self.start_sec}, {self.end_sec}] is empty")
        if self.label < 1:
            raise InputError(f"detection label must be >= 1, got {self.label}")


@dataclass(frozen=True)
class WindowPlacement:
    """Where a window sits in its video."""

    window_start_sec: float
    window_duration_sec: float
    fps: float

    def __post_init__(self) -> None:
        if not (self.window_duration_sec > 0.0):
            raise InputError("window duration must be > 0")
        if not (self.fps > 0.0):
            raise InputError("fps must be > 0")


def temporal_nms(
    candidates: list[tuple[Span, float]], threshold: float
) -> list[tuple[Span, float]]:
    """Greedy suppression: repeatedly keep the highest-scoring remaining
    candidate and drop everything overlapping it with IoU > threshold.
    Score ties break to the lower original index."""
    return [candidates[i] for i in _nms_kept_indices(candidates, threshold)]


def detect_window(
    predictions: list[PredictionVector],
    grid: DefaultSpanGrid,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
    nms_threshold: float = DEFAULT_NMS_THRESHOLD,
) -> list[tuple[Span, int, float]]:
    """Window-local detection: filter by activity score, decode offsets
    against the default spans, class-agnostic NMS on the activity score,
    then label each survivor with its argmax class. The final score is
    activity probability times the softmax probability of that class;
    results come back sorted by it, descending."""
    if len(predictions) != len(grid.spans):
        raise InputError(f"{len(predictions)} predictions for {len(grid.spans)} default spans")
    candidates: list[tuple[Span, float]] = []
    survivors: list[PredictionVector] = []
    for pred, default in zip(predictions, grid.spans):
        if pred.act_score < score_threshold:
            continue
        candidates.append((decode_offsets(pred.offsets, default), pred.act_score))
        survivors.append(pred)

    results: list[tuple[Span, int, float]] = []
    for idx in _nms_kept_indices(candidates, nms_threshold):
        span, act = candidates[idx]
        logits = np.asarray(survivors[idx].class_scores, dtype=np.float64)
        shifted = np.exp(logits - logits.max())
        probs = shifted / shifted.sum()
        label = int(np.argmax(logits)) + 1
        results.append((span, label, float(act * probs[label - 1])))
    results.sort(key=lambda t: -t[2])
    return results


def _nms_kept_indices(candidates: list[tuple[Span, float]], threshold: float) -> list[int]:
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i][1], i))
    alive = [True] * len(candidates)
    kept: list[int] = []
    for i in order:
        if not alive[i]:
            continue
        kept.append(i)
        alive[i] = False
        for j in order:
            if alive[j] and temporal_iou(candidates[i][0], candidates[j][0]) > threshold:
                alive[j] = False
    return kept


def to_absolute(
    detection_in_window: tuple[Span, int, float], placement: WindowPlacement
) -> Detection | None:
    """Map a window-normalized detection to absolute seconds, clipping to
    the window's extent. Returns None when clipping empties the span."""
    span, label, score = detection_in_window
    w0 = placement.window_start_sec
    dur = placement.window_duration_sec
    start = w0 + span.start * dur
    end = w0 + span.end * dur
    start = max(start, w0)
    end = min(end, w0 + dur)
    if not (end > start):
        return None
    return Detection(start, end, label, score)


def merge_windows(
    per_window: list[list[Detection]], nms_threshold: float = DEFAULT_NMS_THRESHOLD
) -> list[Detection]:
    """Fuse detections from overlapping windows: concatenate, then greedy
    NMS per class label in absolute coordinates."""
    pooled: list[Detection] = [d for dets in per_window for d in dets]
    by_label: dict[int, list[Detection]] = {}
    for det in pooled:
        by_label.setdefault(det.label, []).append(det)
    merged: list[Detection] = []
    for label in sorted(by_label):
        dets = by_label[label]
        cands = [(Span.from_interval(d.start_sec, d.end_sec), d.score) for d in dets]
        for idx in _nms_kept_indices(cands, nms_threshold):
            merged.append(dets[idx])
    merged.sort(key=lambda d: -d.score)
    return merged


def save_detections(
    records: list[tuple[str, list[Detection]]],
    class_names: list[str],
    path: str | Path,
) -> None:
    """Write the detection JSON: one {video_id, detections} object per
    video, detections sorted by score descending."""
    payload = []
    for video_id, dets in records:
        payload.append(
            {
                "video_id": video_id,
                "detections": [
                    {
                        "label": class_names[d.label - 1],
                        "start_sec": d.start_sec,
                        "end_sec": d.end_sec,
                        "score": d.score,
                    }
                    for d in sorted(dets, key=lambda d: -d.score)
                ],
            }
        )
    Path(path).write_text(json.dumps(payload, indent=2))


def load_detections(path: str | Path) -> list[dict]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return data
