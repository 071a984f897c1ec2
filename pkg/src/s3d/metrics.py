"""Detection evaluation: per-class average precision over temporal IoU
thresholds and their mean across classes.

Matching is greedy in detection-score order: each detection claims its
best-IoU still-unmatched ground truth in the same video and counts as a
true positive iff that IoU reaches the threshold (the ground truth is
consumed only then). AP uses all-point interpolation: precision at recall
r is the maximum precision at any recall >= r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

DEFAULT_IOU_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS

    def __post_init__(self) -> None:
        ts = tuple(float(t) for t in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", ts)
        if not ts:
            raise InputError("iou_thresholds must be nonempty")
        if any(not (0.0 < t <= 1.0) for t in ts):
            raise InputError(f"iou_thresholds must lie in (0, 1], got {ts}")
        if any(a >= b for a, b in zip(ts, ts[1:])):
            raise InputError(f"iou_thresholds must be strictly increasing, got {ts}")


@dataclass(frozen=True)
class PRCurve:
    """PR staircase for one class at one threshold."""

    recalls: tuple[float, ...]
    precisions: tuple[float, ...]
    ap: float


def _interval_iou(s0: float, e0: float, s1: float, e1: float) -> float:
    inter = min(e0, e1) - max(s0, s1)
    if inter <= 0.0:
        return 0.0
    return inter / ((e0 - s0) + (e1 - s1) - inter)


def average_precision(
    detections: list[tuple[str, float, float, float]],
    ground_truths: list[tuple[str, tuple[float, float]]],
    iou_threshold: float,
) -> PRCurve:
    """AP for one class. Detections are (video_id, start_sec, end_sec,
    score); ground truths are (video_id, (start_sec, end_sec))."""
    if not ground_truths:
        if not detections:
            raise InputError("AP undefined with no detections and no ground truths")
        n = len(detections)
        return PRCurve((0.0,) * n, (0.0,) * n, 0.0)

    order = sorted(range(len(detections)), key=lambda i: (-detections[i][3], i))
    gt_by_video: dict[str, list[int]] = {}
    for j, (vid, _) in enumerate(ground_truths):
        gt_by_video.setdefault(vid, []).append(j)
    matched = [False] * len(ground_truths)

    tp_flags: list[bool] = []
    for i in order:
        vid, start, end, _ = detections[i]
        best_iou, best_j = 0.0, -1
        for j in gt_by_video.get(vid, ()):
            if matched[j]:
                continue
            gs, ge = ground_truths[j][1]
            iou = _interval_iou(start, end, gs, ge)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_threshold:
            matched[best_j] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)

    num_gt = len(ground_truths)
    recalls: list[float] = []
    precisions: list[float] = []
    tp = 0
    for rank, flag in enumerate(tp_flags, start=1):
        tp += int(flag)
        recalls.append(tp / num_gt)
        precisions.append(tp / rank)

    # all-point interpolation: running max of precision from the tail
    interp = list(precisions)
    for i in range(len(interp) - 2, -1, -1):
        interp[i] = max(interp[i], interp[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for r, p in zip(recalls, interp):
        ap += (r - prev_recall) * p
        prev_recall = r
    return PRCurve(tuple(recalls), tuple(precisions), ap)


def mean_ap(
    all_detections: list[tuple[str, str, float, float, float]],
    all_ground_truths: list[tuple[str, str, float, float]],
    cfg: EvalConfig = EvalConfig(),
    vocabulary: list[str] | None = None,
) -> dict[float, float]:
    """Mean AP per IoU threshold over every class with at least one ground
    truth. Detections are (label, video_id, start, end, score); ground
    truths are (label, video_id, start, end).

    ``vocabulary`` is the set of legal labels (defaults to the labels seen
    in the ground truth). Detections outside it are an input error, not
    silent false positives; vocabulary classes without ground truth are
    excluded from the mean rather than scored zero."""
    classes = sorted({label for label, *_ in all_ground_truths})
    known = set(classes) if vocabulary is None else set(vocabulary)
    for label, *_ in all_detections:
        if label not in known:
            raise InputError(f"detection label {label!r} absent from ground truth vocabulary")

    per_class_dets: dict[str, list] = {c: [] for c in classes}
    per_class_gts: dict[str, list] = {c: [] for c in classes}
    for label, vid, start, end, score in all_detections:
        if label in per_class_dets:  # classes without ground truth are not scored
            per_class_dets[label].append((vid, start, end, score))
    for label, vid, start, end in all_ground_truths:
        per_class_gts[label].append((vid, (start, end)))

    result: dict[float, float] = {}
    for t in cfg.iou_thresholds:
        aps = [average_precision(per_class_dets[c], per_class_gts[c], t).ap for c in classes]
        result[t] = float(np.mean(aps)) if aps else 0.0
    return result
