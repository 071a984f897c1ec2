"""Default-span geometry: multi-scale tiling, interval IoU, ground-truth
matching, and center/length offset encoding.

All spans live in window-normalized coordinates: the current window is the
interval [0, 1]. A span is stored as (center, length); (start, end) is
derived. Nothing in this module clips to [0, 1] — clipping belongs to the
I/O boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

MATCH_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class Span:
    """A temporal interval as (center, length) in window-normalized units."""

    center: float
    length: float

    def __post_init__(self) -> None:
        if not (self.length > 0.0):
            raise InputError(f"span length must be > 0, got {self.length}")

    @property
    def start(self) -> float:
        return self.center - self.length / 2.0

    @property
    def end(self) -> float:
        return self.center + self.length / 2.0

    @staticmethod
    def from_interval(start: float, end: float) -> "Span":
        if not (end > start):
            raise InputError(f"empty interval [{start}, {end}]")
        return Span((start + end) / 2.0, end - start)


@dataclass(frozen=True)
class SpanGridConfig:
    """Tiling parameters: one temporal length per feature layer plus the
    shared set of scale ratios."""

    layer_lengths: tuple[int, ...]
    ratios: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "layer_lengths", tuple(int(v) for v in self.layer_lengths))
        object.__setattr__(self, "ratios", tuple(float(v) for v in self.ratios))
        if not self.layer_lengths:
            raise ConfigError("layer_lengths must be nonempty")
        if any(v <= 0 for v in self.layer_lengths):
            raise ConfigError(f"layer_lengths must be positive, got {self.layer_lengths}")
        if any(a <= b for a, b in zip(self.layer_lengths, self.layer_lengths[1:])):
            raise ConfigError(f"layer_lengths must be strictly decreasing, got {self.layer_lengths}")
        if not self.ratios:
            raise ConfigError("ratios must be nonempty")
        if any(not (0.0 < r <= 1.0) for r in self.ratios):
            raise ConfigError(f"ratios must lie in (0, 1], got {self.ratios}")
        if any(a >= b for a, b in zip(self.ratios, self.ratios[1:])):
            raise ConfigError(f"ratios must be strictly increasing, got {self.ratios}")

    @property
    def num_spans(self) -> int:
        return len(self.ratios) * sum(self.layer_lengths)


@dataclass(frozen=True)
class DefaultSpanGrid:
    """The ordered tiling produced by :func:`tile_default_spans`.

    ``provenance[i]`` records (layer index, cell index, ratio index) for
    ``spans[i]``; ordering is (layer, cell, ratio).
    """

    config: SpanGridConfig
    spans: tuple[Span, ...]
    provenance: tuple[tuple[int, int, int], ...]
    # (N, 2) array of [center, length]; same data as `spans`, for vector math
    geometry: np.ndarray = field(repr=False, compare=False, default=None)

    def __len__(self) -> int:
        return len(self.spans)


def tile_default_spans(config: SpanGridConfig) -> DefaultSpanGrid:
    """Tile multi-scale default spans over every feature layer.

    Layer with temporal length ``L_f`` contributes, for each cell ``i`` and
    ratio ``r``, the span with center ``(i + 0.5) / L_f`` and length
    ``r / L_f``.
    """
    spans: list[Span] = []
    provenance: list[tuple[int, int, int]] = []
    for f, layer_len in enumerate(config.layer_lengths):
        for i in range(layer_len):
            center = (i + 0.5) / layer_len
            for ri, ratio in enumerate(config.ratios):
                spans.append(Span(center, ratio / layer_len))
                provenance.append((f, i, ri))
    geometry = np.array([[s.center, s.length] for s in spans], dtype=np.float64)
    return DefaultSpanGrid(config, tuple(spans), tuple(provenance), geometry)


def temporal_iou(a: Span, b: Span) -> float:
    """Intersection-over-union of two temporal intervals."""
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0.0:
        return 0.0
    union = a.length + b.length - inter
    return inter / union


def _pairwise_iou(centers: np.ndarray, lengths: np.ndarray, gt_spans: list[Span]) -> np.ndarray:
    """IoU matrix (num spans, num ground truths) via the interval form."""
    starts = centers - lengths / 2.0
    ends = centers + lengths / 2.0
    gs = np.array([g.start for g in gt_spans])
    ge = np.array([g.end for g in gt_spans])
    gl = np.array([g.length for g in gt_spans])
    inter = np.minimum(ends[:, None], ge[None, :]) - np.maximum(starts[:, None], gs[None, :])
    inter = np.maximum(inter, 0.0)
    union = lengths[:, None] + gl[None, :] - inter
    return inter / union


def encode_offsets(g: Span, d: Span) -> tuple[float, float]:
    """Offsets that move default span ``d`` onto ground truth ``g``:
    center shift in units of d's length, and natural-log length ratio."""
    dct = (g.center - d.center) / d.length
    dlt = math.log(g.length / d.length)
    return dct, dlt


def decode_offsets(offsets: tuple[float, float], d: Span) -> Span:
    """Inverse of :func:`encode_offsets`."""
    dct, dlt = offsets
    return Span(d.center + dct * d.length, d.length * math.exp(dlt))


@dataclass
class MatchResult:
    """Assignment of ground truths to default spans plus soft labels.

    ``gt_indices[i]`` is the matched ground-truth index or -1;
    ``classes[i]`` is the matched class in [1, K] or 0; ``soft_labels[i]``
    is the max IoU of span i over all ground truths (0 when there are
    none); ``target_offsets[i]`` holds the encoded regression target for
    positives and zeros elsewhere.
    """

    gt_indices: np.ndarray
    classes: np.ndarray
    soft_labels: np.ndarray
    target_offsets: np.ndarray

    @property
    def positive_indices(self) -> np.ndarray:
        return np.nonzero(self.gt_indices >= 0)[0]

    @property
    def negative_indices(self) -> np.ndarray:
        return np.nonzero(self.gt_indices < 0)[0]

    @property
    def num_positives(self) -> int:
        return int(np.count_nonzero(self.gt_indices >= 0))


def match_spans(
    grid: DefaultSpanGrid,
    ground_truths: list[tuple[Span, int]],
    num_classes: int | None = None,
) -> MatchResult:
    """Match each default span to its argmax-IoU ground truth.

    A span is positive iff its best IoU is strictly greater than 0.5; IoU
    ties between ground truths break to the lowest ground-truth index. A
    ground truth may match many spans; a span matches at most one ground
    truth. Soft labels are the per-span max IoU, positives or not.
    """
    n = len(grid.spans)
    gt_indices = np.full(n, -1, dtype=np.int64)
    classes = np.zeros(n, dtype=np.int64)
    soft_labels = np.zeros(n, dtype=np.float64)
    target_offsets = np.zeros((n, 2), dtype=np.float64)

    for _, k in ground_truths:
        if k < 1 or (num_classes is not None and k > num_classes):
            upper = num_classes if num_classes is not None else "K"
            raise InputError(f"ground-truth class {k} outside [1, {upper}]")

    if not ground_truths:
        return MatchResult(gt_indices, classes, soft_labels, target_offsets)

    gt_spans = [g for g, _ in ground_truths]
    iou = _pairwise_iou(grid.geometry[:, 0], grid.geometry[:, 1], gt_spans)
    best_j = np.argmax(iou, axis=1)  # first max wins: lowest gt index on ties
    best_iou = iou[np.arange(n), best_j]
    soft_labels = best_iou

    positive = best_iou > MATCH_IOU_THRESHOLD
    for i in np.nonzero(positive)[0]:
        j = int(best_j[i])
        gt_indices[i] = j
        classes[i] = ground_truths[j][1]
        target_offsets[i] = encode_offsets(gt_spans[j], grid.spans[i])

    return MatchResult(gt_indices, classes, soft_labels, target_offsets)
