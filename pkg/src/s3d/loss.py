"""Joint training objective: localization (smooth L1 on offsets), class
confidence (softmax cross-entropy over positives), and activity confidence
(sigmoid cross-entropy against soft IoU labels) with hard negative mining.

All operations take flat per-span arrays for one batch: predictions of
shape (N_spans, ...) alongside a :class:`BatchTargets` built from per-window
match results. Analytical gradients live next to each loss so the network
can train on the exact objective the reports describe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .spans import MatchResult

PROB_EPS = 1e-7  # probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before any log


@dataclass(frozen=True)
class LossWeights:
    """Weights for the confidence terms in the joint objective."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.alpha) and self.alpha >= 0.0):
            raise InputError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not (np.isfinite(self.beta) and self.beta >= 0.0):
            raise InputError(f"beta must be finite and >= 0, got {self.beta}")


@dataclass(frozen=True)
class LossReport:
    loc: float
    conf: float
    act: float
    total: float

    @staticmethod
    def combine(loc: float, conf: float, act: float, w: LossWeights) -> "LossReport":
        return LossReport(loc, conf, act, loc + w.alpha * conf + w.beta * act)


@dataclass
class BatchTargets:
    """Per-span targets for one batch, flattened across its windows.

    ``classes[i]`` is the matched class in [1, K] or 0 for negatives;
    ``soft_labels`` / ``target_offsets`` mirror the match results; the
    mined negative index set is disjoint from the positives.
    """

    classes: np.ndarray
    soft_labels: np.ndarray
    target_offsets: np.ndarray
    mined_negatives: np.ndarray
    positive_indices: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.positive_indices = np.nonzero(self.classes > 0)[0]
        if np.intersect1d(self.positive_indices, self.mined_negatives).size:
            raise InputError("mined negatives overlap positives")

    @property
    def num_positives(self) -> int:
        return int(self.positive_indices.size)

    @property
    def num_negatives(self) -> int:
        return int(self.mined_negatives.size)

    @property
    def num_total(self) -> int:
        return self.num_positives + self.num_negatives


def smooth_l1(x: float) -> float:
    """0.5 x^2 inside |x| < 1, |x| - 0.5 outside; C1 at the junction."""
    ax = abs(x)
    if ax < 1.0:
        return 0.5 * x * x
    return ax - 0.5


def _smooth_l1_vec(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def _smooth_l1_grad_vec(x: np.ndarray) -> np.ndarray:
    return np.clip(x, -1.0, 1.0)


def clamp_probs(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def localization_loss(predicted_offsets: np.ndarray, targets: BatchTargets) -> float:
    """Smooth-L1 distance between predicted and target offsets, summed over
    both offset components of every positive span and divided by the
    positive count. Zero when the batch has no positives."""
    pos = targets.positive_indices
    if pos.size == 0:
        return 0.0
    resid = predicted_offsets[pos] - targets.target_offsets[pos]
    return float(np.sum(_smooth_l1_vec(resid)) / pos.size)


def localization_loss_grad(predicted_offsets: np.ndarray, targets: BatchTargets) -> np.ndarray:
    grad = np.zeros_like(predicted_offsets)
    pos = targets.positive_indices
    if pos.size == 0:
        return grad
    resid = predicted_offsets[pos] - targets.target_offsets[pos]
    grad[pos] = _smooth_l1_grad_vec(resid) / pos.size
    return grad


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def class_confidence_loss(class_logits: np.ndarray, targets: BatchTargets) -> float:
    """Mean negative log softmax probability of the matched class, over
    positive spans only. Background is not a class here; negatives carry
    no class signal. Zero when the batch has no positives."""
    pos = targets.positive_indices
    if pos.size == 0:
        return 0.0
    logp = _log_softmax(class_logits[pos])
    picked = logp[np.arange(pos.size), targets.classes[pos] - 1]
    return float(-np.sum(picked) / pos.size)


def class_confidence_loss_grad(class_logits: np.ndarray, targets: BatchTargets) -> np.ndarray:
    grad = np.zeros_like(class_logits)
    pos = targets.positive_indices
    if pos.size == 0:
        return grad
    p = np.exp(_log_softmax(class_logits[pos]))
    p[np.arange(pos.size), targets.classes[pos] - 1] -= 1.0
    grad[pos] = p / pos.size
    return grad


def _act_elementwise_loss(act_scores: np.ndarray, soft_labels: np.ndarray) -> np.ndarray:
    c = clamp_probs(act_scores)
    return -(soft_labels * np.log(c) + (1.0 - soft_labels) * np.log1p(-c))


def activity_confidence_loss(act_scores: np.ndarray, targets: BatchTargets) -> float:
    """Binary cross-entropy between activity probabilities and soft IoU
    labels, averaged over positives plus mined negatives."""
    idx = np.concatenate([targets.positive_indices, targets.mined_negatives])
    if idx.size == 0:
        return 0.0
    per_span = _act_elementwise_loss(act_scores[idx], targets.soft_labels[idx])
    return float(np.sum(per_span) / idx.size)


def activity_confidence_loss_grad(act_scores: np.ndarray, targets: BatchTargets) -> np.ndarray:
    """Gradient w.r.t. the probabilities; zero where the clamp is active
    (the clamped value is constant there) and at unselected spans."""
    grad = np.zeros_like(act_scores)
    idx = np.concatenate([targets.positive_indices, targets.mined_negatives])
    if idx.size == 0:
        return grad
    c = act_scores[idx]
    inside = (c > PROB_EPS) & (c < 1.0 - PROB_EPS)
    s = targets.soft_labels[idx]
    g = np.where(inside, -s / clamp_probs(c) + (1.0 - s) / (1.0 - clamp_probs(c)), 0.0)
    grad[idx] = g / idx.size
    return grad


def hard_negative_mining(act_scores: np.ndarray, match: MatchResult) -> np.ndarray:
    """Pick the negatives with the largest activity-confidence loss.

    Keeps min(N_pos, #negatives) of them so the negative:positive ratio is
    1:1; with no positives a single negative is kept so the activity loss
    stays defined. Ties break to the lowest span index.
    """
    negatives = match.negative_indices
    if negatives.size == 0:
        return negatives.copy()
    n_pos = match.num_positives
    want = min(n_pos, negatives.size) if n_pos > 0 else 1
    losses = _act_elementwise_loss(act_scores[negatives], match.soft_labels[negatives])
    # sort by (-loss, index): stable argsort on -loss keeps index order on ties
    order = np.argsort(-losses, kind="stable")
    return np.sort(negatives[order[:want]])


def make_batch_targets(matches: list[MatchResult], act_scores: list[np.ndarray]) -> BatchTargets:
    """Flatten per-window match results into one batch, mining hard
    negatives per window with the given activity probabilities."""
    if len(matches) != len(act_scores):
        raise InputError("one activity-score vector per match result required")
    classes, soft, offs, mined = [], [], [], []
    base = 0
    for m, a in zip(matches, act_scores):
        if a.shape[0] != m.classes.shape[0]:
            raise InputError("activity scores and match result disagree on span count")
        classes.append(m.classes)
        soft.append(m.soft_labels)
        offs.append(m.target_offsets)
        mined.append(hard_negative_mining(a, m) + base)
        base += m.classes.shape[0]
    return BatchTargets(
        classes=np.concatenate(classes),
        soft_labels=np.concatenate(soft),
        target_offsets=np.concatenate(offs),
        mined_negatives=np.concatenate(mined).astype(np.int64),
    )


def total_loss(
    predicted_offsets: np.ndarray,
    class_logits: np.ndarray,
    act_scores: np.ndarray,
    targets: BatchTargets,
    w: LossWeights,
) -> LossReport:
    """Weighted sum of the three components: loc + alpha*conf + beta*act."""
    return LossReport.combine(
        localization_loss(predicted_offsets, targets),
        class_confidence_loss(class_logits, targets),
        activity_confidence_loss(act_scores, targets),
        w,
    )


def total_loss_grads(
    predicted_offsets: np.ndarray,
    class_logits: np.ndarray,
    act_scores: np.ndarray,
    targets: BatchTargets,
    w: LossWeights,
) -> tuple[LossReport, np.ndarray, np.ndarray, np.ndarray]:
    """Loss report plus gradients of the total w.r.t. each prediction array."""
    report = total_loss(predicted_offsets, class_logits, act_scores, targets, w)
    g_off = localization_loss_grad(predicted_offsets, targets)
    g_cls = w.alpha * class_confidence_loss_grad(class_logits, targets)
    g_act = w.beta * activity_confidence_loss_grad(act_scores, targets)
    return report, g_off, g_cls, g_act
