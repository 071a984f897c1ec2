import math

import numpy as np
import pytest

from s3d.loss import (
    BatchTargets,
    LossWeights,
    activity_confidence_loss,
    activity_confidence_loss_grad,
    class_confidence_loss,
    class_confidence_loss_grad,
    clamp_probs,
    hard_negative_mining,
    localization_loss,
    localization_loss_grad,
    make_batch_targets,
    smooth_l1,
    total_loss,
    total_loss_grads,
)
from s3d.spans import MatchResult

from oracles import (
    central_difference,
    loop_activity_loss,
    loop_class_loss,
    loop_localization_loss,
    max_relative_error,
)


def make_targets(classes, soft, offsets, mined):
    return BatchTargets(
        classes=np.asarray(classes, dtype=np.int64),
        soft_labels=np.asarray(soft, dtype=np.float64),
        target_offsets=np.asarray(offsets, dtype=np.float64),
        mined_negatives=np.asarray(mined, dtype=np.int64),
    )


def random_batch(rng, n=12, k=3, frac_pos=0.4):
    classes = np.where(rng.uniform(size=n) < frac_pos, rng.integers(1, k + 1, size=n), 0)
    soft = np.where(classes > 0, rng.uniform(0.55, 1.0, size=n), rng.uniform(0.0, 0.5, size=n))
    offsets = rng.normal(0, 0.4, size=(n, 2))
    negatives = np.nonzero(classes == 0)[0]
    n_pos = int(np.count_nonzero(classes > 0))
    mined = negatives[: max(min(n_pos, negatives.size), 1 if n_pos == 0 else 0)]
    targets = make_targets(classes, soft, offsets, mined)
    preds = {
        "offsets": offsets + rng.normal(0, 0.3, size=(n, 2)),
        "logits": rng.normal(0, 1.0, size=(n, k)),
        "act": rng.uniform(0.05, 0.95, size=n),
    }
    return targets, preds


class TestSmoothL1:
    @pytest.mark.parametrize("x,expected", [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5), (-2.0, 1.5), (-0.5, 0.125)])
    def test_values(self, x, expected):
        assert smooth_l1(x) == pytest.approx(expected, abs=1e-15)

    def test_continuity_at_kink(self):
        assert smooth_l1(1.0) == pytest.approx(0.5, abs=1e-12)
        assert smooth_l1(1.0 - 1e-9) == pytest.approx(0.5, abs=1e-8)

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for x in rng.normal(0, 3, size=100):
            assert smooth_l1(float(x)) >= 0.0


class TestLocalizationLoss:
    def test_zero_residual(self):
        t, _ = random_batch(np.random.default_rng(1))
        assert localization_loss(t.target_offsets.copy(), t) == 0.0

    def test_single_positive_hand_value(self):
        targets = make_targets([1], [1.0], [[0.0, 0.0]], [])
        pred = np.array([[0.5, 0.0]])
        assert localization_loss(pred, targets) == pytest.approx(0.125, abs=1e-15)

    def test_no_positives_is_zero(self):
        targets = make_targets([0, 0], [0.1, 0.2], np.zeros((2, 2)), [0])
        assert localization_loss(np.ones((2, 2)), targets) == 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            targets, preds = random_batch(rng)
            got = localization_loss(preds["offsets"], targets)
            want = loop_localization_loss(
                preds["offsets"], targets.target_offsets, list(targets.positive_indices)
            )
            assert got == pytest.approx(want, abs=1e-12)

    def test_invariant_to_negative_spans(self):
        rng = np.random.default_rng(3)
        targets, preds = random_batch(rng)
        base = localization_loss(preds["offsets"], targets)
        perturbed = preds["offsets"].copy()
        for i in range(len(targets.classes)):
            if targets.classes[i] == 0:
                perturbed[i] += 100.0
        assert localization_loss(perturbed, targets) == base

    def test_gradient_matches_finite_differences(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            targets, preds = random_batch(rng)
            x = preds["offsets"].copy()
            # stay away from the smooth-L1 kink
            resid = x - targets.target_offsets
            x[np.abs(np.abs(resid) - 1.0) < 1e-3] += 0.01
            analytic = localization_loss_grad(x, targets)
            numeric = central_difference(lambda v: localization_loss(v, targets), x.copy())
            assert max_relative_error(analytic, numeric) < 1e-6


class TestClassConfidenceLoss:
    def test_uniform_logits(self):
        targets = make_targets([1], [1.0], [[0, 0]], [])
        logits = np.zeros((1, 3))
        assert class_confidence_loss(logits, targets) == pytest.approx(math.log(3.0), abs=1e-12)

    def test_saturated_logit(self):
        targets = make_targets([1], [1.0], [[0, 0]], [])
        logits = np.array([[100.0, 0.0, 0.0]])
        assert class_confidence_loss(logits, targets) <= 1e-8

    def test_no_positives_is_zero(self):
        targets = make_targets([0, 0], [0.0, 0.0], np.zeros((2, 2)), [1])
        assert class_confidence_loss(np.ones((2, 3)), targets) == 0.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            targets, preds = random_batch(rng)
            got = class_confidence_loss(preds["logits"], targets)
            want = loop_class_loss(preds["logits"], targets.classes, list(targets.positive_indices))
            assert got == pytest.approx(want, abs=1e-10)

    def test_invariant_to_negative_spans(self):
        rng = np.random.default_rng(5)
        targets, preds = random_batch(rng)
        base = class_confidence_loss(preds["logits"], targets)
        perturbed = preds["logits"].copy()
        perturbed[targets.classes == 0] = 42.0
        assert class_confidence_loss(perturbed, targets) == base

    def test_gradient_matches_finite_differences(self):
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            targets, preds = random_batch(rng)
            x = preds["logits"].copy()
            analytic = class_confidence_loss_grad(x, targets)
            numeric = central_difference(lambda v: class_confidence_loss(v, targets), x.copy())
            assert max_relative_error(analytic, numeric) < 1e-6


class TestActivityConfidenceLoss:
    def test_saturated_correct(self):
        targets = make_targets([1], [1.0], [[0, 0]], [])
        act = np.array([1.0 - 1e-7])
        assert activity_confidence_loss(act, targets) <= 1e-6

    def test_symmetric_half(self):
        targets = make_targets([1], [0.5], [[0, 0]], [])
        act = np.array([0.5])
        assert activity_confidence_loss(act, targets) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            targets, preds = random_batch(rng)
            got = activity_confidence_loss(preds["act"], targets)
            selected = list(targets.positive_indices) + list(targets.mined_negatives)
            want = loop_activity_loss(preds["act"], targets.soft_labels, selected)
            assert got == pytest.approx(want, abs=1e-10)

    def test_depends_only_on_selected_spans(self):
        rng = np.random.default_rng(7)
        targets, preds = random_batch(rng)
        selected = set(targets.positive_indices) | set(targets.mined_negatives)
        unselected = [i for i in range(len(targets.classes)) if i not in selected]
        if not unselected:
            pytest.skip("every span selected in this draw")
        base = activity_confidence_loss(preds["act"], targets)
        perturbed = preds["act"].copy()
        perturbed[unselected] = 0.999
        assert activity_confidence_loss(perturbed, targets) == base

    def test_gradient_matches_finite_differences(self):
        for seed in range(10):
            rng = np.random.default_rng(200 + seed)
            targets, preds = random_batch(rng)
            x = preds["act"].copy()
            analytic = activity_confidence_loss_grad(x, targets)
            numeric = central_difference(lambda v: activity_confidence_loss(v, targets), x.copy())
            assert max_relative_error(analytic, numeric) < 1e-6


def match_result(classes, soft):
    classes = np.asarray(classes, dtype=np.int64)
    soft = np.asarray(soft, dtype=np.float64)
    n = len(classes)
    return MatchResult(
        gt_indices=np.where(classes > 0, 0, -1),
        classes=classes,
        soft_labels=soft,
        target_offsets=np.zeros((n, 2)),
    )


class TestHardNegativeMining:
    def test_picks_highest_loss_negatives(self):
        match = match_result([1, 1, 0, 0, 0], [0.8, 0.9, 0.0, 0.0, 0.0])
        act = np.array([0.9, 0.9, 0.9, 0.1, 0.5])
        mined = hard_negative_mining(act, match)
        assert set(mined) == {2, 4}

    def test_no_negatives_available(self):
        match = match_result([1, 2], [0.9, 0.9])
        assert hard_negative_mining(np.array([0.5, 0.5]), match).size == 0

    def test_no_positives_keeps_one(self):
        match = match_result([0, 0, 0], [0.0, 0.0, 0.0])
        act = np.array([0.2, 0.7, 0.4])
        mined = hard_negative_mining(act, match)
        assert list(mined) == [1]

    def test_cardinality(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(3, 30))
            classes = np.where(rng.uniform(size=n) < 0.3, 1, 0)
            match = match_result(classes, np.where(classes > 0, 0.9, 0.1))
            act = rng.uniform(0.01, 0.99, size=n)
            mined = hard_negative_mining(act, match)
            n_pos = int(np.count_nonzero(classes))
            n_neg = n - n_pos
            if n_pos > 0:
                assert mined.size == min(n_pos, n_neg)
            else:
                assert mined.size == min(1, n_neg)
            assert not set(mined) & set(np.nonzero(classes)[0])

    def test_ties_break_to_lowest_index(self):
        match = match_result([1, 0, 0, 0], [1.0, 0.0, 0.0, 0.0])
        act = np.array([0.9, 0.3, 0.3, 0.3])
        assert list(hard_negative_mining(act, match)) == [1]


class TestTotalLoss:
    def test_weighted_sum(self):
        # component values are exercised via direct construction
        targets = make_targets([1], [1.0], [[0.0, 0.0]], [])
        pred_off = np.array([[0.5, 0.0]])  # loc = 0.125
        logits = np.zeros((1, 3))  # conf = ln 3
        act = np.array([1.0 - 1e-7])  # act ~ 0
        report = total_loss(pred_off, logits, act, targets, LossWeights(1.0, 1.0))
        assert report.total == report.loc + report.conf + report.act
        assert report.loc == pytest.approx(0.125)
        assert report.conf == pytest.approx(math.log(3.0))

    def test_zero_weights(self):
        targets = make_targets([1], [1.0], [[0.0, 0.0]], [])
        report = total_loss(
            np.array([[0.5, 0.0]]), np.zeros((1, 3)), np.array([0.5]), targets, LossWeights(0.0, 0.0)
        )
        assert report.total == report.loc

    def test_perfect_predictions_near_zero(self):
        # positives where ground truth equals a span, negatives with zero IoU
        targets = make_targets(
            [1, 0, 0, 0], [1.0, 0.0, 0.0, 0.0], np.zeros((4, 2)), [1]
        )
        pred_off = np.zeros((4, 2))
        logits = np.zeros((4, 3))
        logits[0, 0] = 50.0
        act = clamp_probs(np.array([1.0, 0.0, 0.0, 0.0]))
        report = total_loss(pred_off, logits, act, targets, LossWeights(1.0, 1.0))
        assert report.total < 1e-5

    def test_all_components_nonnegative(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            targets, preds = random_batch(rng)
            report = total_loss(preds["offsets"], preds["logits"], preds["act"], targets, LossWeights())
            assert report.loc >= 0 and report.conf >= 0 and report.act >= 0

    def test_total_grads_match_components(self):
        rng = np.random.default_rng(10)
        targets, preds = random_batch(rng)
        w = LossWeights(0.7, 1.3)
        report, g_off, g_cls, g_act = total_loss_grads(
            preds["offsets"], preds["logits"], preds["act"], targets, w
        )
        np.testing.assert_allclose(g_off, localization_loss_grad(preds["offsets"], targets))
        np.testing.assert_allclose(g_cls, 0.7 * class_confidence_loss_grad(preds["logits"], targets))
        np.testing.assert_allclose(g_act, 1.3 * activity_confidence_loss_grad(preds["act"], targets))
        assert report.total == pytest.approx(report.loc + 0.7 * report.conf + 1.3 * report.act)


class TestBatchAssembly:
    def test_two_windows_flattened_with_offset_indices(self):
        m1 = match_result([1, 0, 0], [0.9, 0.1, 0.4])
        m2 = match_result([0, 2, 0], [0.2, 0.8, 0.0])
        a1 = np.array([0.9, 0.8, 0.1])
        a2 = np.array([0.6, 0.9, 0.2])
        targets = make_batch_targets([m1, m2], [a1, a2])
        assert targets.num_positives == 2
        # window 1 mines span 1 (highest act among negatives), window 2 mines span 0
        assert list(targets.mined_negatives) == [1, 3]
        assert list(targets.classes) == [1, 0, 0, 0, 2, 0]
