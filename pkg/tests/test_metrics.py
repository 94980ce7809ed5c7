import numpy as np
import pytest

from spikepin.metrics import ConfusionMatrix, class_metrics, pr_curve


class TestConfusionMatrix:
    def test_from_labels(self):
        y_true = np.array([1, 1, 0, 0, 1], dtype=bool)
        y_pred = np.array([1, 0, 0, 1, 1], dtype=bool)
        cm = ConfusionMatrix.from_labels(y_true, y_pred)
        assert (cm.tp, cm.fp, cm.tn, cm.fn) == (2, 1, 1, 1)
        assert cm.total == 5

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(tp=-1, fp=0, tn=0, fn=0)

    def test_perfect_classifier(self):
        y = np.array([1, 0, 1, 0], dtype=bool)
        cm = ConfusionMatrix.from_labels(y, y)
        m = class_metrics(cm)
        assert m.accuracy == 1.0
        assert cm.fp == 0 and cm.fn == 0


class TestReferenceMatrix:
    """641/675 safe and 194/225 unsafe frames correct on a 900-frame test set."""

    CM = ConfusionMatrix(tp=194, fp=34, tn=641, fn=31)

    def test_accuracy_exact(self):
        m = class_metrics(self.CM)
        assert m.accuracy == 835 / 900
        assert m.accuracy == pytest.approx(0.9278, abs=5e-5)

    def test_precision_recall_out_exact(self):
        m = class_metrics(self.CM)
        assert m.pin_out.precision == 194 / 228
        assert m.pin_out.recall == 194 / 225
        assert m.pin_out.precision == pytest.approx(0.8509, abs=5e-5)
        assert m.pin_out.recall == pytest.approx(0.8622, abs=5e-5)

    def test_f1(self):
        m = class_metrics(self.CM)
        p, r = 194 / 228, 194 / 225
        assert m.pin_out.f1 == pytest.approx(2 * p * r / (p + r))
        assert m.pin_out.f1 == pytest.approx(0.8565, abs=5e-5)

    def test_accuracy_within_published_band(self):
        m = class_metrics(self.CM)
        assert 0.923 - 0.008 <= m.accuracy <= 0.923 + 0.008

    def test_safe_class_metrics(self):
        m = class_metrics(self.CM)
        assert m.pin_ok.precision == 641 / 672
        assert m.pin_ok.recall == 641 / 675


class TestPrCurve:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([1, 1, 0, 0], dtype=bool)
        _, ap = pr_curve(scores, labels)
        assert ap == 1.0

    def test_three_point_sweep(self):
        # thresholds 0.9, 0.8, 0.7: AP = 1 * 0.5 + (2/3) * 0.5
        scores = np.array([0.9, 0.8, 0.7])
        labels = np.array([1, 0, 1], dtype=bool)
        points, ap = pr_curve(scores, labels)
        assert ap == pytest.approx(1 * 0.5 + (2 / 3) * 0.5)
        assert [round(p.recall, 6) for p in points] == [0.5, 0.5, 1.0]
        assert [round(p.precision, 6) for p in points] == [1.0, 0.5, round(2 / 3, 6)]

    def test_monotone_transform_invariance(self):
        # AP depends only on the ranking, so any strictly increasing
        # transform of the scores leaves it unchanged
        rng = np.random.default_rng(0)
        scores = rng.permutation(np.linspace(-1, 1, 40))
        labels = rng.random(40) < 0.4
        _, ap1 = pr_curve(scores, labels)
        _, ap2 = pr_curve(3.0 * scores + 7.0, labels)
        _, ap3 = pr_curve(np.tanh(scores), labels)
        assert ap1 == pytest.approx(ap2, rel=1e-12)
        assert ap1 == pytest.approx(ap3, rel=1e-12)

    def test_lowest_threshold_boundary(self):
        rng = np.random.default_rng(1)
        scores = rng.standard_normal(100)
        labels = rng.random(100) < 0.3
        points, _ = pr_curve(scores, labels)
        last = points[-1]
        assert last.recall == 1.0
        assert last.precision == pytest.approx(labels.mean())

    def test_recall_monotone_in_threshold(self):
        rng = np.random.default_rng(2)
        scores = rng.standard_normal(200)
        labels = rng.random(200) < 0.5
        points, _ = pr_curve(scores, labels)
        recalls = [p.recall for p in points]  # thresholds descending
        assert all(b >= a for a, b in zip(recalls, recalls[1:]))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            pr_curve(np.array([0.1, 0.2]), np.array([True, True]))
        with pytest.raises(ValueError):
            pr_curve(np.array([0.1, 0.2]), np.array([False, False]))
