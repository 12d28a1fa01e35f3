"""Tests for the evaluation toolkit."""

import json

import numpy as np
import pytest

from src.back.constants import CLASS_NAMES, PUBLISHED_CONFUSION, PUBLISHED_MODEL_METRICS, PUBLISHED_TEST_SIZE
from src.back.errors import InputError, ShapeError, UndefinedMetricError
from src.back.evalkit import (
    METRIC_NAMES,
    ConfusionMatrix,
    evaluate,
    format_report_table,
    metrics_from_confusion,
    pr_curve,
    published_report,
    select_threshold,
    select_thresholds,
    strict_threshold,
    write_report,
)


def _published_predictions():
    """Probabilities and labels whose per-class outcomes match the published confusion counts."""
    probs = np.zeros((PUBLISHED_TEST_SIZE, len(CLASS_NAMES)))
    labels = np.zeros_like(probs, dtype=np.int64)
    for i, name in enumerate(CLASS_NAMES):
        tp, fn, fp, tn = PUBLISHED_CONFUSION[name]
        labels[:, i] = [1] * tp + [1] * fn + [0] * fp + [0] * tn
        probs[:, i] = [0.9] * tp + [0.1] * fn + [0.9] * fp + [0.1] * tn
    return probs, labels


class TestMetricsFromConfusion:
    def test_rbbb(self):
        metrics = metrics_from_confusion(ConfusionMatrix(tp=36, fp=5, fn=0, tn=912))
        assert [round(v, 3) for v in metrics[:4]] == [0.878, 1.000, 0.995, 0.935]

    def test_first_degree_av_block(self):
        metrics = metrics_from_confusion(ConfusionMatrix.from_published((24, 9, 2, 918)))
        assert [round(v, 3) for v in metrics[:4]] == [0.923, 0.727, 0.998, 0.813]

    @pytest.mark.parametrize("name", CLASS_NAMES)
    def test_every_published_value(self, name):
        metrics = metrics_from_confusion(ConfusionMatrix.from_published(PUBLISHED_CONFUSION[name]))
        for computed, published in zip(metrics[:4], PUBLISHED_MODEL_METRICS[name]):
            assert abs(round(computed, 3) - published) <= 0.001 + 1e-12

    def test_no_predicted_positives(self):
        metrics = metrics_from_confusion(ConfusionMatrix(tp=0, fp=0, fn=3, tn=10))
        assert metrics.precision == 0.0
        assert "precision" in metrics.degenerate
        assert metrics.f1 == 0.0

    def test_rational_identities(self):
        cm = ConfusionMatrix(tp=17, fp=4, fn=6, tn=200)
        metrics = metrics_from_confusion(cm)
        assert metrics.precision * (cm.tp + cm.fp) == pytest.approx(cm.tp)
        assert metrics.recall * (cm.tp + cm.fn) == pytest.approx(cm.tp)
        p, r = metrics.precision, metrics.recall
        assert metrics.f1 == pytest.approx(2 * p * r / (p + r), abs=1e-9)

    def test_negative_count(self):
        with pytest.raises(InputError):
            ConfusionMatrix(tp=-1, fp=0, fn=0, tn=0)


class TestPrCurve:
    def test_separable_scores(self):
        _, ap = pr_curve([0.1, 0.2, 0.3, 0.8, 0.9], [0, 0, 0, 1, 1])
        assert ap == pytest.approx(1.0)

    def test_constant_scores_give_prevalence(self):
        labels = [1, 0, 0, 0, 1, 0, 0, 0, 0, 0]
        _, ap = pr_curve([0.5] * 10, labels)
        assert ap == pytest.approx(0.2)

    def test_recall_non_increasing(self, rng):
        curve, _ = pr_curve(rng.random(200), rng.random(200) < 0.3)
        assert np.all(np.diff(curve.thresholds) > 0)
        assert np.all(np.diff(curve.recall) <= 0)
        assert np.all((curve.precision >= 0) & (curve.precision <= 1))

    def test_monotone_transform_keeps_ap(self, rng):
        scores = rng.random(100)
        labels = rng.random(100) < 0.4
        _, ap = pr_curve(scores, labels)
        _, ap_cubed = pr_curve(scores ** 3, labels)
        assert ap == pytest.approx(ap_cubed)

    def test_no_positives(self):
        with pytest.raises(UndefinedMetricError):
            pr_curve([0.1, 0.2], [0, 0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            pr_curve([0.1, 0.2, 0.3], [0, 1])


class TestSelectThreshold:
    def test_peak_at_point_seven(self):
        curve, _ = pr_curve([0.9, 0.8, 0.7, 0.6, 0.5, 0.4], [1, 0, 1, 0, 0, 0])
        assert select_threshold(curve) == pytest.approx(0.7)

    def test_separable_gives_perfect_f1(self):
        scores = np.array([0.1, 0.35, 0.4, 0.6, 0.65, 0.9])
        labels = np.array([0, 0, 0, 1, 1, 1])
        threshold = select_threshold(pr_curve(scores, labels)[0])
        predictions = scores >= threshold
        assert np.array_equal(predictions, labels.astype(bool))

    def test_matches_exhaustive_sweep(self, rng):
        scores = np.round(rng.random(80), 2)
        labels = (rng.random(80) < 0.35).astype(int)

        def f1_at(t):
            pred = scores >= t
            tp = np.sum(pred & (labels == 1))
            return 2 * tp / (pred.sum() + labels.sum())

        best = max(f1_at(t) for t in np.unique(scores))
        assert f1_at(select_threshold(pr_curve(scores, labels)[0])) == pytest.approx(best)

    def test_strict_threshold_equivalence(self):
        scores = np.array([0.3, 0.7, 0.7000000001, 0.9])
        t = strict_threshold(0.7)
        np.testing.assert_array_equal(scores > t, scores >= 0.7)


class TestEvaluate:
    def test_identity_probabilities(self):
        labels = np.array([[1, 0, 1, 0, 1, 0], [0, 1, 0, 1, 0, 1], [1, 1, 0, 0, 1, 1]])
        report = evaluate(labels.astype(float), labels, [0.5] * 6)
        for class_report in report.classes.values():
            assert class_report.metrics[:4] == (1.0, 1.0, 1.0, 1.0)
            assert class_report.average_precision == pytest.approx(1.0)

    def test_reproduces_published_metrics(self):
        probs, labels = _published_predictions()
        report = evaluate(probs, labels, [0.5] * 6)
        assert report.n_exams == PUBLISHED_TEST_SIZE
        for name in CLASS_NAMES:
            tp, fn, fp, tn = PUBLISHED_CONFUSION[name]
            assert report.classes[name].confusion == ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)
            for metric, published in zip(METRIC_NAMES, PUBLISHED_MODEL_METRICS[name]):
                assert abs(round(getattr(report.classes[name].metrics, metric), 3) - published) <= 0.001 + 1e-12

    def test_binarization_is_strict(self):
        labels = np.ones((2, 6), dtype=int)
        report = evaluate(np.full((2, 6), 0.5), labels, [0.5] * 6)
        assert report.classes["AF"].confusion.tp == 0

    def test_confusion_sums_to_exam_count(self, rng):
        probs = rng.random((40, 6))
        labels = (rng.random((40, 6)) < 0.3).astype(int)
        report = evaluate(probs, labels, [0.4] * 6)
        assert all(r.confusion.total == 40 for r in report.classes.values())

    def test_permutation_invariance(self, rng):
        probs = rng.random((50, 6))
        labels = (rng.random((50, 6)) < 0.3).astype(int)
        labels[0] = 1
        order = rng.permutation(50)
        a = evaluate(probs, labels, [0.5] * 6).to_dict()
        b = evaluate(probs[order], labels[order], [0.5] * 6).to_dict()
        for name in CLASS_NAMES:
            for key, value in a["classes"][name].items():
                other = b["classes"][name][key]
                if isinstance(value, float):
                    assert other == pytest.approx(value), (name, key)
                else:
                    assert other == value, (name, key)

    def test_class_without_positives(self, rng):
        labels = np.zeros((10, 6), dtype=int)
        labels[:3, 0] = 1
        report = evaluate(rng.random((10, 6)), labels, [0.5] * 6)
        assert report.classes["ST"].average_precision is None
        assert report.classes["1dAVb"].average_precision is not None

    def test_wrong_class_count(self):
        with pytest.raises(ShapeError):
            evaluate(np.zeros((3, 5)), np.zeros((3, 5), dtype=int), [0.5] * 5)


class TestSelectThresholds:
    def test_selected_thresholds_reproduce_best_f1(self):
        probs = np.tile(np.array([[0.9], [0.8], [0.7], [0.6], [0.5], [0.4]]), (1, 6))
        labels = np.tile(np.array([[1], [0], [1], [0], [0], [0]]), (1, 6))
        chosen = select_thresholds(probs, labels)
        report = evaluate(probs, labels, chosen)
        for class_report in report.classes.values():
            assert class_report.metrics.f1 == pytest.approx(0.8)

    def test_no_positive_falls_back(self):
        probs = np.full((4, 6), 0.3)
        labels = np.zeros((4, 6), dtype=int)
        assert select_thresholds(probs, labels) == [0.5] * 6


class TestReports:
    def test_published_report_all_ok(self):
        frame = published_report()
        assert len(frame) == 24
        assert frame["ok"].all()

    def test_write_report(self, tmp_path):
        probs, labels = _published_predictions()
        report = evaluate(probs, labels, [0.5] * 6)
        path = write_report(report, str(tmp_path))
        data = json.loads(open(path).read())
        assert data["classes"]["RBBB"]["tp"] == 36
        assert (tmp_path / "pr_curves" / "LBBB.csv").read_text().startswith("threshold,precision,recall")

    def test_format_table(self):
        probs, labels = _published_predictions()
        table = format_report_table(evaluate(probs, labels, [0.5] * 6))
        assert "published_f1" in table
        assert "0.935" in table
