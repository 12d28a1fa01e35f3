"""Per-class confusion matrices, precision/recall/specificity/F1, PR curves and thresholds."""

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import average_precision_score, multilabel_confusion_matrix, precision_recall_curve

from .constants import (
    CLASS_NAMES,
    DISPLAY_DECIMALS,
    METRIC_TOLERANCE,
    N_CLASSES,
    PR_CURVES_DIR,
    PUBLISHED_AVERAGE_PRECISION,
    PUBLISHED_CONFUSION,
    PUBLISHED_DOCTOR_METRICS,
    PUBLISHED_MODEL_METRICS,
    REPORT_FILE,
)
from .errors import InputError, ShapeError, UndefinedMetricError
from .logging_config import logger
from .utils import atomic_write_text

METRIC_NAMES = ("precision", "recall", "specificity", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise InputError(f"confusion count {name} must be a non-negative integer, got {value}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_published(cls, counts: Tuple[int, int, int, int]) -> "ConfusionMatrix":
        """Published counts are ordered (tp, fn, fp, tn)."""
        tp, fn, fp, tn = counts
        return cls(tp=tp, fp=fp, fn=fn, tn=tn)


class ClassMetrics(NamedTuple):
    precision: float
    recall: float
    specificity: float
    f1: float
    degenerate: Tuple[str, ...] = ()


def _ratio(numerator: int, denominator: int, name: str, degenerate: List[str]) -> float:
    if denominator == 0:
        degenerate.append(name)
        return 0.0
    return numerator / denominator


def metrics_from_confusion(cm: ConfusionMatrix) -> ClassMetrics:
    """0/0 ratios are reported as 0 and named in ``degenerate``."""
    degenerate = []
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", degenerate)
    recall = _ratio(cm.tp, cm.tp + cm.fn, "recall", degenerate)
    specificity = _ratio(cm.tn, cm.tn + cm.fp, "specificity", degenerate)
    if precision + recall == 0:
        degenerate.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ClassMetrics(precision, recall, specificity, f1, tuple(degenerate))


@dataclass
class PRCurve:
    """Cut-points in increasing threshold order; a score counts as positive when >= threshold."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def __len__(self) -> int:
        return len(self.thresholds)

    def f1(self) -> np.ndarray:
        denominator = self.precision + self.recall
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(denominator > 0, 2 * self.precision * self.recall / denominator, 0.0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"threshold": self.thresholds, "precision": self.precision, "recall": self.recall})


def _binary_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise InputError("labels must be 0/1")
    return labels.astype(np.int64)


def pr_curve(scores: Sequence[float], labels: Sequence[int]) -> Tuple[PRCurve, float]:
    """Sweep every distinct score; average precision is sum((R_k - R_{k-1}) * P_k)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary_labels(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} must be matching vectors")
    if labels.sum() == 0:
        raise UndefinedMetricError("average precision is undefined without positive labels")
    precision, recall, thresholds = precision_recall_curve(labels, scores)
    # drop the (precision=1, recall=0) end point, which has no threshold
    curve = PRCurve(thresholds, precision[:len(thresholds)], recall[:len(thresholds)])
    return curve, float(average_precision_score(labels, scores))


def select_threshold(curve: PRCurve) -> float:
    """Threshold with maximal F1; ties go to the higher threshold."""
    if len(curve) == 0:
        raise InputError("cannot select a threshold from an empty curve")
    f1 = curve.f1()
    best = np.flatnonzero(f1 == f1.max())
    return float(curve.thresholds[best[-1]])


def strict_threshold(threshold: float) -> float:
    """Operating threshold t' with (score > t') equivalent to (score >= threshold)."""
    return float(np.nextafter(threshold, -np.inf))


@dataclass
class ClassReport:
    confusion: ConfusionMatrix
    metrics: ClassMetrics
    threshold: float
    average_precision: Optional[float] = None
    curve: Optional[PRCurve] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "tp": self.confusion.tp,
            "fp": self.confusion.fp,
            "fn": self.confusion.fn,
            "tn": self.confusion.tn,
            "precision": self.metrics.precision,
            "recall": self.metrics.recall,
            "specificity": self.metrics.specificity,
            "f1": self.metrics.f1,
            "degenerate": list(self.metrics.degenerate),
            "average_precision": self.average_precision,
        }


@dataclass
class MetricsReport:
    n_exams: int
    classes: Dict[str, ClassReport]

    def to_dict(self) -> dict:
        return {"n_exams": self.n_exams, "classes": {name: self.classes[name].to_dict() for name in CLASS_NAMES}}

    def to_frame(self) -> pd.DataFrame:
        rows = [{"class": name, **self.classes[name].to_dict()} for name in CLASS_NAMES]
        return pd.DataFrame(rows).set_index("class")


def _check_matrix(name: str, array: np.ndarray) -> np.ndarray:
    if array.ndim != 2 or array.shape[1] != N_CLASSES:
        raise ShapeError(f"{name} must be [N, {N_CLASSES}], got {array.shape}")
    return array


def evaluate(probabilities, labels, thresholds: Sequence[float]) -> MetricsReport:
    """Predict a class when its probability is strictly above its threshold."""
    probabilities = _check_matrix("probabilities", np.asarray(probabilities, dtype=np.float64))
    labels = _check_matrix("labels", _binary_labels(labels))
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if probabilities.shape != labels.shape:
        raise ShapeError(f"probabilities {probabilities.shape} and labels {labels.shape} differ")
    if thresholds.shape != (N_CLASSES,):
        raise ShapeError(f"expected {N_CLASSES} thresholds, got {thresholds.shape}")

    predictions = (probabilities > thresholds[None, :]).astype(np.int64)
    matrices = multilabel_confusion_matrix(labels, predictions)
    classes = {}
    for i, name in enumerate(CLASS_NAMES):
        (tn, fp), (fn, tp) = matrices[i]
        confusion = ConfusionMatrix(tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn))
        metrics = metrics_from_confusion(confusion)
        if metrics.degenerate:
            logger.warning(f"{name}: degenerate metrics {', '.join(metrics.degenerate)}")
        curve, ap = None, None
        if labels[:, i].any():
            curve, ap = pr_curve(probabilities[:, i], labels[:, i])
        else:
            logger.warning(f"{name}: no positive exams, average precision undefined")
        classes[name] = ClassReport(confusion, metrics, float(thresholds[i]), ap, curve)
    return MetricsReport(len(labels), classes)


def select_thresholds(probabilities, labels) -> List[float]:
    """Max-F1 operating thresholds per class, usable with the strict comparison of evaluate."""
    probabilities = _check_matrix("probabilities", np.asarray(probabilities, dtype=np.float64))
    labels = _check_matrix("labels", _binary_labels(labels))
    thresholds = []
    for i, name in enumerate(CLASS_NAMES):
        if not labels[:, i].any():
            logger.warning(f"{name}: no positives for threshold selection, using 0.5")
            thresholds.append(0.5)
            continue
        curve, _ = pr_curve(probabilities[:, i], labels[:, i])
        thresholds.append(strict_threshold(select_threshold(curve)))
    return thresholds


def write_report(report: MetricsReport, out_dir: str) -> str:
    """report.json plus one PR-curve CSV per class."""
    path = os.path.join(out_dir, REPORT_FILE)
    atomic_write_text(path, json.dumps(report.to_dict(), indent=2) + "\n")
    curve_dir = os.path.join(out_dir, PR_CURVES_DIR)
    os.makedirs(curve_dir, exist_ok=True)
    for name, class_report in report.classes.items():
        if class_report.curve is not None:
            atomic_write_text(os.path.join(curve_dir, f"{name}.csv"), class_report.curve.to_frame().to_csv(index=False))
    logger.info(f"Wrote metrics report to {path}")
    return path


def published_report() -> pd.DataFrame:
    """Model metrics recomputed from the published confusion matrices, next to the published values."""
    rows = []
    for name in CLASS_NAMES:
        metrics = metrics_from_confusion(ConfusionMatrix.from_published(PUBLISHED_CONFUSION[name]))
        published = dict(zip(METRIC_NAMES, PUBLISHED_MODEL_METRICS[name]))
        for metric in METRIC_NAMES:
            computed = getattr(metrics, metric)
            rows.append({
                "class": name,
                "metric": metric,
                "computed": computed,
                "published": published[metric],
                "abs_error": abs(round(computed, DISPLAY_DECIMALS) - published[metric]),
            })
    frame = pd.DataFrame(rows)
    frame["ok"] = frame["abs_error"] <= METRIC_TOLERANCE + 1e-12
    return frame


def format_report_table(report: MetricsReport, reference: bool = True) -> str:
    """Metrics rounded for display, optionally beside the published model and resident F1."""
    frame = report.to_frame()[["precision", "recall", "specificity", "f1", "average_precision", "threshold"]]
    if reference:
        frame["published_f1"] = [PUBLISHED_MODEL_METRICS[name][3] for name in CLASS_NAMES]
        frame["resident_f1"] = [PUBLISHED_DOCTOR_METRICS[name][3] for name in CLASS_NAMES]
        frame["published_ap"] = [PUBLISHED_AVERAGE_PRECISION[name] for name in CLASS_NAMES]
    return frame.astype(float).round(DISPLAY_DECIMALS).to_string()
