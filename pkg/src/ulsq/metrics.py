"""Confusion-matrix scores, ROC sweep and trapezoidal AUC.

Class 0 is parasitized and counts as the positive class throughout; class 1
is uninfected. Confusion matrices are indexed counts[true][predicted].
Zero-denominator precision/recall/F1 report 0.0 and set a degenerate flag
instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

CLASS_NAMES = ("parasitized", "uninfected")
POSITIVE_CLASS = 0
NUM_CLASSES = 2


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (2, 2) int64, rows true class, columns predicted

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise UsageError(f"confusion matrix must be 2x2, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise UsageError("confusion matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self, cls: int) -> int:
        return int(self.counts[cls].sum())


def confusion_matrix(pairs) -> ConfusionMatrix:
    """Tally (true, predicted) label pairs into a 2x2 matrix."""
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for true, pred in pairs:
        if not (0 <= true < NUM_CLASSES and 0 <= pred < NUM_CLASSES):
            raise UsageError(f"labels must be 0 or 1, got ({true}, {pred})")
        counts[true, pred] += 1
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise UsageError("empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


@dataclass
class ClassMetrics:
    label: int
    name: str
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: bool = False


def per_class_prf(cm: ConfusionMatrix) -> list[ClassMetrics]:
    """Precision, recall and F1 of each class in turn treated as positive."""
    out = []
    for i in range(NUM_CLASSES):
        tp = int(cm.counts[i, i])
        fp = int(cm.counts[1 - i, i])
        fn = int(cm.counts[i, 1 - i])
        degenerate = False
        if tp + fp == 0:
            precision, degenerate = 0.0, True
        else:
            precision = tp / (tp + fp)
        if tp + fn == 0:
            recall, degenerate = 0.0, True
        else:
            recall = tp / (tp + fn)
        if precision + recall == 0:
            f1, degenerate = 0.0, True
        else:
            f1 = 2 * precision * recall / (precision + recall)
        out.append(ClassMetrics(i, CLASS_NAMES[i], precision, recall, f1,
                                cm.support(i), degenerate))
    return out


def weighted_average(values, supports) -> float:
    """Support-weighted mean of per-class values."""
    values = np.asarray(values, dtype=np.float64)
    supports = np.asarray(supports, dtype=np.float64)
    if values.shape != supports.shape:
        raise UsageError("values and supports must align")
    total = supports.sum()
    if total <= 0:
        raise UsageError("total support must be positive")
    return float((values * supports).sum() / total)


@dataclass
class RocCurve:
    """(false positive rate, true positive rate) points, both non-decreasing."""

    points: list[tuple[float, float]] = field(default_factory=list)


def roc_points(scores, truths) -> RocCurve:
    """ROC sweep over thresholds at every distinct score, descending.

    A sample is predicted positive when its score is >= the threshold. Tied
    scores enter together, collapsing to a single point. The curve starts at
    (0, 0) and ends at (1, 1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths)
    if scores.shape != truths.shape or scores.ndim != 1:
        raise UsageError("scores and truths must be equal-length 1-D sequences")
    pos = truths == POSITIVE_CLASS
    n_pos = int(pos.sum())
    n_neg = int(len(truths) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UsageError("ROC needs at least one positive and one negative truth")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = pos[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    # last index of each tie group marks one threshold
    boundary = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    points = [(0.0, 0.0)]
    for b in boundary:
        points.append((float(fp[b] / n_neg), float(tp[b] / n_pos)))
    if points[-1] != (1.0, 1.0):
        points.append((1.0, 1.0))
    deduped = [pt for i, pt in enumerate(points) if i == 0 or pt != points[i - 1]]
    return RocCurve(deduped)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the ROC curve."""
    pts = curve.points
    if len(pts) < 2:
        raise UsageError("AUC needs at least two curve points")
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return float(area)


@dataclass
class MetricsReport:
    accuracy: float
    per_class: list[ClassMetrics]
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    auc: float | None
    confusion: ConfusionMatrix
    roc: RocCurve | None = None  # kept for CSV emission; not part of the JSON

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": [
                {
                    "class": c.name,
                    "precision": c.precision,
                    "recall": c.recall,
                    "f1": c.f1,
                    "support": c.support,
                }
                for c in self.per_class
            ],
            "weighted": {
                "precision": self.weighted_precision,
                "recall": self.weighted_recall,
                "f1": self.weighted_f1,
            },
            "auc": self.auc,
            "confusion": self.confusion.counts.tolist(),
        }


def report_from_confusion(cm: ConfusionMatrix, auc_value: float | None = None,
                          roc: RocCurve | None = None) -> MetricsReport:
    per_class = per_class_prf(cm)
    supports = [c.support for c in per_class]
    return MetricsReport(
        accuracy=accuracy(cm),
        per_class=per_class,
        weighted_precision=weighted_average([c.precision for c in per_class], supports),
        weighted_recall=weighted_average([c.recall for c in per_class], supports),
        weighted_f1=weighted_average([c.f1 for c in per_class], supports),
        auc=auc_value,
        confusion=cm,
        roc=roc,
    )


def report_from_results(results) -> MetricsReport:
    """Full report from evaluate() output: (true, predicted, score) triples."""
    results = list(results)
    if not results:
        raise UsageError("empty results")
    cm = confusion_matrix((t, p) for t, p, _ in results)
    truths = [t for t, _, _ in results]
    roc = None
    auc_value = None
    if len(set(truths)) == NUM_CLASSES:
        roc = roc_points([s for _, _, s in results], truths)
        auc_value = auc(roc)
    return report_from_confusion(cm, auc_value, roc)
