"""Classification metric arithmetic: confusion matrix, per-class PRF, PR curve.

pin_out is the positive class everywhere: it is the safety-relevant rare
class, so its precision/recall drive the threshold analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .preproc import Label


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with pin_out positive: tp/fn count unsafe frames, tn/fp safe ones."""

    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion matrix counts must be non-negative")

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true, dtype=bool)
        p = np.asarray(y_pred, dtype=bool)
        if t.shape != p.shape:
            raise ValueError("label arrays must align")
        return cls(
            tp=int(np.sum(t & p)),
            fp=int(np.sum(~t & p)),
            tn=int(np.sum(~t & ~p)),
            fn=int(np.sum(t & ~p)),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass(frozen=True)
class PrfMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class ClassMetrics:
    accuracy: float
    pin_out: PrfMetrics
    pin_ok: PrfMetrics

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "pin_out": vars(self.pin_out),
            "pin_ok": vars(self.pin_ok),
        }


def _prf(tp: int, fp: int, fn: int) -> PrfMetrics:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PrfMetrics(precision=precision, recall=recall, f1=f1)


def class_metrics(cm: ConfusionMatrix) -> ClassMetrics:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    return ClassMetrics(
        accuracy=(cm.tp + cm.tn) / cm.total,
        pin_out=_prf(cm.tp, cm.fp, cm.fn),
        pin_ok=_prf(cm.tn, cm.fn, cm.fp),
    )


@dataclass(frozen=True)
class PrCurvePoint:
    threshold: float
    precision: float
    recall: float


def pr_curve(scores, labels) -> tuple[list[PrCurvePoint], float]:
    """Sweep every distinct score as a threshold (predict positive at >= t).

    Returns the curve and the step-interpolated average precision
    AP = sum (R_i - R_{i-1}) * P_i over thresholds in decreasing order.
    Requires both classes present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be aligned 1-D arrays")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("PR curve needs both classes present")

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tp_cum = np.cumsum(y_sorted)
    pred_cum = np.arange(1, len(y) + 1)
    # last index of each distinct score = inclusive threshold position
    is_last = np.append(s_sorted[1:] != s_sorted[:-1], True)
    idx = np.nonzero(is_last)[0]

    points = []
    ap = 0.0
    prev_recall = 0.0
    for i in idx:
        precision = tp_cum[i] / pred_cum[i]
        recall = tp_cum[i] / n_pos
        points.append(
            PrCurvePoint(threshold=float(s_sorted[i]), precision=float(precision),
                         recall=float(recall))
        )
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return points, float(ap)
