"""Confusion-matrix metrics and trapezoidal ROC AUC.

Decision rule: a sample is called positive when sigmoid(logit) >= threshold.
Rates with an empty denominator are reported as 0.0. AUC sweeps the unique
score values in descending order and integrates the ROC polyline with the
trapezoid rule, which equals Mann-Whitney pairwise concordance with ties
counted 1/2 (the selfcheck oracle recomputes it that way).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError


@dataclass
class MetricsReport:
    epoch: Optional[int] = None
    train_loss: Optional[float] = None
    val_loss: Optional[float] = None
    accuracy: float = 0.0
    auc: Optional[float] = None
    f1: float = 0.0
    sensitivity: float = 0.0
    specificity: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    epoch_seconds: Optional[float] = None

    def counts(self) -> tuple[int, int, int, int]:
        return self.tp, self.fp, self.tn, self.fn


def _rate(num: float, den: float) -> float:
    return float(num / den) if den > 0 else 0.0


def confusion_counts(scores: np.ndarray, labels: np.ndarray,
                     threshold: float = 0.5) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) with scores already in probability space."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores >= threshold
    pos = labels == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    return tp, fp, tn, fn


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Trapezoidal area under the ROC curve over unique score thresholds."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = int(np.count_nonzero(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC is undefined for a single-class label set")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = (labels[order] == 1).astype(np.float64)
    # indices where a run of tied scores ends
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.concatenate([boundary, [scores.size - 1]])
    tp = np.concatenate([[0.0], np.cumsum(sorted_pos)[ends]])
    fp = np.concatenate([[0.0], (ends + 1) - np.cumsum(sorted_pos)[ends]])
    tpr = tp / n_pos
    fpr = fp / n_neg
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def report_from_scores(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5,
                       val_loss: Optional[float] = None) -> MetricsReport:
    tp, fp, tn, fn = confusion_counts(scores, labels, threshold)
    sensitivity = _rate(tp, tp + fn)
    specificity = _rate(tn, tn + fp)
    precision = _rate(tp, tp + fp)
    recall = sensitivity
    f1 = _rate(2 * precision * recall, precision + recall)
    try:
        auc = roc_auc(scores, labels)
    except DataError:
        auc = None
    return MetricsReport(
        val_loss=val_loss,
        accuracy=_rate(tp + tn, tp + fp + tn + fn),
        auc=auc,
        f1=f1,
        sensitivity=sensitivity,
        specificity=specificity,
        precision=precision,
        recall=recall,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )
