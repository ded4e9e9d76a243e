"""Evaluation metrics for the crossing task: accuracy, precision and ROC-AUC."""

from __future__ import annotations

import numpy as np

from .exceptions import DataError, UndefinedMetricError
from .tensor import Tensor


def _array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def predict_labels(logits):
    """argmax over the two logits; ties go to class 0."""
    logits = _array(logits)
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


def accuracy(logits, labels):
    logits, labels = _array(logits), _array(labels)
    if len(labels) == 0:
        raise UndefinedMetricError("accuracy of an empty set is undefined")
    if len(logits) != len(labels):
        raise DataError(f"{len(logits)} predictions for {len(labels)} labels")
    return float(np.mean(predict_labels(logits) == labels))


def precision(logits, labels, positive_class=1):
    """TP / (TP + FP) for ``positive_class``."""
    logits, labels = _array(logits), _array(labels)
    pred = predict_labels(logits)
    predicted_pos = pred == positive_class
    if not predicted_pos.any():
        raise UndefinedMetricError("precision is undefined with zero predicted positives")
    tp = np.sum(predicted_pos & (labels == positive_class))
    return float(tp / predicted_pos.sum())


def _check_binary(scores, labels):
    scores = np.asarray(_array(scores), dtype=np.float64).reshape(-1)
    labels = np.asarray(_array(labels)).reshape(-1)
    if scores.shape != labels.shape:
        raise DataError(f"{scores.size} scores for {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs at least one positive and one negative")
    return scores, labels.astype(np.int64), n_pos, n_neg


def _roc_counts(scores, labels):
    # cumulative (fp, tp) at each distinct threshold, highest score first
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last_of_group = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = (last_of_group + 1) - tp
    return np.r_[0, fp], np.r_[0, tp], np.r_[np.inf, s[last_of_group]]


def roc_curve(scores, labels):
    """(fpr, tpr, thresholds) from a full threshold sweep, starting at (0, 0).

    A sample is called positive when its score is >= the threshold; the
    first threshold is +inf.
    """
    scores, labels, n_pos, n_neg = _check_binary(scores, labels)
    fp, tp, thresholds = _roc_counts(scores, labels)
    return fp / n_neg, tp / n_pos, thresholds


def roc_auc(scores, labels):
    """Trapezoidal area under the ROC curve.

    Accumulated in integer arithmetic, so the result is exactly the
    Mann-Whitney probability that a positive outranks a negative (ties 1/2).
    """
    scores, labels, n_pos, n_neg = _check_binary(scores, labels)
    fp, tp, _ = _roc_counts(scores, labels)
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return twice_area / (2 * n_pos * n_neg)


def trapezoid_area(x, y):
    """Trapezoid rule over an explicit polyline."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))
