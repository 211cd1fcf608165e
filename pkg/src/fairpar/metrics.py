"""Utility and group-fairness metrics on predicted labels (class 1 is the positive class).

Rates are formed from integer counts with a single final division, so each
value is the correctly rounded float of the exact rational.
"""

from fractions import Fraction

import numpy as np


def _rate_gap(pos0: int, n0: int, pos1: int, n1: int) -> float:
    return float(Fraction(abs(pos0 * n1 - pos1 * n0), n0 * n1))


def metric_dp(preds, sensitive) -> float:
    """Demographic parity gap ``|P(pred=1 | s=0) - P(pred=1 | s=1)|``."""
    preds = np.asarray(preds)
    sensitive = np.asarray(sensitive)
    g0, g1 = sensitive == 0, sensitive == 1
    n0, n1 = int(g0.sum()), int(g1.sum())
    if n0 == 0 or n1 == 0:
        raise ValueError("demographic parity needs both sensitive groups")
    return _rate_gap(int(np.sum(preds[g0] == 1)), n0, int(np.sum(preds[g1] == 1)), n1)


def metric_eo(preds, labels, sensitive) -> float:
    """Equal-opportunity gap: difference in true-positive rate between groups."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    sensitive = np.asarray(sensitive)
    g0 = (sensitive == 0) & (labels == 1)
    g1 = (sensitive == 1) & (labels == 1)
    n0, n1 = int(g0.sum()), int(g1.sum())
    if n0 == 0 or n1 == 0:
        raise ValueError("equal opportunity needs a y=1 node in each sensitive group")
    return _rate_gap(int(np.sum(preds[g0] == 1)), n0, int(np.sum(preds[g1] == 1)), n1)


def metric_acc_f1(preds, labels, num_classes=None) -> tuple[float, float]:
    """Accuracy and macro-F1 (a class with precision + recall = 0 scores F1 = 0).

    Classes range over ``0..num_classes-1`` when given, else over every label
    seen in ``preds`` or ``labels``.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.size == 0 or preds.shape != labels.shape:
        raise ValueError("need equally sized, non-empty prediction and label arrays")
    acc = float(Fraction(int(np.sum(preds == labels)), preds.size))
    classes = np.arange(num_classes) if num_classes is not None else np.union1d(preds, labels)
    total = Fraction(0)
    for c in classes:
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        denom = 2 * tp + fp + fn
        if denom:
            total += Fraction(2 * tp, denom)
    return acc, float(total / len(classes))
