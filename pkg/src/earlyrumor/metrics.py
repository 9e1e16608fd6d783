"""Classification metrics: accuracy, macro precision/recall/F1 and rank-based AUC."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError


def confusion_matrix(y_true, y_pred, n_classes):
    """Counts ``cm[t, p]`` of true class ``t`` predicted as ``p``."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def per_class_scores(cm):
    """Precision, recall and F1 per class; any 0/0 ratio counts as 0."""
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp

    def ratio(num, den):
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    f1 = ratio(2 * tp, 2 * tp + fp + fn)
    return precision, recall, f1


def binary_auc(scores, labels):
    """Mann-Whitney AUC of ``scores`` for positives (label 1) over negatives, ties at midrank."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def compute_auc(scores, labels):
    """Binary AUC for 1-D scores; macro one-vs-rest AUC for an (n x C) score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim == 1:
        return binary_auc(scores, labels == 1)
    if scores.shape[1] == 2:
        return binary_auc(scores[:, 1], labels == 1)
    return float(np.mean([binary_auc(scores[:, c], labels == c) for c in range(scores.shape[1])]))


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    auc: float
    macro_precision: float
    macro_recall: float
    per_class: list = field(default_factory=list)
    n_samples: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def metrics_report(y_true, probs, n_classes=None):
    """All five scores from true labels and predicted class probabilities (n x C).

    AUC is ``nan`` when the test labels hold a single class.
    """
    probs = np.asarray(probs, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.int64)
    C = n_classes or probs.shape[1]
    y_pred = probs.argmax(axis=1)
    cm = confusion_matrix(y_true, y_pred, C)
    p, r, f = per_class_scores(cm)
    try:
        auc = compute_auc(probs, y_true)
    except UndefinedMetricError:
        auc = float("nan")
    per_class = [{"class": c, "precision": float(p[c]), "recall": float(r[c]), "f1": float(f[c]),
                  "support": int(cm[c].sum())} for c in range(C)]
    return MetricsReport(
        accuracy=float(np.trace(cm) / max(cm.sum(), 1)),
        macro_f1=float(f.mean()),
        auc=auc,
        macro_precision=float(p.mean()),
        macro_recall=float(r.mean()),
        per_class=per_class,
        n_samples=int(y_true.size),
    )
