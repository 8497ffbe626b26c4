"""Accuracy, macro-F1 and one-vs-rest macro ROC-AUC."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    macro_f1: float
    auc_ovr_macro: float
    confusion: np.ndarray
    per_class_f1: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "auc_ovr_macro": self.auc_ovr_macro,
            "per_class_f1": self.per_class_f1.tolist(),
            "confusion": self.confusion.tolist(),
        }


def _pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"prediction/truth length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("metrics need at least one sample")
    return pred, truth


def accuracy(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(pred == truth))


def confusion_matrix(pred, truth, m: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    pred, truth = _pair(pred, truth)
    return np.bincount(truth * m + pred, minlength=m * m).reshape(m, m)


def per_class_f1(pred, truth, m: int) -> np.ndarray:
    cm = confusion_matrix(pred, truth, m)
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    # F1 = 2tp / (2tp + fp + fn); 0/0 counts as 0
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)


def macro_f1(pred, truth, m: int) -> float:
    return float(per_class_f1(pred, truth, m).mean())


def binary_auc(scores, positive) -> float:
    """Mann-Whitney AUC with tie midranks."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positives and negatives")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc_ovr_macro(scores, truth) -> float:
    """Unweighted mean over classes of one-vs-rest AUC.

    Classes without positives or without negatives among ``truth`` are
    skipped with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.ndim != 2 or scores.shape[0] != truth.shape[0]:
        raise ValueError("scores must be n x m with one row per sample")
    if not np.allclose(scores.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("score rows must sum to 1")
    aucs, skipped = [], []
    for c in range(scores.shape[1]):
        pos = truth == c
        if pos.all() or not pos.any():
            skipped.append(c)
            continue
        aucs.append(binary_auc(scores[:, c], pos))
    if skipped:
        warnings.warn(
            f"AUC skipped classes lacking positives or negatives: {skipped}", RuntimeWarning, stacklevel=2
        )
    if not aucs:
        raise ValueError("no class has both positives and negatives")
    return float(np.mean(aucs))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def report(logits: np.ndarray, truth, m: int) -> MetricsReport:
    scores = softmax_rows(np.asarray(logits, dtype=np.float64))
    pred = scores.argmax(axis=1)
    truth = np.asarray(truth)
    return MetricsReport(
        accuracy=accuracy(pred, truth),
        macro_f1=macro_f1(pred, truth, m),
        auc_ovr_macro=auc_ovr_macro(scores, truth),
        confusion=confusion_matrix(pred, truth, m),
        per_class_f1=per_class_f1(pred, truth, m),
    )
