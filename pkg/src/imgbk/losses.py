"""Node-classification objectives, imbalance-aware variants and the gate loss.

Every loss takes the logits of the training rows only and returns a 1x1
tensor holding the mean over those rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .model import GateMode, LossKind, ModelConfig


@dataclass(frozen=True)
class ClassPriors:
    pi: np.ndarray
    source_counts: np.ndarray


def class_priors(labels, train_mask, n_classes=None) -> ClassPriors:
    """Empirical class frequencies over the training nodes."""
    labels = np.asarray(labels)
    train_mask = np.asarray(train_mask, dtype=bool)
    m = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    counts = np.bincount(labels[train_mask], minlength=m)
    if np.any(counts == 0):
        raise ConfigError(f"classes absent from training nodes: {np.flatnonzero(counts == 0).tolist()}")
    return ClassPriors(counts / counts.sum(), counts)


def _check_counts(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ConfigError("class counts must be strictly positive")
    return counts


def cross_entropy(logits: Tensor, labels) -> Tensor:
    return ad.nll(ad.log_softmax_rows(logits), labels)


def reweighted_cross_entropy(logits: Tensor, labels, counts) -> Tensor:
    """Cross-entropy weighted by ``(sum(counts) / m) / counts[y]``, weighted mean."""
    counts = _check_counts(counts)
    w_class = (counts.sum() / counts.shape[0]) / counts
    return ad.nll(ad.log_softmax_rows(logits), labels, w_class[np.asarray(labels)])


def logit_adjusted_loss(logits: Tensor, labels, priors: ClassPriors, tau: float = 1.0) -> Tensor:
    pi = np.asarray(priors.pi if isinstance(priors, ClassPriors) else priors, dtype=np.float64)
    if np.any(pi <= 0):
        raise ConfigError("logit adjustment needs strictly positive priors")
    offset = (tau * np.log(pi)).reshape(1, -1)
    return ad.nll(ad.log_softmax_rows(ad.add_row(logits, offset)), labels)


def balanced_softmax_loss(logits: Tensor, labels, counts) -> Tensor:
    counts = _check_counts(counts)
    offset = np.log(counts).reshape(1, -1)
    return ad.nll(ad.log_softmax_rows(ad.add_row(logits, offset)), labels)


def gate_targets(edge_src, edge_dst, labels, train_mask):
    """Slots joining two training nodes and their same-label indicator."""
    labels = np.asarray(labels)
    train_mask = np.asarray(train_mask, dtype=bool)
    slots = np.flatnonzero(train_mask[edge_src] & train_mask[edge_dst])
    target = (labels[edge_src[slots]] == labels[edge_dst[slots]]).astype(np.float64)
    return slots, target


def gate_consistency_loss(gate_logits: Tensor, edge_src, edge_dst, labels, train_mask) -> Tensor:
    """BCE between gates and label agreement, over directed train-train slots.

    Returns exactly 0 when no slot qualifies.
    """
    slots, target = gate_targets(edge_src, edge_dst, labels, train_mask)
    if slots.size == 0:
        return Tensor(np.zeros((1, 1)))
    return ad.bce_with_logits(ad.select_rows(gate_logits, slots), target)


def imbalance_loss(kind: LossKind, logits: Tensor, labels, counts, tau: float = 1.0) -> Tensor:
    kind = LossKind(kind)
    if kind is LossKind.CE:
        return cross_entropy(logits, labels)
    if kind is LossKind.CE_REWEIGHT:
        return reweighted_cross_entropy(logits, labels, counts)
    if kind is LossKind.LOGIT_ADJ:
        counts = _check_counts(counts)
        return logit_adjusted_loss(logits, labels, ClassPriors(counts / counts.sum(), counts), tau)
    return balanced_softmax_loss(logits, labels, counts)


def total_loss(config: ModelConfig, l_im: Tensor, gate_losses: Sequence[Tensor]) -> Tensor:
    """Imbalance loss plus ``lambda`` times the summed per-layer gate losses.

    Only the learned-gate mode carries gate losses.
    """
    if config.lam < 0:
        raise ConfigError("lambda must be non-negative")
    if config.gate_mode is not GateMode.LEARNED:
        if gate_losses:
            raise ConfigError(f"{config.gate_mode.value} mode has no gate loss")
        return l_im
    if not gate_losses or config.lam == 0:
        return l_im
    acc = gate_losses[0]
    for g in gate_losses[1:]:
        acc = ad.add(acc, g)
    return ad.add(l_im, ad.scale(acc, config.lam))
