"""Point and probabilistic metrics for graph-level predictions."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from ..distributions import Categorical, Gaussian, PredictiveDistribution
from ..trainer.loss import nll_loss


def _probs(predictions: Sequence[PredictiveDistribution]) -> np.ndarray:
    if not all(isinstance(d, Categorical) for d in predictions):
        raise TypeError("metric needs categorical predictions")
    return np.stack([d.probs for d in predictions])


def accuracy(predictions: Sequence[PredictiveDistribution], labels: Sequence[int]) -> float:
    p = _probs(predictions)
    return float(np.mean(p.argmax(axis=1) == np.asarray(labels)))


def mae(predictions: Sequence[PredictiveDistribution], labels: Sequence[float]) -> float:
    if not all(isinstance(d, Gaussian) for d in predictions):
        raise TypeError("mae needs gaussian predictions")
    means = np.array([d.mean for d in predictions])
    return float(np.mean(np.abs(means - np.asarray(labels, dtype=np.float64))))


def nll(predictions: Sequence[PredictiveDistribution], labels: Sequence) -> float:
    return nll_loss(predictions, labels)


def brier(predictions: Sequence[PredictiveDistribution], labels: Sequence[int]) -> float:
    """Mean over instances of ``sum_c (p_c - [y == c])^2``."""
    p = _probs(predictions)
    onehot = np.eye(p.shape[1])[np.asarray(labels, dtype=np.int64)]
    return float(np.mean(np.sum((p - onehot) ** 2, axis=1)))


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: (concordant pairs + half the tied pairs) / (#pos * #neg)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: labels contain a single class")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ece(predictions: Sequence[PredictiveDistribution], labels: Sequence[int], bins: int = 10) -> float:
    """Expected calibration error with max-probability confidence and equal-width bins over (0, 1]."""
    p = _probs(predictions)
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == np.asarray(labels)).astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    which = np.clip(np.digitize(conf, edges[1:-1], right=True), 0, bins - 1)
    total = 0.0
    for b in range(bins):
        in_bin = which == b
        if in_bin.any():
            total += in_bin.mean() * abs(correct[in_bin].mean() - conf[in_bin].mean())
    return float(total)


def class1_scores(predictions: Sequence[PredictiveDistribution]) -> np.ndarray:
    p = _probs(predictions)
    if p.shape[1] != 2:
        raise ValueError("roc_auc needs binary predictions")
    return p[:, 1]
