"""Negative log-likelihood losses, on tensors (for training) and on distributions."""
from __future__ import annotations

import warnings
from math import log, pi
from typing import Sequence

import numpy as np

from ..diffcore import Tensor, ops
from ..distributions import PROB_CLAMP, Categorical, Gaussian, PredictiveDistribution
from ..graphdata import Task

HALF_LOG_2PI = 0.5 * log(2.0 * pi)


def loss_tensor(outputs: tuple[Tensor, ...], labels: np.ndarray, task: Task) -> Tensor:
    """Mean NLL of ``labels`` under head outputs ``(logits,)`` or ``(mean, variance)``."""
    if task.is_classification:
        (logits,) = outputs
        logp = ops.pick(ops.log_softmax_rows(logits), np.asarray(labels, dtype=np.int64))
        return ops.scale(ops.mean_all(logp), -1.0)
    mean, var = outputs
    y = Tensor(np.asarray(labels, dtype=np.float64).reshape(-1, 1))
    diff = ops.sub(y, mean)
    quad = ops.div(ops.mul(diff, diff), ops.scale(var, 2.0))
    terms = ops.add(ops.scale(ops.log(var), 0.5), quad)
    return ops.add_const(ops.mean_all(terms), HALF_LOG_2PI)


def nll_terms(predictions: Sequence[PredictiveDistribution], labels: Sequence) -> tuple[np.ndarray, int]:
    """Per-instance NLL and the number of categorical probabilities clamped at 1e-12."""
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    out = np.empty(len(predictions))
    clamped = 0
    for i, (d, y) in enumerate(zip(predictions, labels)):
        if isinstance(d, Categorical):
            p = d.probs[int(y)]
            if p < PROB_CLAMP:
                clamped += 1
                p = PROB_CLAMP
            out[i] = -np.log(p)
        elif isinstance(d, Gaussian):
            out[i] = HALF_LOG_2PI + 0.5 * np.log(d.variance) + (float(y) - d.mean) ** 2 / (2.0 * d.variance)
        else:
            raise TypeError(f"unsupported distribution {type(d).__name__}")
    return out, clamped


def nll_loss(predictions: Sequence[PredictiveDistribution], labels: Sequence) -> float:
    terms, clamped = nll_terms(predictions, labels)
    if clamped:
        warnings.warn(f"{clamped} true-class probabilities clamped at {PROB_CLAMP}", RuntimeWarning, stacklevel=2)
    return float(terms.mean())
