"""Selective prediction: the most uncertain test instances are referred to an oracle."""
from __future__ import annotations

from math import ceil
from typing import Sequence

import numpy as np

from ..distributions import Categorical, PredictiveDistribution
from .inference import uncertainty
from .metrics import _probs, roc_auc

# 0, 0.05, ..., 0.5 plus the all-reviewed endpoint
DEFAULT_FRACTIONS = tuple(round(0.05 * i, 2) for i in range(11)) + (1.0,)


def review_order(predictions: Sequence[PredictiveDistribution]) -> np.ndarray:
    """Instance indices from most to least uncertain; ties go to the lower index first."""
    u = np.array([uncertainty(d) for d in predictions])
    return np.lexsort((np.arange(len(u)), -u))


def n_reviewed(fraction: float, n: int) -> int:
    # guard against 0.3 * 10 = 3.0000000000000004
    return min(n, int(ceil(fraction * n - 1e-9)))


def selective_curve(
    predictions: Sequence[PredictiveDistribution],
    labels: Sequence,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    metric: str | None = None,
) -> list[tuple[float, float]]:
    """Collaborative metric after the oracle corrects the ``ceil(f * N)`` most uncertain instances.

    ``metric`` is ``"accuracy"`` (default for categoricals), ``"roc_auc"``, or
    ``"mae"`` (default for gaussians, ranked by predictive variance).
    """
    labels = np.asarray(labels)
    n = len(predictions)
    classification = isinstance(predictions[0], Categorical)
    metric = metric or ("accuracy" if classification else "mae")
    order = review_order(predictions)
    if metric == "accuracy":
        base = (_probs(predictions).argmax(axis=1) == labels).astype(np.float64)
    elif metric == "roc_auc":
        base = _probs(predictions)[:, 1].copy()
    elif metric == "mae":
        base = np.array([d.mean for d in predictions], dtype=np.float64)
    else:
        raise ValueError(f"unknown selective metric {metric!r}")

    curve = []
    for f in sorted(fractions):
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"review fraction {f} outside [0, 1]")
        vals = base.copy()
        fixed = order[: n_reviewed(f, n)]
        if metric == "accuracy":
            vals[fixed] = 1.0
            value = float(vals.mean())
        elif metric == "roc_auc":
            vals[fixed] = (labels[fixed] == 1).astype(np.float64)
            value = roc_auc(vals, labels)
        else:
            vals[fixed] = labels[fixed]
            value = float(np.mean(np.abs(vals - labels)))
        curve.append((float(f), value))
    return curve
