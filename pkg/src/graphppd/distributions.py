"""Predictive distributions returned by every predictor, and their mixtures."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

# numerical guards shared by heads, losses and metrics
VARIANCE_FLOOR = 1e-6
PROB_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class Categorical:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if p.size < 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"invalid categorical probabilities {p}")
        object.__setattr__(self, "probs", p)

    @property
    def num_classes(self) -> int:
        return self.probs.size

    def entropy(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())


@dataclass(frozen=True)
class Gaussian:
    mean: float
    variance: float

    def __post_init__(self):
        if not np.isfinite(self.mean) or not self.variance >= VARIANCE_FLOOR * (1 - 1e-9):
            raise ValueError(f"invalid gaussian (mean={self.mean}, variance={self.variance})")
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "variance", float(self.variance))


PredictiveDistribution = Union[Categorical, Gaussian]


def mixture(dists: Sequence[PredictiveDistribution]) -> PredictiveDistribution:
    """Equal-weight mixture: mean probabilities, or moment-matched Gaussian.

    For Gaussians the mixture variance is ``mean(var + mu^2) - mixture_mean^2``.
    """
    if not dists:
        raise ValueError("cannot mix an empty list of distributions")
    if all(isinstance(d, Categorical) for d in dists):
        if len(dists) == 1:
            return dists[0]
        return Categorical(np.mean([d.probs for d in dists], axis=0))
    if all(isinstance(d, Gaussian) for d in dists):
        if len(dists) == 1:
            return dists[0]
        mu = np.array([d.mean for d in dists])
        var = np.array([d.variance for d in dists])
        m = mu.mean()
        v = (var + mu * mu).mean() - m * m
        return Gaussian(m, max(v, VARIANCE_FLOOR))
    raise TypeError("cannot mix categorical and gaussian distributions")
