"""Monte-Carlo predictive inference over randomly drawn context sets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..diffcore import Tensor
from ..distributions import Categorical, Gaussian, PredictiveDistribution, mixture
from ..graphdata import Dataset, Graph
from ..models import GraphPPDModel, embed_in_chunks
from ..ppdhead import ContextSet, label_matrix


@dataclass
class ContextPool:
    """Eval-mode embeddings and label rows of the labelled pool contexts are drawn from."""

    embeddings: np.ndarray
    label_rows: np.ndarray

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @classmethod
    def build(cls, model: GraphPPDModel, dataset: Dataset, indices: Sequence[int]) -> "ContextPool":
        indices = list(indices)
        if not indices:
            raise ValueError("context pool is empty")
        emb = embed_in_chunks(model.embed, dataset.subset(indices))
        return cls(emb, label_matrix(dataset.labels(indices), dataset.task))

    def context(self, rows: np.ndarray) -> ContextSet:
        return ContextSet(Tensor(self.embeddings[rows]), Tensor(self.label_rows[rows]))


def _draw(pool: ContextPool, context_size: int, rng: np.random.Generator) -> np.ndarray:
    if len(pool) == 0:
        raise ValueError("context pool is empty")
    if not 1 <= context_size <= len(pool):
        raise ValueError(f"context_size {context_size} not in [1, {len(pool)}]")
    return rng.choice(len(pool), size=context_size, replace=False)


def mc_predict_embedding(
    model: GraphPPDModel,
    embedding: np.ndarray,
    pool: ContextPool,
    P: int,
    context_size: int,
    rng: np.random.Generator,
) -> PredictiveDistribution:
    """Average the predictive distribution over ``P`` independently drawn context sets."""
    if P < 1:
        raise ValueError("P must be >= 1")
    target = Tensor(np.asarray(embedding, dtype=np.float64).reshape(1, -1))
    dists = [model.predict(target, pool.context(_draw(pool, context_size, rng)))[0] for _ in range(P)]
    return mixture(dists)


def mc_predict(
    model: GraphPPDModel,
    graph: Graph,
    pool: ContextPool,
    P: int,
    context_size: int,
    rng: np.random.Generator,
) -> PredictiveDistribution:
    return mc_predict_embedding(model, model.embed([graph]).data[0], pool, P, context_size, rng)


def mc_predict_many(
    model: GraphPPDModel,
    graphs: Sequence[Graph],
    pool: ContextPool,
    P: int,
    context_size: int,
    seed: int,
) -> list[PredictiveDistribution]:
    """``mc_predict`` for each graph with an rng stream derived from ``(seed, graph position)``."""
    emb = embed_in_chunks(model.embed, list(graphs))
    return [
        mc_predict_embedding(model, emb[i], pool, P, context_size, np.random.default_rng([seed, i]))
        for i in range(len(graphs))
    ]


def point_prediction(dist: PredictiveDistribution) -> int | float:
    """Argmax class (lowest index wins ties) or the Gaussian mean."""
    if isinstance(dist, Categorical):
        return int(np.argmax(dist.probs))
    if isinstance(dist, Gaussian):
        return dist.mean
    raise TypeError(f"unsupported distribution {type(dist).__name__}")


def uncertainty(dist: PredictiveDistribution) -> float:
    """Predictive entropy for categoricals, predictive variance for gaussians."""
    return dist.entropy() if isinstance(dist, Categorical) else dist.variance
