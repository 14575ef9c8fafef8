"""Target/context index sampling for training."""
from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np


def sample_context(pool: Sequence[int], exclude: Sequence[int], size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` indices drawn uniformly without replacement from ``pool`` minus ``exclude``."""
    candidates = np.setdiff1d(np.asarray(pool, dtype=np.int64), np.asarray(exclude, dtype=np.int64))
    if size < 1 or size > len(candidates):
        raise ValueError(f"context size {size} not in [1, {len(candidates)}]")
    return rng.choice(candidates, size=size, replace=False)


def iter_target_context(
    train_indices: Sequence[int], target_size: int, context_size: int, rng: np.random.Generator
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless stream of disjoint (targets, contexts).

    Targets sweep a fresh shuffle of the training pool in mini-batches each
    epoch (the final batch of an epoch may be short); contexts are drawn
    uniformly from the remaining training indices.
    """
    train = np.asarray(train_indices, dtype=np.int64)
    if target_size < 1 or target_size + context_size > len(train):
        raise ValueError(
            f"|T|={target_size} + |C|={context_size} exceeds training pool of {len(train)}"
        )
    while True:
        order = rng.permutation(train)
        for start in range(0, len(order), target_size):
            targets = order[start : start + target_size]
            yield targets, sample_context(train, targets, context_size, rng)


def sample_target_context(
    train_indices: Sequence[int], target_size: int, context_size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One (targets, contexts) draw: the first batch of a fresh epoch."""
    return next(iter_target_context(train_indices, target_size, context_size, rng))


def iter_minibatches(train_indices: Sequence[int], batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    train = np.asarray(train_indices, dtype=np.int64)
    while True:
        order = rng.permutation(train)
        for start in range(0, len(order), batch_size):
            yield order[start : start + batch_size]
