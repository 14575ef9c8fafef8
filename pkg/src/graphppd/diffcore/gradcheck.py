"""Finite-difference validation of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tape import Param, Tape, Tensor

MAX_REDRAWS = 20


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    n_coords: int = 0
    tol: float = 1e-4
    kinks_skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def worst(self, k: int = 5) -> list[tuple[str, float]]:
        return sorted(self.per_param.items(), key=lambda kv: -kv[1])[:k]


def _choose_coords(params: Sequence[Param], n_coords: int, rng: np.random.Generator):
    """At least one coordinate per tensor, the rest spread uniformly over all entries."""
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    if total <= n_coords:
        return [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    picks = {(i, int(rng.integers(p.size))) for i, p in enumerate(params)}
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    while len(picks) < max(n_coords, len(params)):
        flat = int(rng.integers(total))
        i = int(np.searchsorted(offsets, flat, side="right") - 1)
        picks.add((i, flat - int(offsets[i])))
    return sorted(picks)


def grad_check(
    closure: Callable[[], Tensor],
    params: Sequence[Param],
    h: float = 1e-5,
    tol: float = 1e-4,
    n_coords: int = 100,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``closure()`` against central differences.

    ``closure`` must be deterministic (dropout off, fixed data) and return a
    scalar tensor. Error per coordinate is ``|g - g_fd| / max(1, |g_fd|)``.
    A coordinate whose ``+h`` and ``-h`` evaluations change any relu activation
    pattern straddles a kink, where the difference quotient is meaningless; it
    is redrawn from the same tensor and counted in ``kinks_skipped``.
    """
    params = [p for p in params if p.trainable]
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = closure()
    tape.backward(out)
    analytic = [p.grad.copy() for p in params]

    def evaluate(p: Param, j: int, orig: float):
        flat = p.data.reshape(-1)
        results = []
        for x in (orig + h, orig - h):
            flat[j] = x
            with ops.record_relu_masks() as masks:
                results.append((closure().item(), masks))
        flat[j] = orig
        (f_plus, m_plus), (f_minus, m_minus) = results
        kink = len(m_plus) != len(m_minus) or any(not np.array_equal(a, b) for a, b in zip(m_plus, m_minus))
        return (f_plus - f_minus) / (2.0 * h), kink

    rng = np.random.default_rng(seed)
    coords = _choose_coords(params, n_coords, rng)
    per_param: dict[str, float] = {}
    worst = 0.0
    skipped = checked = 0
    for i, j in coords:
        p = params[i]
        for _ in range(MAX_REDRAWS):
            fd, kink = evaluate(p, j, p.data.reshape(-1)[j])
            if not kink:
                break
            skipped += 1
            j = int(rng.integers(p.size))
        else:
            continue
        checked += 1
        err = abs(analytic[i].reshape(-1)[j] - fd) / max(1.0, abs(fd))
        name = p.name or f"param{i}"
        per_param[name] = max(per_param.get(name, 0.0), err)
        worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return GradCheckReport(worst, per_param, checked, tol, skipped)
