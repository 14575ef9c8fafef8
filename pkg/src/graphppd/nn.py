"""Parameter initialisation and MLP building blocks shared by the models."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .diffcore import Param, Tensor, ops

Params = dict[str, Param]


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_linear(params: Params, prefix: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
    params[f"{prefix}.W"] = Param(glorot(rng, fan_in, fan_out), f"{prefix}.W")
    params[f"{prefix}.b"] = Param(np.zeros((1, fan_out)), f"{prefix}.b")


def linear(x: Tensor, params: Mapping[str, Param], prefix: str) -> Tensor:
    return ops.add(ops.matmul(x, params[f"{prefix}.W"]), params[f"{prefix}.b"])


def init_mlp(
    params: Params, prefix: str, widths: list[int], rng: np.random.Generator, zero_last: bool = False
) -> None:
    """Linear layers ``widths[0] -> widths[1] -> ... -> widths[-1]``.

    ``zero_last`` zeroes the final weight matrix (output heads start from a
    constant prediction).
    """
    for k, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        init_linear(params, f"{prefix}.{k}", a, b, rng)
    if zero_last:
        params[f"{prefix}.{len(widths) - 2}.W"].data[...] = 0.0


def mlp(x: Tensor, params: Mapping[str, Param], prefix: str, n_linear: int) -> Tensor:
    """Linear -> ReLU -> ... -> Linear (no activation after the last layer)."""
    for k in range(n_linear):
        x = linear(x, params, f"{prefix}.{k}")
        if k < n_linear - 1:
            x = ops.relu(x)
    return x


def count_params(params: Mapping[str, Param]) -> int:
    return int(sum(p.size for p in params.values()))
