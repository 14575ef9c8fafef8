"""Amortized posterior-predictive module: target/context cross-attention plus output heads.

Targets attend over labelled context embeddings. With one layer and one head
the attention output for target ``i`` is ``r_i = sum_j a_ij W_v [x_j || y_j]``
with ``a_i = softmax_j(<W_q x_i, W_k x_j> / sqrt(d_h))``; predictions are
made from ``[x_i || r_i]``.

Stacking and multiple heads follow one fixed reading:

* heads of a layer are concatenated and, when there is more than one head,
  passed through a linear output projection back to ``d_h * H`` columns;
* keys and values are always computed from the original context rows;
* from the second layer on, the previous layer output ``r`` is projected and
  added to each head's query, and ``r`` is also added residually to the
  layer's output.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .diffcore import Param, Tensor, ops
from .distributions import VARIANCE_FLOOR, Categorical, Gaussian
from .graphdata import Task
from .nn import Params, glorot, init_linear, init_mlp, linear, mlp


@dataclass(frozen=True)
class PPDConfig:
    attn_layers: int = 1
    attn_heads: int = 1
    head_dim: int = 32
    head_layers: int = 2
    head_hidden: int | None = None  # defaults to d_x

    def __post_init__(self):
        if min(self.attn_layers, self.attn_heads, self.head_dim, self.head_layers) < 1:
            raise ValueError("attention layers/heads, head_dim and head_layers must be >= 1")

    @property
    def attn_width(self) -> int:
        return self.head_dim * self.attn_heads


@dataclass
class ContextSet:
    """Context embeddings and their label vectors (one-hot rows or a scalar column)."""

    embeddings: Tensor
    labels: Tensor

    def __post_init__(self):
        if self.embeddings.shape[0] < 1:
            raise ValueError("context set is empty")
        if self.embeddings.shape[0] != self.labels.shape[0]:
            raise ValueError("context embeddings and labels differ in row count")

    def __len__(self) -> int:
        return self.embeddings.shape[0]


def label_matrix(labels: np.ndarray, task: Task) -> np.ndarray:
    """One-hot rows for classification, a single column for regression."""
    if task.is_classification:
        return np.eye(task.num_classes)[np.asarray(labels, dtype=np.int64)]
    return np.asarray(labels, dtype=np.float64).reshape(-1, 1)


def init_ppd_params(config: PPDConfig, d_x: int, task: Task, rng: np.random.Generator) -> Params:
    d_h, n_heads, d_y = config.head_dim, config.attn_heads, task.label_dim
    width = config.attn_width
    params: Params = {}
    for layer in range(config.attn_layers):
        for h in range(n_heads):
            pre = f"attn.l{layer}.h{h}"
            params[f"{pre}.Wq"] = Param(glorot(rng, d_x, d_h, (d_h, d_x)), f"{pre}.Wq")
            params[f"{pre}.Wk"] = Param(glorot(rng, d_x, d_h, (d_h, d_x)), f"{pre}.Wk")
            params[f"{pre}.Wv"] = Param(glorot(rng, d_x + d_y, d_h, (d_h, d_x + d_y)), f"{pre}.Wv")
            if layer > 0:
                params[f"{pre}.Wr"] = Param(glorot(rng, width, d_h, (d_h, width)), f"{pre}.Wr")
        if n_heads > 1:
            init_linear(params, f"attn.l{layer}.out", width, width, rng)
    hidden = config.head_hidden or d_x
    widths = [d_x + width] + [hidden] * (config.head_layers - 1)
    if task.is_classification:
        init_mlp(params, "head.cls", widths + [d_y], rng, zero_last=True)
    else:
        init_mlp(params, "head.mean", widths + [1], rng, zero_last=True)
        init_mlp(params, "head.var", widths + [1], rng, zero_last=True)
    return params


def cross_attention(
    targets: Tensor,
    context: ContextSet,
    params: Params,
    layer_count: int,
    head_count: int,
    weights_out: list | None = None,
) -> Tensor:
    """Attention read-out for every target row, shape ``[|T|, d_h * H]``.

    If ``weights_out`` is a list, each head's attention matrix (numpy,
    ``[|T|, |C|]``) is appended to it in layer-major order.
    """
    d_x = params["attn.l0.h0.Wq"].shape[1]
    if targets.shape[1] != d_x or context.embeddings.shape[1] != d_x:
        raise ValueError(f"embedding width mismatch: expected {d_x}")
    d_y = params["attn.l0.h0.Wv"].shape[1] - d_x
    if context.labels.shape[1] != d_y:
        raise ValueError(f"context labels have width {context.labels.shape[1]}, expected {d_y}")
    ctx_x = context.embeddings
    ctx_xy = ops.concat_cols([ctx_x, context.labels])
    r_prev = None
    for layer in range(layer_count):
        heads = []
        for h in range(head_count):
            pre = f"attn.l{layer}.h{h}"
            d_h = params[f"{pre}.Wq"].shape[0]
            q = ops.matmul(targets, ops.transpose(params[f"{pre}.Wq"]))
            if r_prev is not None:
                q = ops.add(q, ops.matmul(r_prev, ops.transpose(params[f"{pre}.Wr"])))
            k = ops.matmul(ctx_x, ops.transpose(params[f"{pre}.Wk"]))
            v = ops.matmul(ctx_xy, ops.transpose(params[f"{pre}.Wv"]))
            alpha = ops.softmax_rows(ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / sqrt(d_h)))
            if weights_out is not None:
                weights_out.append(alpha.data)
            heads.append(ops.matmul(alpha, v))
        out = heads[0] if head_count == 1 else linear(ops.concat_cols(heads), params, f"attn.l{layer}.out")
        r_prev = out if r_prev is None else ops.add(out, r_prev)
    return r_prev


def ppd_outputs(
    targets: Tensor, context: ContextSet, params: Params, config: PPDConfig, task: Task
) -> tuple[Tensor, ...]:
    """Raw head outputs: ``(logits,)`` or ``(mean, variance)`` column tensors."""
    r = cross_attention(targets, context, params, config.attn_layers, config.attn_heads)
    x_tilde = ops.concat_cols([targets, r])
    if task.is_classification:
        return (mlp(x_tilde, params, "head.cls", config.head_layers),)
    mean = mlp(x_tilde, params, "head.mean", config.head_layers)
    var = ops.add_const(ops.softplus(mlp(x_tilde, params, "head.var", config.head_layers)), VARIANCE_FLOOR)
    return mean, var


def ppd_classify(targets: Tensor, context: ContextSet, params: Params, config: PPDConfig) -> list[Categorical]:
    d_y = params[f"head.cls.{config.head_layers - 1}.W"].shape[1]
    (logits,) = ppd_outputs(targets, context, params, config, Task.classification(d_y))
    probs = ops.softmax_rows(logits).data
    return [Categorical(row) for row in probs]


def ppd_regress(targets: Tensor, context: ContextSet, params: Params, config: PPDConfig) -> list[Gaussian]:
    mean, var = ppd_outputs(targets, context, params, config, Task.regression())
    return [Gaussian(m, v) for m, v in zip(mean.data[:, 0], var.data[:, 0])]
