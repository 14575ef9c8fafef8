"""Differentiable operations on :class:`Tensor`.

Each op computes its forward value with numpy and registers a local backward
rule in :data:`VJP` under the op name. Only row-vector bias broadcasting is
supported (see :func:`add`); everything else requires matching shapes.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .tape import VJP, Tensor, emit


def _require_2d(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if a.ndim != 2:
            raise ValueError(f"{name} expects 2-D tensors, got shape {a.shape}")


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d("matmul", a.data, b.data)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data @ b.data
    return emit("matmul", (a, b), out)


def _matmul_vjp(g, ctx, a, b):
    need_a, need_b = ctx["needs"]
    return (g @ b.T if need_a else None, a.T @ g if need_b else None)


VJP["matmul"] = _matmul_vjp


def transpose(a: Tensor) -> Tensor:
    _require_2d("transpose", a.data)
    return emit("transpose", (a,), np.ascontiguousarray(a.data.T))


VJP["transpose"] = lambda g, ctx, a: (g.T,)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return emit("reshape", (a,), a.data.reshape(shape))


VJP["reshape"] = lambda g, ctx, a: (g.reshape(a.shape),)


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a ``(1, n)`` or ``(n,)`` row bias for an ``(m, n)`` ``a``."""
    if a.shape == b.shape:
        return emit("add", (a, b), a.data + b.data)
    if a.data.ndim == 2 and b.shape in ((a.shape[1],), (1, a.shape[1])):
        return emit("add_row", (a, b), a.data + b.data.reshape(1, -1))
    raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")


VJP["add"] = lambda g, ctx, a, b: (g, g)
VJP["add_row"] = lambda g, ctx, a, b: (g, g.sum(axis=0).reshape(b.shape))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} - {b.shape}")
    return emit("sub", (a, b), a.data - b.data)


VJP["sub"] = lambda g, ctx, a, b: (g, -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")
    return emit("mul", (a, b), a.data * b.data)


VJP["mul"] = lambda g, ctx, a, b: (g * b, g * a)


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"div shape mismatch: {a.shape} / {b.shape}")
    return emit("div", (a, b), a.data / b.data)


VJP["div"] = lambda g, ctx, a, b: (g / b, -g * a / (b * b))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python constant."""
    return emit("scale", (a,), a.data * c, {"c": float(c)})


VJP["scale"] = lambda g, ctx, a: (g * ctx["c"],)


def add_const(a: Tensor, c: float) -> Tensor:
    return emit("add_const", (a,), a.data + c)


VJP["add_const"] = lambda g, ctx, a: (g,)


def scalar_mul(a: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``a`` by the single value held in ``s``."""
    if s.size != 1:
        raise ValueError(f"scalar_mul needs a one-element scalar, got shape {s.shape}")
    return emit("scalar_mul", (a, s), a.data * s.data.reshape(()))


VJP["scalar_mul"] = lambda g, ctx, a, s: (
    g * s.reshape(()),
    np.asarray(np.sum(g * a)).reshape(s.shape),
)


_relu_masks: list | None = None


@contextmanager
def record_relu_masks():
    """Collect the activation mask of every relu evaluated inside the block."""
    global _relu_masks
    prev, _relu_masks = _relu_masks, []
    try:
        yield _relu_masks
    finally:
        _relu_masks = prev


def relu(a: Tensor) -> Tensor:
    if _relu_masks is not None:
        _relu_masks.append(a.data > 0.0)
    return emit("relu", (a,), np.maximum(a.data, 0.0))


# subgradient 0 at the origin
VJP["relu"] = lambda g, ctx, a: (g * (a > 0.0),)


def exp(a: Tensor) -> Tensor:
    # overflow surfaces as NonFiniteError from emit, not as a numpy warning
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return emit("exp", (a,), out)


VJP["exp"] = lambda g, ctx, a: (g * np.exp(a),)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise ValueError("log of a nonpositive value")
    return emit("log", (a,), np.log(a.data))


VJP["log"] = lambda g, ctx, a: (g / a,)


def softplus(a: Tensor) -> Tensor:
    return emit("softplus", (a,), np.logaddexp(0.0, a.data))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


VJP["softplus"] = lambda g, ctx, a: (g * _sigmoid(a),)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    _require_2d("concat_cols", *(p.data for p in parts))
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ValueError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    return emit("concat_cols", parts, np.concatenate([p.data for p in parts], axis=1), {"widths": widths})


def _concat_cols_vjp(g, ctx, *parts):
    bounds = np.cumsum([0] + ctx["widths"])
    return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))


VJP["concat_cols"] = _concat_cols_vjp


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero each entry with probability ``p``, scale survivors by ``1/(1-p)``.

    ``p == 0`` returns ``a`` unchanged without touching ``rng``.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout with p > 0 needs an rng")
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return emit("dropout", (a,), a.data * mask, {"mask": mask})


VJP["dropout"] = lambda g, ctx, a: (g * ctx["mask"],)


# -- indexing and reductions ------------------------------------------------

def _scatter_add(values: np.ndarray, ids: np.ndarray, num_segments: int) -> np.ndarray:
    """Row-wise scatter-add via a 0/1 CSR matrix; each output row sums its inputs in index order."""
    m = ids.shape[0]
    if m == 0:
        return np.zeros((num_segments,) + values.shape[1:], dtype=np.float64)
    sel = sp.csr_matrix((np.ones(m), (ids, np.arange(m))), shape=(num_segments, m))
    flat = values.reshape(m, -1)
    return np.asarray(sel @ flat).reshape((num_segments,) + values.shape[1:])


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    return emit("take_rows", (a,), a.data[index], {"index": index})


def _take_rows_vjp(g, ctx, a):
    return (_scatter_add(g, ctx["index"], a.shape[0]),)


VJP["take_rows"] = _take_rows_vjp


def segment_sum(values: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``values`` that share a segment id; empty segments give zero rows.

    Rows are accumulated in ascending input-index order.
    """
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != (values.shape[0],):
        raise ValueError(f"segment_ids length {ids.shape} does not match {values.shape[0]} rows")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise IndexError(f"segment id out of range for {num_segments} segments")
    out = _scatter_add(values.data, ids, num_segments)
    return emit("segment_sum", (values,), out, {"ids": ids})


VJP["segment_sum"] = lambda g, ctx, v: (g[ctx["ids"]],)


def pick(a: Tensor, cols: np.ndarray) -> Tensor:
    """Select ``a[i, cols[i]]`` for every row, returning a 1-D tensor."""
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(a.shape[0])
    return emit("pick", (a,), a.data[rows, cols], {"rows": rows, "cols": cols})


def _pick_vjp(g, ctx, a):
    out = np.zeros_like(a)
    out[ctx["rows"], ctx["cols"]] = g
    return (out,)


VJP["pick"] = _pick_vjp


def sum_all(a: Tensor) -> Tensor:
    return emit("sum_all", (a,), np.asarray(a.data.sum()))


VJP["sum_all"] = lambda g, ctx, a: (np.full_like(a, g.reshape(())),)


def mean_all(a: Tensor) -> Tensor:
    return emit("mean_all", (a,), np.asarray(a.data.mean()))


VJP["mean_all"] = lambda g, ctx, a: (np.full_like(a, g.reshape(()) / a.size),)


# -- softmax ----------------------------------------------------------------

def softmax_rows(a: Tensor) -> Tensor:
    _require_2d("softmax_rows", a.data)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    return emit("softmax_rows", (a,), e / e.sum(axis=1, keepdims=True))


def _softmax_vjp(g, ctx, a):
    z = a - a.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return (s * (g - (g * s).sum(axis=1, keepdims=True)),)


VJP["softmax_rows"] = _softmax_vjp


def log_softmax_rows(a: Tensor) -> Tensor:
    _require_2d("log_softmax_rows", a.data)
    z = a.data - a.data.max(axis=1, keepdims=True)
    return emit("log_softmax_rows", (a,), z - np.log(np.exp(z).sum(axis=1, keepdims=True)))


def _log_softmax_vjp(g, ctx, a):
    z = a - a.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return (g - s * g.sum(axis=1, keepdims=True),)


VJP["log_softmax_rows"] = _log_softmax_vjp


__all__ = [
    "add", "add_const", "concat_cols", "div", "dropout", "exp", "log", "log_softmax_rows",
    "matmul", "mean_all", "mul", "pick", "relu", "reshape", "scalar_mul", "scale",
    "segment_sum", "softmax_rows", "softplus", "sub", "sum_all", "take_rows", "transpose",
]
