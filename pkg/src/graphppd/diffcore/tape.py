"""Tensors, parameters and the recording tape used for reverse-mode gradients."""
from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "graphppd_active_tape", default=None
)

# op name -> local backward rule: rule(grad_out, ctx, *input_arrays) -> tuple of input grads
VJP: dict[str, Callable[..., tuple]] = {}


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class Tensor:
    """Dense float64 array that may be recorded on a tape."""

    __slots__ = ("data", "_tape")

    def __init__(self, data: Any):
        self.data = np.asarray(data, dtype=np.float64)
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Param(Tensor):
    """A learnable leaf tensor with its own gradient accumulator."""

    __slots__ = ("grad", "trainable", "name")

    def __init__(self, data: Any, name: str = "", trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64))
        self.grad = np.zeros_like(self.data)
        self.trainable = trainable
        self.name = name

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape}, trainable={self.trainable})"


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: dict = field(default_factory=dict)


class Tape:
    """Ordered record of operations, replayed backwards to obtain gradients.

    Use as a context manager; operations evaluated inside the block whose
    operands depend on a trainable :class:`Param` are appended in execution
    order, so operands always precede the entries that consume them.
    A tape belongs to the thread (context) that activated it.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self._params: dict[int, Param] = {}
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def tracks(self, t: Tensor) -> bool:
        if isinstance(t, Param):
            return t.trainable
        return t._tape is self

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, ctx: dict) -> None:
        for t in inputs:
            if isinstance(t, Param) and t.trainable:
                self._params[id(t)] = t
        output._tape = self
        self.entries.append(TapeEntry(op, inputs, output, ctx))

    def backward(self, output: Tensor) -> None:
        """Accumulate d(output)/d(param) into ``param.grad`` for every recorded Param."""
        if output.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for entry in reversed(self.entries):
            g = grads.pop(id(entry.output), None)
            if g is None:
                continue
            in_grads = VJP[entry.op](g, entry.ctx, *(t.data for t in entry.inputs))
            for t, gi in zip(entry.inputs, in_grads):
                if gi is None or not self.tracks(t):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        for key, param in self._params.items():
            if key in grads:
                param.grad += grads[key]


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def emit(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, ctx: dict | None = None) -> Tensor:
    """Wrap an op result, check finiteness, and record it if any input is tracked."""
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    result = Tensor(out)
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        needs = tuple(tape.tracks(t) for t in inputs)
        if any(needs):
            ctx = ctx or {}
            ctx["needs"] = needs
            tape.record(op, inputs, result, ctx)
    return result
