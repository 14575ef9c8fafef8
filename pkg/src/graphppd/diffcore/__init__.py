"""Dense float64 tensors with tape-based reverse-mode differentiation."""
from . import ops
from .gradcheck import GradCheckReport, grad_check
from .tape import VJP, NonFiniteError, Param, Tape, Tensor, active_tape

__all__ = [
    "VJP", "GradCheckReport", "NonFiniteError", "Param", "Tape", "Tensor",
    "active_tape", "grad_check", "ops",
]
