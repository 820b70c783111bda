"""
Minimal dense-tensor engine with reverse-mode gradients.

Provides the float32 Tensor, named Parameters, the GradientTape and the
operators the leaf classifiers are built from.
"""

from autodiff.tensor import DTYPE, GradientTape, Parameter, Tensor, active_tape, backward
from autodiff.gradcheck import GradCheckReport, check_gradients, relative_error

__all__ = [
    "DTYPE",
    "GradientTape",
    "Parameter",
    "Tensor",
    "active_tape",
    "backward",
    "GradCheckReport",
    "check_gradients",
    "relative_error",
]
