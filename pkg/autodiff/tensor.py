"""
Dense float32 tensors and the reverse-mode gradient tape.

Operations (see autodiff.ops) record themselves onto the tape that is active
in the current context. Backward replays the tape in exact reverse execution
order and returns one gradient array per parameter.
"""

from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ShapeError

DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_active_tape: "ContextVar[Optional[GradientTape]]" = ContextVar("gsmo_active_tape", default=None)
# float32 everywhere except inside precision(), which gradient checks use
_compute_dtype: "ContextVar[type]" = ContextVar("gsmo_compute_dtype", default=DTYPE)


def compute_dtype() -> type:
    """Floating type new tensors and operator results are stored in."""
    return _compute_dtype.get()


@contextmanager
def precision(dtype) -> Iterator[None]:
    token = _compute_dtype.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _compute_dtype.reset(token)


class Tensor:
    """Dense n-dimensional float32 array, row-major, images laid out N x H x W x C."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=_compute_dtype.get())
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying array."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, detail="tensor is not a scalar")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Named tensor owned by a model; running statistics are non-trainable parameters."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, value, trainable: bool = True):
        super().__init__(value, requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def assign(self, value: np.ndarray):
        """Replace the value in place, keeping the shape."""
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self.data.shape:
            raise ShapeError(f"assign {self.name}", self.data.shape, value.shape)
        self.data = np.ascontiguousarray(value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


@dataclass
class TapeEntry:
    """One executed operation."""

    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn
    # branch taken by a piecewise op (relu mask, max-pool argmax)
    switches: Optional[np.ndarray] = None


class GradientTape:
    """Ordered record of executed operations for one training run.

    Usage:
        with GradientTape() as tape:
            loss = model_loss(...)
        grads = tape.gradient(loss, parameters)
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._token = None

    def __enter__(self) -> "GradientTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tape.reset(self._token)
        self._token = None

    def record(
        self,
        op: str,
        output: Tensor,
        inputs: Sequence[Tensor],
        backward: BackwardFn,
        switches: Optional[np.ndarray] = None,
    ):
        self.entries.append(
            TapeEntry(op=op, output=output, inputs=tuple(inputs), backward=backward, switches=switches)
        )

    def switch_pattern(self) -> List[np.ndarray]:
        """Branch decisions of every piecewise op, in execution order."""
        return [entry.switches for entry in self.entries if entry.switches is not None]

    def watched_parameters(self) -> List[Parameter]:
        """Trainable parameters used by any recorded operation, in first-use order."""
        seen: Dict[int, Parameter] = {}
        for entry in self.entries:
            for tensor in entry.inputs:
                if isinstance(tensor, Parameter) and tensor.trainable and id(tensor) not in seen:
                    seen[id(tensor)] = tensor
        return list(seen.values())

    def gradient(
        self,
        loss: Tensor,
        parameters: Optional[Iterable[Parameter]] = None,
    ) -> Dict[str, np.ndarray]:
        return backward(self, loss, parameters)

    def __len__(self) -> int:
        return len(self.entries)


def active_tape() -> Optional[GradientTape]:
    return _active_tape.get()


def record(
    op: str,
    output: Tensor,
    inputs: Sequence[Tensor],
    backward_fn: BackwardFn,
    switches: Optional[np.ndarray] = None,
) -> Tensor:
    """Attach an operation to the active tape when any input needs a gradient."""
    tape = _active_tape.get()
    if tape is None or not any(t.requires_grad for t in inputs):
        return output
    output.requires_grad = True
    tape.record(op, output, inputs, backward_fn, switches)
    return output


def backward(
    tape: GradientTape,
    loss: Tensor,
    parameters: Optional[Iterable[Parameter]] = None,
) -> Dict[str, np.ndarray]:
    """Reverse-mode pass over the tape.

    Args:
        tape: Tape the loss was produced on
        loss: Scalar tensor
        parameters: Parameters to report (defaults to every trainable parameter the tape saw)

    Returns:
        Map from parameter name to gradient array; unreachable parameters get zeros
    """
    if loss.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be a scalar")
    if not any(entry.output is loss for entry in tape.entries):
        raise ValueError("backward: loss was not produced on this tape")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        upstream = grads.pop(id(entry.output), None)
        if upstream is None:
            continue
        input_grads = entry.backward(upstream)
        for tensor, grad in zip(entry.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad

    if parameters is None:
        parameters = tape.watched_parameters()

    result: Dict[str, np.ndarray] = {}
    for param in parameters:
        grad = grads.get(id(param))
        if grad is None or not param.trainable:
            result[param.name] = np.zeros_like(param.data)
        else:
            result[param.name] = np.asarray(grad, dtype=_compute_dtype.get()).reshape(param.shape)
    return result
