"""Central finite-difference oracle for tape gradients."""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from autodiff import ops
from autodiff.tensor import GradientTape, Parameter, Tensor, backward, precision

# denominator floor when a tensor's gradient is identically zero
MIN_SCALE = 1e-8


@dataclass
class GradCheckReport:
    """Worst-case disagreement between analytic and numerical gradients."""

    max_error: float
    norm_error: float
    per_tensor: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance and self.norm_error < tolerance


def relative_error(analytic: float, numeric: float, floor: float = MIN_SCALE) -> float:
    """|a - n| / max(floor, |a|, |n|)."""
    return abs(analytic - numeric) / max(floor, abs(analytic), abs(numeric))


def _objective(output: np.ndarray, projection: np.ndarray) -> float:
    return float(np.sum(output.astype(np.float64) * projection))


def _same_switches(first: List[np.ndarray], second: List[np.ndarray]) -> bool:
    return len(first) == len(second) and all(np.array_equal(a, b) for a, b in zip(first, second))


def check_gradients(
    forward: Callable[[], Tensor],
    tensors: Sequence[Parameter],
    samples: int = 20,
    step: float = 1e-3,
    seed: int = 0,
    skip: Optional[Callable[[Parameter, tuple], bool]] = None,
    skip_kinks: bool = False,
) -> GradCheckReport:
    """Compare tape gradients with central differences on sampled coordinates.

    Both passes run in float64 with the perturbed tensors upcast, so the check
    measures the backward rules rather than float32 rounding; the tensors get
    their original arrays back afterwards. Errors are relative to the larger
    of the two values, floored at the tensor's largest analytic gradient so
    that coordinates which happen to sit near zero are judged on the tensor's
    scale.

    Args:
        forward: Builds the output from the current parameter values (any shape)
        tensors: Parameters to perturb; must be the tensors forward() reads
        samples: Coordinates checked per tensor (all of them if the tensor is smaller)
        step: Finite-difference step
        seed: Seed for coordinate sampling and the output projection
        skip: Optional predicate excluding coordinates (e.g. max-pool ties)
        skip_kinks: Exclude coordinates whose +step and -step passes take a
            different relu or max-pool branch; skipped coordinates are
            replaced by further samples

    Returns:
        GradCheckReport over every checked coordinate
    """
    originals = [tensor.data for tensor in tensors]
    try:
        with precision(np.float64):
            for tensor in tensors:
                tensor.data = tensor.data.astype(np.float64)
            return _compare(forward, tensors, samples, step, seed, skip, skip_kinks)
    finally:
        for tensor, data in zip(tensors, originals):
            tensor.data = data


def _compare(
    forward: Callable[[], Tensor],
    tensors: Sequence[Parameter],
    samples: int,
    step: float,
    seed: int,
    skip: Optional[Callable[[Parameter, tuple], bool]],
    skip_kinks: bool,
) -> GradCheckReport:
    rng = np.random.default_rng(seed)

    sample = forward()
    projection = np.ones(sample.shape) if sample.size == 1 else rng.standard_normal(sample.shape)

    with GradientTape() as tape:
        output = forward()
        scalar = ops.inner(output, projection)
    analytic = backward(tape, scalar, list(tensors))

    def evaluate() -> tuple:
        if not skip_kinks:
            return _objective(forward().data, projection), None
        with GradientTape() as pass_tape:
            value = _objective(forward().data, projection)
        return value, pass_tape.switch_pattern()

    errors: List[float] = []
    analytic_values: List[float] = []
    numeric_values: List[float] = []
    per_tensor: Dict[str, float] = {}
    skipped = 0

    for tensor in tensors:
        grad = analytic[tensor.name]
        floor = max(MIN_SCALE, float(np.max(np.abs(grad))) if grad.size else 0.0)
        wanted = min(samples, tensor.size)
        worst = 0.0
        checked = 0
        for flat in rng.permutation(tensor.size):
            if checked == wanted:
                break
            coord = np.unravel_index(int(flat), tensor.shape)
            if skip is not None and skip(tensor, coord):
                skipped += 1
                continue
            original = tensor.data[coord].copy()
            tensor.data[coord] = original + step
            plus, plus_switches = evaluate()
            tensor.data[coord] = original - step
            minus, minus_switches = evaluate()
            tensor.data[coord] = original
            if skip_kinks and not _same_switches(plus_switches, minus_switches):
                skipped += 1
                continue

            numeric = (plus - minus) / (2.0 * step)
            value = float(grad[coord])
            error = relative_error(value, numeric, floor)
            worst = max(worst, error)
            errors.append(error)
            analytic_values.append(value)
            numeric_values.append(numeric)
            checked += 1
        per_tensor[tensor.name] = worst

    a = np.asarray(analytic_values)
    n = np.asarray(numeric_values)
    scale = max(MIN_SCALE, float(np.linalg.norm(a)), float(np.linalg.norm(n)))
    norm_error = float(np.linalg.norm(a - n)) / scale if errors else 0.0

    return GradCheckReport(
        max_error=max(errors) if errors else 0.0,
        norm_error=norm_error,
        per_tensor=per_tensor,
        checked=len(errors),
        skipped=skipped,
    )
