"""
Differentiable operators used by the CNN backbone and the prediction heads.

Every function takes and returns Tensors, computes the forward result in
the compute dtype (float32 outside gradient checks) and, when a tape is
active, records a closure computing the vector-Jacobian product for each
input. relu and max-pool also record the branch they took.
"""

import math
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from autodiff.tensor import DTYPE, Parameter, Tensor, compute_dtype, record
from core.errors import ShapeError

PROBABILITY_FLOOR = 1e-12
BATCHNORM_EPSILON = 1e-5
BATCHNORM_MOMENTUM = 0.9


def _same_padding(extent: int, kernel: int, stride: int):
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    before = total // 2
    return before, total - before


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor,
    padding: str = "same",
    stride: int = 1,
) -> Tensor:
    """2-D convolution over N x H x W x Cin with Kh x Kw x Cin x Cout kernels."""
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError("conv2d", x.shape, kernels.shape, detail="expected 4-D input and kernels")
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernels.shape
    if kcin != cin:
        raise ShapeError(
            "conv2d", x.shape, kernels.shape,
            detail=f"input has {cin} channels, kernels expect {kcin}",
        )
    if bias.shape != (cout,):
        raise ShapeError("conv2d bias", bias.shape, (cout,))
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")

    if padding == "same":
        top, bottom = _same_padding(h, kh, stride)
        left, right = _same_padding(w, kw, stride)
    elif padding == "valid":
        top = bottom = left = right = 0
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")

    xp = np.pad(x.data, ((0, 0), (top, bottom), (left, right), (0, 0)))
    hp, wp = xp.shape[1], xp.shape[2]
    if kh > hp or kw > wp:
        raise ShapeError("conv2d", xp.shape, kernels.shape, detail="kernel larger than padded input")
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1

    # N, out_h, out_w, Cin, Kh, Kw
    windows = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :out_h, :out_w]
    out = np.tensordot(windows, kernels.data, axes=([3, 4, 5], [2, 0, 1])) + bias.data

    def backward(g: np.ndarray):
        d_bias = g.sum(axis=(0, 1, 2))
        d_kernels = np.tensordot(windows, g, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
        dxp = np.zeros_like(xp)
        h_span = stride * (out_h - 1) + 1
        w_span = stride * (out_w - 1) + 1
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + h_span:stride, j:j + w_span:stride, :] += g @ kernels.data[i, j].T
        dx = dxp[:, top:top + h, left:left + w, :]
        return dx, d_kernels, d_bias

    return record("conv2d", Tensor(out), (x, kernels, bias), backward)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Parameter,
    running_var: Parameter,
    training: bool,
    epsilon: float = BATCHNORM_EPSILON,
    momentum: float = BATCHNORM_MOMENTUM,
) -> Tensor:
    """Per-channel batch normalization; train mode also updates the running statistics."""
    if epsilon <= 0:
        raise ValueError(f"batchnorm2d: epsilon must be > 0, got {epsilon}")
    if x.ndim != 4:
        raise ShapeError("batchnorm2d", x.shape, detail="expected N x H x W x C")
    channels = x.shape[-1]
    for name, t in (("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)):
        if t.shape != (channels,):
            raise ShapeError(f"batchnorm2d {name}", t.shape, (channels,))

    dtype = compute_dtype()
    axes = (0, 1, 2)
    count = x.shape[0] * x.shape[1] * x.shape[2]
    if training:
        if count < 2:
            raise ShapeError("batchnorm2d", x.shape, detail="train mode needs at least 2 values per channel")
        mean = x.data.mean(axis=axes, dtype=np.float64).astype(dtype)
        centered = x.data - mean
        var = np.mean(np.square(centered, dtype=np.float64), axis=axes).astype(dtype)
        running_mean.data = (momentum * running_mean.data + (1.0 - momentum) * mean).astype(DTYPE)
        running_var.data = (momentum * running_var.data + (1.0 - momentum) * var).astype(DTYPE)
    else:
        mean = running_mean.data
        var = running_var.data
        centered = x.data - mean

    inv_std = (1.0 / np.sqrt(var + dtype(epsilon))).astype(dtype)
    x_hat = centered * inv_std
    out = x_hat * gamma.data + beta.data

    def backward(g: np.ndarray):
        d_gamma = (g * x_hat).sum(axis=axes)
        d_beta = g.sum(axis=axes)
        d_xhat = g * gamma.data
        if training:
            dx = (inv_std / count) * (
                count * d_xhat
                - d_xhat.sum(axis=axes)
                - x_hat * (d_xhat * x_hat).sum(axis=axes)
            )
        else:
            dx = d_xhat * inv_std
        return dx, d_gamma, d_beta

    return record("batchnorm2d", Tensor(out), (x, gamma, beta), backward)


def maxpool2d(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping max pooling; ragged borders are padded with -inf on the bottom/right."""
    if pool <= 0:
        raise ValueError(f"maxpool2d: pool must be positive, got {pool}")
    if x.ndim != 4:
        raise ShapeError("maxpool2d", x.shape, detail="expected N x H x W x C")
    n, h, w, c = x.shape
    out_h = math.ceil(h / pool)
    out_w = math.ceil(w / pool)
    hp, wp = out_h * pool, out_w * pool
    xp = x.data
    if (hp, wp) != (h, w):
        xp = np.pad(xp, ((0, 0), (0, hp - h), (0, wp - w), (0, 0)), constant_values=-np.inf)

    # N, out_h, out_w, C, pool*pool with the window flattened row-major
    windows = (
        xp.reshape(n, out_h, pool, out_w, pool, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, out_h, out_w, c, pool * pool)
    )
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray):
        routed = np.zeros((n, out_h, out_w, c, pool * pool), dtype=compute_dtype())
        np.put_along_axis(routed, argmax[..., None], g[..., None], axis=-1)
        dxp = (
            routed.reshape(n, out_h, out_w, c, pool, pool)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, hp, wp, c)
        )
        return (dxp[:, :h, :w, :],)

    return record("maxpool2d", Tensor(out), (x,), backward, switches=argmax)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map x . weight + bias for N x F inputs."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError("dense", x.shape, weight.shape)
    if bias.shape != (weight.shape[1],):
        raise ShapeError("dense bias", bias.shape, (weight.shape[1],))

    out = x.data @ weight.data + bias.data

    def backward(g: np.ndarray):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return record("dense", Tensor(out), (x, weight, bias), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, x.data.dtype.type(0))

    def backward(g: np.ndarray):
        return (g * mask,)

    return record("relu", Tensor(out), (x,), backward, switches=mask)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    out = x.data.reshape(tuple(shape))

    def backward(g: np.ndarray):
        return (g.reshape(original),)

    return record("reshape", Tensor(out), (x,), backward)


def flatten(x: Tensor) -> Tensor:
    """N x H x W x C -> N x (H*W*C), row-major."""
    return reshape(x, (x.shape[0], -1))


def unflatten(x: Tensor, spatial: Sequence[int]) -> Tensor:
    """Inverse of flatten for the given trailing extents."""
    return reshape(x, (x.shape[0], *spatial))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last (feature) axis."""
    if not tensors:
        raise ValueError("concat: nothing to concatenate")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError("concat", tensors[0].shape, t.shape, detail="leading extents differ")
    widths = [t.shape[-1] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=-1)

    def backward(g: np.ndarray):
        bounds = np.cumsum(widths)[:-1]
        return tuple(np.split(g, bounds, axis=-1))

    return record("concat", Tensor(out), tuple(tensors), backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of the last axis."""
    out = x.data[..., start:stop]

    def backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return record("slice_last", Tensor(out), (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax with max-subtraction."""
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError("softmax", x.shape, detail="expected N x K with K >= 1")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return record("softmax", Tensor(out), (x,), backward)


def _validate_one_hot(targets: np.ndarray):
    if not np.all((targets == 0) | (targets == 1)) or not np.all(targets.sum(axis=1) == 1):
        bad = int(np.flatnonzero(~(((targets == 0) | (targets == 1)).all(axis=1) & (targets.sum(axis=1) == 1)))[0])
        raise ValueError(f"cross_entropy: target row {bad} is not one-hot")


def cross_entropy(probabilities: Tensor, targets: Union[Tensor, np.ndarray]) -> Tensor:
    """Batch-mean of -log(p[target]) with probabilities clamped to [1e-12, 1]."""
    target_data = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=DTYPE)
    if probabilities.ndim != 2 or probabilities.shape != target_data.shape:
        raise ShapeError("cross_entropy", probabilities.shape, target_data.shape)
    _validate_one_hot(target_data)

    dtype = compute_dtype()
    n = probabilities.shape[0]
    index = target_data.argmax(axis=1)
    rows = np.arange(n)
    picked = probabilities.data[rows, index]
    clamped = np.clip(picked, dtype(PROBABILITY_FLOOR), dtype(1.0))
    out = np.asarray(-np.log(clamped).sum() / dtype(n), dtype=dtype)

    def backward(g: np.ndarray):
        active = (picked >= PROBABILITY_FLOOR) & (picked <= 1.0)
        dp = np.zeros_like(probabilities.data)
        dp[rows, index] = np.where(active, -g / (dtype(n) * clamped), dtype(0))
        return (dp,)

    return record("cross_entropy", Tensor(out), (probabilities,), backward)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=compute_dtype())

    def backward(g: np.ndarray):
        return (np.full_like(x.data, g),)

    return record("sum", Tensor(out), (x,), backward)


def inner(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar sum(x * weights) against a constant array, accumulated in float64."""
    weights = np.asarray(weights)
    if weights.shape != x.shape:
        raise ShapeError("inner", x.shape, weights.shape)
    dtype = compute_dtype()
    out = np.asarray(np.sum(x.data.astype(np.float64) * weights), dtype=dtype)

    def backward(g: np.ndarray):
        return ((g * weights).astype(dtype),)

    return record("inner", Tensor(out), (x,), backward)


def weighted_sum(terms: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """Scalar w0*t0 + w1*t1 + ... accumulated left to right in the compute dtype."""
    if len(terms) != len(weights) or not terms:
        raise ValueError("weighted_sum: terms and weights must be non-empty and aligned")
    for t in terms:
        if t.size != 1:
            raise ShapeError("weighted_sum", t.shape, detail="terms must be scalars")
    dtype = compute_dtype()
    coefficients = [dtype(w) for w in weights]
    acc = coefficients[0] * terms[0].data.reshape(())
    for c, t in zip(coefficients[1:], terms[1:]):
        acc = acc + c * t.data.reshape(())
    out = np.asarray(acc, dtype=dtype)

    def backward(g: np.ndarray):
        return tuple((c * g).reshape(t.shape) for c, t in zip(coefficients, terms))

    return record("weighted_sum", Tensor(out), tuple(terms), backward)


def argmax_rows(probabilities: Union[Tensor, np.ndarray]) -> np.ndarray:
    """Row argmax; ties go to the lowest ordinal."""
    data = probabilities.data if isinstance(probabilities, Tensor) else np.asarray(probabilities)
    return data.argmax(axis=1)


def one_hot_rows(ordinals: np.ndarray, size: int, dtype: Optional[type] = None) -> np.ndarray:
    """Stack of one-hot rows for an ordinal vector."""
    ordinals = np.asarray(ordinals, dtype=np.int64)
    if ordinals.size and (ordinals.min() < 0 or ordinals.max() >= size):
        raise ValueError(f"one_hot_rows: ordinals outside [0, {size})")
    out = np.zeros((ordinals.shape[0], size), dtype=dtype or DTYPE)
    out[np.arange(ordinals.shape[0]), ordinals] = 1
    return out
