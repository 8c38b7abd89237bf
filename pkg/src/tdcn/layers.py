"""Neural layer primitives: dilated 1-D convolution, pooling, batch
normalization, activations, linear maps and softmax.

Every layer is a pure function over (input, params) that records a single
fused tape node, so the graph stays small even for long sequences.
Activations carry time on the second-to-last axis and channels on the
last axis: ``(T, C)`` for a single sequence or ``(B, T, C)`` batched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, register_op

__all__ = [
    "Conv1DParams",
    "BatchNormParams",
    "LinearParams",
    "init_conv",
    "init_linear",
    "init_batch_norm",
    "conv1d",
    "elu",
    "relu",
    "sigmoid",
    "max_pool1d",
    "avg_pool1d",
    "batch_norm",
    "linear",
    "softmax",
    "global_avg_pool",
    "scale_channels",
]


@dataclass
class Conv1DParams:
    """Weights for a dilated 1-D convolution: weight (Cout, Cin, k), bias (Cout)."""

    weight: Tensor
    bias: Tensor
    dilation: int = 1

    def __post_init__(self):
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.kernel_size < 1:
            raise ValueError(f"kernel size must be >= 1, got {self.kernel_size}")

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]


@dataclass
class BatchNormParams:
    """Per-channel affine batch normalization with running statistics."""

    scale: Tensor
    shift: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must be in (0, 1)")


@dataclass
class LinearParams:
    """Affine map: weight (out, in), bias (out)."""

    weight: Tensor
    bias: Tensor

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape)


def init_conv(
    rng: np.random.Generator, in_channels: int, out_channels: int, kernel_size: int, dilation: int = 1
) -> Conv1DParams:
    weight = Tensor(
        _uniform(rng, (out_channels, in_channels, kernel_size), in_channels * kernel_size),
        requires_grad=True,
    )
    bias = Tensor(np.zeros(out_channels), requires_grad=True)
    return Conv1DParams(weight=weight, bias=bias, dilation=dilation)


def init_linear(rng: np.random.Generator, in_dim: int, out_dim: int) -> LinearParams:
    weight = Tensor(_uniform(rng, (out_dim, in_dim), in_dim), requires_grad=True)
    bias = Tensor(np.zeros(out_dim), requires_grad=True)
    return LinearParams(weight=weight, bias=bias)


def init_batch_norm(channels: int, epsilon: float = 1e-5, momentum: float = 0.9) -> BatchNormParams:
    return BatchNormParams(
        scale=Tensor(np.ones(channels), requires_grad=True),
        shift=Tensor(np.zeros(channels), requires_grad=True),
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
        epsilon=epsilon,
        momentum=momentum,
    )


def _tap_offsets(kernel_size: int, dilation: int, causal: bool) -> list[int]:
    """Time offsets of the convolution taps relative to the output position.

    Centered mode places tap i at d*(i-1): offsets (-d, 0, +d) for k=3.
    A k=1 kernel is pointwise (offset 0) so that an identity-initialized
    1x1 conv is the identity map.  Causal mode reads only the past:
    offsets (-d*(k-1), ..., -d, 0).
    """
    if causal:
        return [-dilation * (kernel_size - 1 - i) for i in range(kernel_size)]
    if kernel_size == 1:
        return [0]
    return [dilation * (i - 1) for i in range(kernel_size)]


def conv1d(x: Tensor, p: Conv1DParams, causal: bool = False) -> Tensor:
    """Dilated 1-D convolution with zero padding; output length equals input length.

    Taps are gathered into a (B, T, k*Cin) block so forward and backward
    each run as one matrix product.
    """
    xd = x.data
    if xd.ndim not in (2, 3):
        raise ShapeError(f"conv1d: expected (T, C) or (B, T, C) input, got shape {xd.shape}")
    if xd.shape[-1] != p.in_channels:
        raise ShapeError(
            f"conv1d: input has {xd.shape[-1]} channels but params expect {p.in_channels}"
        )
    squeeze = xd.ndim == 2
    x3 = xd[None] if squeeze else xd
    batch, length, cin = x3.shape
    cout, k = p.out_channels, p.kernel_size
    w = p.weight.data
    offsets = _tap_offsets(k, p.dilation, causal)

    if offsets == [0]:
        cols = x3
    else:
        cols = np.zeros((batch, length, k * cin))
        for i, off in enumerate(offsets):
            if off >= length or -off >= length:
                continue
            if off >= 0:
                cols[:, : length - off, i * cin : (i + 1) * cin] = x3[:, off:]
            else:
                cols[:, -off:, i * cin : (i + 1) * cin] = x3[:, : length + off]
    # row (tap, cin) ordering matches the column blocks above
    wmat = w.transpose(2, 1, 0).reshape(k * cin, cout)
    out = (cols.reshape(-1, k * cin) @ wmat).reshape(batch, length, cout)
    out += p.bias.data
    if squeeze:
        out = out[0]

    def backward(g: np.ndarray):
        g2 = (g[None] if squeeze else g).reshape(-1, cout)
        dcols = (g2 @ wmat.T).reshape(batch, length, k * cin)
        if offsets == [0]:
            dx = dcols
        else:
            dx = np.zeros_like(x3)
            for i, off in enumerate(offsets):
                if off >= length or -off >= length:
                    continue
                if off >= 0:
                    dx[:, off:] += dcols[:, : length - off, i * cin : (i + 1) * cin]
                else:
                    dx[:, : length + off] += dcols[:, -off:, i * cin : (i + 1) * cin]
        dw = (cols.reshape(-1, k * cin).T @ g2).reshape(k, cin, cout).transpose(2, 1, 0)
        db = g2.sum(axis=0)
        return (dx[0] if squeeze else dx, dw, db)

    return register_op(out, (x, p.weight, p.bias), backward, "conv1d")


def elu(x: Tensor) -> Tensor:
    """x for x >= 0, exp(x) - 1 below; derivative 1 / exp(x) respectively."""
    xd = x.data
    out = xd.copy()
    neg = xd < 0
    out[neg] = np.expm1(xd[neg])

    def backward(g: np.ndarray):
        # elu(x) + 1 = exp(x) on the negative side, so the output is enough
        dg = g.copy()
        dg[neg] *= out[neg] + 1.0
        return (dg,)

    return register_op(out, (x,), backward, "elu")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return register_op(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),), "relu")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return register_op(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _pool_views(x: Tensor, op: str):
    xd = x.data
    if xd.ndim not in (2, 3):
        raise ShapeError(f"{op}: expected (T, C) or (B, T, C) input, got shape {xd.shape}")
    squeeze = xd.ndim == 2
    x3 = xd[None] if squeeze else xd
    batch, length, channels = x3.shape
    if length < 2:
        raise ValueError(f"{op}: sequence length must be >= 2, got {length}")
    half = length // 2
    windows = x3[:, : 2 * half].reshape(batch, half, 2, channels)
    return squeeze, x3, windows, batch, length, channels, half


def max_pool1d(x: Tensor) -> Tensor:
    """Per-channel max over non-overlapping windows of 2; odd tail dropped.

    Backward routes the gradient to each window's argmax only (first index
    on ties).
    """
    squeeze, _, windows, batch, length, channels, half = _pool_views(x, "max_pool1d")
    idx = windows.argmax(axis=2)
    out = np.take_along_axis(windows, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(g: np.ndarray):
        g3 = g[None] if squeeze else g
        dwin = np.zeros((batch, half, 2, channels))
        np.put_along_axis(dwin, idx[:, :, None, :], g3[:, :, None, :], axis=2)
        dx = np.zeros((batch, length, channels))
        dx[:, : 2 * half] = dwin.reshape(batch, 2 * half, channels)
        return (dx[0] if squeeze else dx,)

    return register_op(out[0] if squeeze else out, (x,), backward, "max_pool1d")


def avg_pool1d(x: Tensor) -> Tensor:
    """As max_pool1d but averaging; gradient splits equally over the window."""
    squeeze, _, windows, batch, length, channels, half = _pool_views(x, "avg_pool1d")
    out = windows.mean(axis=2)

    def backward(g: np.ndarray):
        g3 = g[None] if squeeze else g
        dx = np.zeros((batch, length, channels))
        dx[:, : 2 * half] = np.repeat(g3 * 0.5, 2, axis=1)
        return (dx[0] if squeeze else dx,)

    return register_op(out[0] if squeeze else out, (x,), backward, "avg_pool1d")


def batch_norm(x: Tensor, p: BatchNormParams, training: bool) -> Tensor:
    """Per-channel normalization over the (batch, time) axes.

    Train mode uses batch statistics (population variance) and updates the
    running stats in place as ``running <- momentum * running +
    (1 - momentum) * batch``; eval mode uses the running stats.
    """
    xd = x.data
    if xd.ndim not in (2, 3):
        raise ShapeError(f"batch_norm: expected (T, C) or (B, T, C) input, got shape {xd.shape}")
    squeeze = xd.ndim == 2
    x3 = xd[None] if squeeze else xd
    n = x3.shape[0] * x3.shape[1]
    scale, shift = p.scale.data, p.shift.data

    if training:
        if n < 2:
            raise ValueError(f"batch_norm: train mode needs at least 2 samples per channel, got {n}")
        mean = x3.mean(axis=(0, 1))
        var = x3.var(axis=(0, 1))
        p.running_mean *= p.momentum
        p.running_mean += (1.0 - p.momentum) * mean
        p.running_var *= p.momentum
        p.running_var += (1.0 - p.momentum) * var
    else:
        mean = p.running_mean
        var = p.running_var

    inv_std = 1.0 / np.sqrt(var + p.epsilon)
    xhat = (x3 - mean) * inv_std
    out = xhat * scale + shift
    if squeeze:
        out = out[0]

    def backward(g: np.ndarray):
        g3 = g[None] if squeeze else g
        dscale = (g3 * xhat).sum(axis=(0, 1))
        dshift = g3.sum(axis=(0, 1))
        dxhat = g3 * scale
        if training:
            # batch statistics depend on x, so normalize the gradient too
            dx = inv_std * (
                dxhat
                - dxhat.mean(axis=(0, 1))
                - xhat * (dxhat * xhat).mean(axis=(0, 1))
            )
        else:
            dx = dxhat * inv_std
        return (dx[0] if squeeze else dx, dscale, dshift)

    return register_op(out, (x, p.scale, p.shift), backward, "batch_norm")


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """x @ W^T + b for 1-D input (in,) or row-batched input (N, in)."""
    xd = x.data
    if xd.ndim not in (1, 2) or xd.shape[-1] != p.in_dim:
        raise ShapeError(
            f"linear: input shape {xd.shape} does not match weight shape {p.weight.shape}"
        )
    w, b = p.weight.data, p.bias.data
    out = xd @ w.T + b

    def backward(g: np.ndarray):
        if xd.ndim == 1:
            return (g @ w, np.outer(g, xd), g.copy())
        return (g @ w, g.T @ xd, g.sum(axis=0))

    return register_op(out, (x, p.weight, p.bias), backward, "linear")


def softmax(x: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max subtraction."""
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return register_op(out, (x,), backward, "softmax")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the time axis: (T, C) -> (C,) or (B, T, C) -> (B, C)."""
    xd = x.data
    if xd.ndim not in (2, 3):
        raise ShapeError(f"global_avg_pool: expected (T, C) or (B, T, C), got shape {xd.shape}")
    axis = xd.ndim - 2
    length = xd.shape[axis]
    out = xd.mean(axis=axis)

    def backward(g: np.ndarray):
        return (np.repeat(np.expand_dims(g, axis), length, axis=axis) / length,)

    return register_op(out, (x,), backward, "global_avg_pool")


def scale_channels(x: Tensor, h: Tensor) -> Tensor:
    """Rescale each channel of x by h, broadcasting h across time.

    Shapes: x (T, C) with h (C,), or x (B, T, C) with h (B, C).
    """
    xd, hd = x.data, h.data
    if xd.ndim == 2 and hd.ndim == 1 and xd.shape[1] == hd.shape[0]:
        out = xd * hd
        backward = lambda g: (g * hd, (g * xd).sum(axis=0))  # noqa: E731
    elif xd.ndim == 3 and hd.ndim == 2 and xd.shape[0] == hd.shape[0] and xd.shape[2] == hd.shape[1]:
        hb = hd[:, None, :]
        out = xd * hb
        backward = lambda g: (g * hb, (g * xd).sum(axis=1))  # noqa: E731
    else:
        raise ShapeError(f"scale_channels: shapes {xd.shape} and {hd.shape} do not correspond")
    return register_op(out, (x, h), backward, "scale_channels")
