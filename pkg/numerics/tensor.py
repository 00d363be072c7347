# numerics/tensor.py
# Dense float32 tensor primitives: conv, pooling, normalisation, activations, resampling

import logging
from typing import Literal, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator

from guardrails import ShapeError, check_rank

logger = logging.getLogger(__name__)

DTYPE = np.float32


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float32 array."""
    return np.ascontiguousarray(x, dtype=DTYPE)


class ConvSpec(BaseModel):
    """Geometry of a 2D convolution. groups == in_channels selects depth-wise."""
    model_config = ConfigDict(frozen=True)

    in_channels: int = Field(ge=1)
    out_channels: int = Field(ge=1)
    kernel: int = Field(default=3, ge=1)
    stride: int = Field(default=1, ge=1)
    padding: int = Field(default=0, ge=0)
    groups: int = Field(default=1, ge=1)
    has_bias: bool = True

    @model_validator(mode="after")
    def _check_groups(self):
        if self.in_channels % self.groups:
            raise ValueError(f"in_channels {self.in_channels} not divisible by groups {self.groups}")
        if self.out_channels % self.groups:
            raise ValueError(f"out_channels {self.out_channels} not divisible by groups {self.groups}")
        return self

    @classmethod
    def same(cls, in_channels: int, out_channels: int, kernel: int = 3, stride: int = 1) -> "ConvSpec":
        return cls(in_channels=in_channels, out_channels=out_channels, kernel=kernel,
                   stride=stride, padding=kernel // 2)

    @classmethod
    def depthwise(cls, channels: int, kernel: int = 3) -> "ConvSpec":
        return cls(in_channels=channels, out_channels=channels, kernel=kernel,
                   padding=kernel // 2, groups=channels)

    @classmethod
    def pointwise(cls, in_channels: int, out_channels: int) -> "ConvSpec":
        return cls(in_channels=in_channels, out_channels=out_channels, kernel=1)

    @property
    def weight_shape(self) -> tuple:
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    @property
    def fan_in(self) -> int:
        return (self.in_channels // self.groups) * self.kernel * self.kernel

    def output_size(self, height: int, width: int) -> tuple:
        k, s, p = self.kernel, self.stride, self.padding
        return (height + 2 * p - k) // s + 1, (width + 2 * p - k) // s + 1


def conv2d(x, w, b: Optional[np.ndarray], spec: ConvSpec) -> np.ndarray:
    """
    Cross-correlation of a [C,H,W] input with a [C',C/groups,k,k] kernel.

    Windows are gathered with a strided view (im2col) and reduced with one
    batched matrix product per group.
    """
    x = as_tensor(x)
    w = as_tensor(w)
    check_rank(x, 3, "conv2d input")
    if x.shape[0] != spec.in_channels:
        raise ShapeError(f"conv2d: input dimension 0 (channels) is {x.shape[0]}, spec expects {spec.in_channels}")
    if w.shape != spec.weight_shape:
        raise ShapeError(f"conv2d: weight shape {tuple(w.shape)} does not match spec {spec.weight_shape}")
    if spec.has_bias:
        if b is None:
            raise ShapeError("conv2d: spec has a bias but none was given")
        b = as_tensor(b)
        if b.shape != (spec.out_channels,):
            raise ShapeError(f"conv2d: bias dimension 0 is {b.shape}, expected ({spec.out_channels},)")

    _, height, width = x.shape
    k, s, p, g = spec.kernel, spec.stride, spec.padding, spec.groups
    if height + 2 * p < k:
        raise ShapeError(f"conv2d: dimension 1 (height {height} + padding) smaller than kernel {k}")
    if width + 2 * p < k:
        raise ShapeError(f"conv2d: dimension 2 (width {width} + padding) smaller than kernel {k}")
    out_h, out_w = spec.output_size(height, width)

    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p)))
    windows = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]  # [C, H', W', k, k]
    cg, og = spec.in_channels // g, spec.out_channels // g
    cols = (
        windows.reshape(g, cg, out_h, out_w, k, k)
        .transpose(0, 2, 3, 1, 4, 5)
        .reshape(g, out_h * out_w, cg * k * k)
    )
    kernels = w.reshape(g, og, cg * k * k)
    out = np.matmul(cols, kernels.transpose(0, 2, 1))  # [g, L, og]
    out = out.transpose(0, 2, 1).reshape(spec.out_channels, out_h, out_w)
    if spec.has_bias:
        out = out + b[:, None, None]
    return as_tensor(out)


def pool2d(x, mode: Literal["max", "avg"], kernel: int, stride: int) -> np.ndarray:
    """Windowed max or mean over [C,H,W]; no padding."""
    x = as_tensor(x)
    check_rank(x, 3, "pool2d input")
    if kernel < 1 or stride < 1:
        raise ShapeError(f"pool2d: kernel and stride must be >= 1, got {kernel}, {stride}")
    if kernel > x.shape[1] or kernel > x.shape[2]:
        raise ShapeError(f"pool2d: kernel {kernel} larger than input extent {x.shape[1]}x{x.shape[2]}")
    windows = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    if mode == "max":
        return as_tensor(windows.max(axis=(-2, -1)))
    if mode == "avg":
        return as_tensor(windows.sum(axis=(-2, -1)) / DTYPE(kernel * kernel))
    raise ValueError(f"pool2d: unknown mode {mode!r}")


def channel_pool(x) -> np.ndarray:
    """[C,H,W] -> [2,H,W]: per-pixel channel mean (plane 0) and max (plane 1)."""
    x = as_tensor(x)
    check_rank(x, 3, "channel_pool input")
    if x.shape[0] < 1:
        raise ShapeError("channel_pool: dimension 0 (channels) must be >= 1")
    return as_tensor(np.stack([x.mean(axis=0), x.max(axis=0)]))


def global_pool(x, mode: Literal["max", "avg"]) -> np.ndarray:
    """[C,H,W] -> [C] spatial mean or max."""
    x = as_tensor(x)
    check_rank(x, 3, "global_pool input")
    return as_tensor(x.max(axis=(1, 2)) if mode == "max" else x.mean(axis=(1, 2)))


# ---------------- activations ---------------- #

def relu(x) -> np.ndarray:
    return np.maximum(as_tensor(x), DTYPE(0))


def sigmoid(x) -> np.ndarray:
    x = as_tensor(x)
    # tanh form never overflows
    return as_tensor(DTYPE(0.5) * (DTYPE(1) + np.tanh(DTYPE(0.5) * x)))


def silu(x) -> np.ndarray:
    x = as_tensor(x)
    return as_tensor(x * sigmoid(x))


def prelu(x, slope) -> np.ndarray:
    """PReLU with a scalar or per-channel ([C] over a [C,...] input) slope."""
    x = as_tensor(x)
    slope = as_tensor(slope)
    if slope.ndim == 1 and x.ndim >= 1 and slope.shape[0] not in (1, x.shape[0]):
        raise ShapeError(f"prelu: slope length {slope.shape[0]} does not match dimension 0 ({x.shape[0]})")
    if slope.ndim == 1 and x.ndim > 1:
        slope = slope.reshape((-1,) + (1,) * (x.ndim - 1))
    return as_tensor(np.where(x >= 0, x, slope * x))


def gelu(x) -> np.ndarray:
    x = as_tensor(x)
    c = DTYPE(np.sqrt(2.0 / np.pi))
    return as_tensor(DTYPE(0.5) * x * (DTYPE(1) + np.tanh(c * (x + DTYPE(0.044715) * x ** 3))))


def softmax(x, axis: int = -1) -> np.ndarray:
    """Softmax along `axis`; normalised in float64 so rows sum to 1 within 1e-6."""
    z = np.asarray(x, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return as_tensor(e / e.sum(axis=axis, keepdims=True))


# ---------------- normalisation ---------------- #

def batch_norm(x, gamma, beta, mean, var, eps: float = 1e-5) -> np.ndarray:
    """Inference-form batch norm over [C,H,W] with stored statistics."""
    x = as_tensor(x)
    check_rank(x, 3, "batch_norm input")
    channels = x.shape[0]
    params = [as_tensor(v) for v in (gamma, beta, mean, var)]
    for name, v in zip(("gamma", "beta", "mean", "var"), params):
        if v.shape != (channels,):
            raise ShapeError(f"batch_norm: {name} has shape {tuple(v.shape)}, expected ({channels},)")
    gamma, beta, mean, var = (v[:, None, None] for v in params)
    if np.any(var < 0):
        raise ShapeError("batch_norm: var must be non-negative")
    return as_tensor((x - mean) / np.sqrt(var + DTYPE(eps)) * gamma + beta)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """Normalise over the last axis."""
    x = as_tensor(x)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return as_tensor((x - mu) / np.sqrt(var + DTYPE(eps)) * as_tensor(gamma) + as_tensor(beta))


# ---------------- resampling and assembly ---------------- #

def upsample_nearest(x, factor: int) -> np.ndarray:
    x = as_tensor(x)
    check_rank(x, 3, "upsample_nearest input")
    if factor < 1:
        raise ShapeError(f"upsample_nearest: factor must be >= 1, got {factor}")
    return as_tensor(np.repeat(np.repeat(x, factor, axis=1), factor, axis=2))


def concat(xs: Sequence, axis: int = 0) -> np.ndarray:
    """Concatenate along `axis`; every other axis must agree."""
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: nothing to concatenate")
    first = xs[0]
    axis = axis % first.ndim
    for i, x in enumerate(xs[1:], start=1):
        if x.ndim != first.ndim:
            raise ShapeError(f"concat: input {i} has rank {x.ndim}, expected {first.ndim}")
        for dim in range(first.ndim):
            if dim != axis and x.shape[dim] != first.shape[dim]:
                raise ShapeError(
                    f"concat: dimension {dim} mismatch, input 0 has {first.shape[dim]}, input {i} has {x.shape[dim]}"
                )
    return as_tensor(np.concatenate(xs, axis=axis))


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected two matrices, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimension mismatch, {a.shape[1]} vs {b.shape[0]}")
    return as_tensor(a @ b)


def linear(x, w, b=None) -> np.ndarray:
    """Row-wise affine map: x [N,in] @ w.T [in,out] + b."""
    x = as_tensor(x)
    w = as_tensor(w)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input last dimension {x.shape[-1]} does not match weight {w.shape[1]}")
    out = x @ w.T
    if b is not None:
        out = out + as_tensor(b)
    return as_tensor(out)
