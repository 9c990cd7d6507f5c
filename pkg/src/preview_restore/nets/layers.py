"""Dense, convolutional and time-embedding building blocks."""

import math
from typing import Optional

import numpy as np

from preview_restore.errors import ShapeError
from preview_restore.tensor import (
    Rng,
    Tensor,
    conv2d,
    get_default_dtype,
    layer_norm,
    silu,
    transpose,
)
from .module import Module, Parameter


class Linear(Module):
    """``y = x @ W + b`` over the last axis, with an optional low-rank adapter delta."""

    def __init__(self, in_features: int, out_features: int, rng: Rng, bias: bool = True, scale: float = 1.0):
        self.in_features, self.out_features = in_features, out_features
        std = scale / math.sqrt(in_features)
        self.weight = Parameter(rng.normal((in_features, out_features)) * std)
        self.bias = Parameter(np.zeros(out_features)) if bias else None
        self.adapter = None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear: input width {x.shape[-1]} != {self.in_features}")
        y = x @ self.weight
        if self.adapter is not None and self.adapter.enabled:
            y = y + self.adapter(x)
        if self.bias is not None:
            y = y + self.bias
        return y

    def effective_weight(self) -> np.ndarray:
        """The weight the forward pass currently applies."""
        if self.adapter is not None and self.adapter.enabled:
            return self.weight.data + self.adapter.delta()
        return self.weight.data.copy()


class Conv2d(Module):
    """3x3 reflect-padded convolution; ``zero_init`` gives an all-zero kernel and bias."""

    def __init__(self, in_channels: int, out_channels: int, rng: Rng, stride: int = 1, zero_init: bool = False):
        self.in_channels, self.out_channels, self.stride = in_channels, out_channels, stride
        shape = (out_channels, in_channels, 3, 3)
        if zero_init:
            self.weight = Parameter(np.zeros(shape))
        else:
            self.weight = Parameter(rng.normal(shape) / math.sqrt(9 * in_channels))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)


class PointwiseConv(Module):
    """1x1 convolution as a matmul over the channel axis."""

    def __init__(self, in_channels: int, out_channels: int, rng: Rng):
        self.proj = Linear(in_channels, out_channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        return transpose(self.proj(transpose(x, (0, 2, 3, 1))), (0, 3, 1, 2))


def channel_norm(x: Tensor) -> Tensor:
    """Layer-normalise each pixel's channel vector of an ``(N, C, H, W)`` map."""
    return transpose(layer_norm(transpose(x, (0, 2, 3, 1))), (0, 3, 1, 2))


def to_tokens(x: Tensor) -> Tensor:
    """``(N, C, H, W)`` -> ``(N, H*W, C)``."""
    n, c, h, w = x.shape
    return transpose(x.reshape(n, c, h * w), (0, 2, 1))


def from_tokens(tokens: Tensor, height: int, width: int) -> Tensor:
    """Inverse of ``to_tokens``."""
    n, _, c = tokens.shape
    return transpose(tokens, (0, 2, 1)).reshape(n, c, height, width)


def sinusoidal_embedding(t, dim: int) -> Tensor:
    """Fixed sin/cos features of integer steps ``t`` (shape ``(N,)``) -> ``(N, dim)``."""
    steps = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = steps[:, None] * freqs[None, :]
    features = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        features = np.concatenate([features, np.zeros((len(steps), 1))], axis=1)
    return Tensor(features.astype(get_default_dtype()))


class TimeEmbedding(Module):
    """Sinusoidal features followed by a two-layer SiLU MLP."""

    def __init__(self, dim: int, rng: Rng, out_dim: Optional[int] = None):
        self.dim = dim
        self.fc1 = Linear(dim, dim, rng.fork("fc1"))
        self.fc2 = Linear(dim, out_dim or dim, rng.fork("fc2"))

    def forward(self, t) -> Tensor:
        return self.fc2(silu(self.fc1(sinusoidal_embedding(t, self.dim))))


class ResBlock(Module):
    """Pre-norm residual block: two 3x3 convolutions with an additive time projection."""

    def __init__(self, in_channels: int, out_channels: int, time_dim: int, rng: Rng):
        self.conv1 = Conv2d(in_channels, out_channels, rng.fork("conv1"))
        self.time_proj = Linear(time_dim, out_channels, rng.fork("time"))
        self.conv2 = Conv2d(out_channels, out_channels, rng.fork("conv2"))
        self.skip = PointwiseConv(in_channels, out_channels, rng.fork("skip")) if in_channels != out_channels else None

    def forward(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(silu(channel_norm(x)))
        n, c = h.shape[:2]
        h = h + self.time_proj(silu(temb)).reshape(n, c, 1, 1)
        h = self.conv2(silu(channel_norm(h)))
        return h + (self.skip(x) if self.skip is not None else x)


class FeedForward(Module):
    def __init__(self, width: int, rng: Rng, expansion: int = 2):
        self.fc1 = Linear(width, width * expansion, rng.fork("fc1"))
        self.fc2 = Linear(width * expansion, width, rng.fork("fc2"))

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(silu(self.fc1(x)))
