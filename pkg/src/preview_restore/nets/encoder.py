"""Compact LQ encoder: patch tokens, self-attention, a learnable-query resampler and
time-modulated layer normalisation of the resulting context tokens."""

import numpy as np

from preview_restore.errors import ShapeError
from preview_restore.tensor import Rng, Tensor, layer_norm, silu, split, transpose, zeros
from .attention import Attention
from .layers import FeedForward, Linear, sinusoidal_embedding
from .module import Module, Parameter


def patchify(images: Tensor, patch: int) -> Tensor:
    """``(N, 1, H, W)`` -> ``(N, (H/p)*(W/p), p*p)`` in row-major patch order."""
    n, c, h, w = images.shape
    if c != 1 or h % patch or w % patch:
        raise ShapeError(f"patchify: image {images.shape} incompatible with {patch}x{patch} patches")
    grid = images.reshape(n, h // patch, patch, w // patch, patch)
    return transpose(grid, (0, 1, 3, 2, 4)).reshape(n, (h // patch) * (w // patch), patch * patch)


def ada_layer_norm(tokens: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """``scale * LayerNorm(tokens) + shift`` with (N, 1, D) modulation."""
    return layer_norm(tokens) * scale + shift


class TransformerLayer(Module):
    def __init__(self, width: int, heads: int, rng: Rng):
        self.attn = Attention(width, width, width, heads, rng.fork("attn"))
        self.ff = FeedForward(width, rng.fork("ff"))

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(x)
        return x + self.ff(layer_norm(x))


class ResamplerLayer(Module):
    """Queries attend to the (normalised) patch tokens, then a feed-forward update."""

    def __init__(self, width: int, heads: int, rng: Rng):
        self.attn = Attention(width, width, width, heads, rng.fork("attn"))
        self.ff = FeedForward(width, rng.fork("ff"))

    def forward(self, queries: Tensor, tokens: Tensor) -> Tensor:
        queries = queries + self.attn(queries, layer_norm(tokens))
        return queries + self.ff(layer_norm(queries))


class AdaLayerNorm(Module):
    """
    Time-conditioned layer norm: ``(T_scale, T_shift)`` come from an MLP over the step
    embedding. The last projection starts near zero with bias ``(1, 0)``, so a fresh head
    is close to a plain layer norm.
    """

    def __init__(self, width: int, time_dim: int, rng: Rng):
        self.width, self.time_dim = width, time_dim
        self.fc1 = Linear(time_dim, time_dim, rng.fork("fc1"))
        self.fc2 = Linear(time_dim, 2 * width, rng.fork("fc2"), scale=0.01)
        self.fc2.bias.data = np.concatenate([np.ones(width), np.zeros(width)]).astype(self.fc2.bias.dtype)

    def modulation(self, t):
        params = self.fc2(silu(self.fc1(sinusoidal_embedding(t, self.time_dim))))
        params = params.reshape(params.shape[0], 1, 2 * self.width)
        t_scale, t_shift = split(params, 2, axis=2)
        return t_scale, t_shift

    def forward(self, tokens: Tensor, t) -> Tensor:
        t_scale, t_shift = self.modulation(t)
        return ada_layer_norm(tokens, t_scale, t_shift)


class CompactEncoder(Module):
    """
    Degradation-robust LQ representation: ``M`` context tokens of width ``D`` whatever the input.

    Args:
        image_size (int): Square input extent.
        patch (int): Patch size of the tokeniser.
        width (int): Token width D.
        tokens (int): Number of context tokens M.
        layers (int): Self-attention layers over patch tokens.
        resampler_layers (int): Query cross-attention layers.
        heads (int): Attention heads.
        time_dim (int): Step-embedding width of the modulation head.
    """

    def __init__(self, image_size: int, patch: int, width: int, tokens: int, layers: int,
                 resampler_layers: int, heads: int, time_dim: int, rng: Rng):
        self.image_size, self.patch, self.width, self.tokens = image_size, patch, width, tokens
        count = (image_size // patch) ** 2
        self.embed = Linear(patch * patch, width, rng.fork("embed"))
        self.position = Parameter(rng.fork("position").normal((1, count, width)) * 0.02)
        self.layers = [TransformerLayer(width, heads, rng.fork(f"layer{i}")) for i in range(layers)]
        self.queries = Parameter(rng.fork("queries").normal((1, tokens, width)) * 0.02)
        self.resampler = [ResamplerLayer(width, heads, rng.fork(f"resampler{i}")) for i in range(resampler_layers)]
        self.norm = AdaLayerNorm(width, time_dim, rng.fork("adaln"))

    def resample(self, lq_image: Tensor) -> Tensor:
        """Resampler tokens before the time-modulated norm, shape (N, M, D)."""
        if lq_image.ndim != 4 or lq_image.shape[2:] != (self.image_size, self.image_size):
            raise ShapeError(f"CompactEncoder: expected (N, 1, {self.image_size}, {self.image_size}), "
                             f"got {lq_image.shape}")
        x = self.embed(patchify(lq_image, self.patch)) + self.position
        for layer in self.layers:
            x = layer(x)
        queries = self.queries + zeros((lq_image.shape[0], self.tokens, self.width), dtype=x.dtype)
        for layer in self.resampler:
            queries = layer(queries, x)
        return queries

    def forward(self, lq_image: Tensor, t) -> Tensor:
        return self.norm(self.resample(lq_image), t)
