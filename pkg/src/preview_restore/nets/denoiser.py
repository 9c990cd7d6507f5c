"""The epsilon-predicting UNet denoiser and its class-token embedding."""

from typing import Optional, Sequence

import numpy as np

from preview_restore.errors import ShapeError
from preview_restore.tensor import Rng, Tensor, concat, silu, take, upsample2x
from .attention import DualCrossAttnBlock
from .layers import Conv2d, ResBlock, TimeEmbedding, channel_norm
from .module import Module, Parameter

LEVELS = 3


class ClassEmbedding(Module):
    """Learned token sequence per class; row ``num_classes`` is the null (dropped) class."""

    def __init__(self, num_classes: int, tokens: int, width: int, rng: Rng):
        self.num_classes = num_classes
        self.table = Parameter(rng.normal((num_classes + 1, tokens, width)) * 0.02)

    @property
    def null_id(self) -> int:
        return self.num_classes

    def forward(self, class_ids) -> Tensor:
        ids = np.asarray(class_ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() > self.num_classes):
            raise ShapeError(f"ClassEmbedding: class ids must lie in [0, {self.num_classes}], got {ids.tolist()}")
        return take(self.table, ids)


def inject_residual(features: Tensor, residual: Optional[Tensor], delta) -> Tensor:
    """``features + delta * residual``; a zero gate (scalar or every sample) adds nothing."""
    if residual is None:
        return features
    if residual.shape != features.shape:
        raise ShapeError(f"Residual {residual.shape} does not match decoder features {features.shape}")
    if np.ndim(delta) == 0:
        if float(delta) == 0.0:
            return features
        return features + residual * float(delta)
    gate = np.asarray(delta, dtype=np.float64).reshape(-1)
    if gate.shape[0] != features.shape[0]:
        raise ShapeError(f"Per-sample delta of length {gate.shape[0]} for a batch of {features.shape[0]}")
    if not gate.any():
        return features
    return features + residual * Tensor(gate.reshape(-1, 1, 1, 1), dtype=features.dtype)


class DenoiserNet(Module):
    """
    Three-level UNet (extents S, S/2, S/4 with widths C, 2C, 4C) predicting epsilon.

    Every level carries a ``DualCrossAttnBlock`` on both paths; decoder levels take the
    mirrored encoder features (the skip) plus the gated aggregator residual.
    """

    def __init__(self, image_size: int, channels: int, time_dim: int, num_classes: int, class_tokens: int,
                 context_width: int, heads: int, self_attn_levels: Sequence[int], lq_weights: Sequence[float],
                 rng: Rng):
        self.image_size = image_size
        self.widths = [channels, 2 * channels, 4 * channels]
        attn_levels = set(self_attn_levels)
        self.time_embed = TimeEmbedding(time_dim, rng.fork("time"))
        self.class_embed = ClassEmbedding(num_classes, class_tokens, context_width, rng.fork("class"))
        self.conv_in = Conv2d(1, channels, rng.fork("conv_in"))

        inputs = [channels] + self.widths[:-1]
        self.enc_blocks = [ResBlock(inputs[l], self.widths[l], time_dim, rng.fork(f"enc{l}")) for l in range(LEVELS)]
        self.enc_attn = [DualCrossAttnBlock(self.widths[l], context_width, heads, rng.fork(f"enc_attn{l}"),
                                            lq_weight=lq_weights[l], self_attn=l in attn_levels)
                         for l in range(LEVELS)]
        self.downs = [Conv2d(self.widths[l], self.widths[l], rng.fork(f"down{l}"), stride=2)
                      for l in range(LEVELS - 1)]
        self.mid = ResBlock(self.widths[-1], self.widths[-1], time_dim, rng.fork("mid"))
        self.dec_blocks = [ResBlock(2 * self.widths[l], self.widths[l], time_dim, rng.fork(f"dec{l}"))
                           for l in range(LEVELS)]
        self.dec_attn = [DualCrossAttnBlock(self.widths[l], context_width, heads, rng.fork(f"dec_attn{l}"),
                                            lq_weight=lq_weights[l], self_attn=l in attn_levels)
                         for l in range(LEVELS)]
        self.ups = [Conv2d(self.widths[l + 1], self.widths[l], rng.fork(f"up{l}")) for l in range(LEVELS - 1)]
        self.conv_out = Conv2d(channels, 1, rng.fork("conv_out"))

    @property
    def null_class(self) -> int:
        return self.class_embed.null_id

    def level_shapes(self, batch: int):
        """Shapes the aggregator residuals must have, one per level."""
        return [(batch, width, self.image_size >> l, self.image_size >> l) for l, width in enumerate(self.widths)]

    def forward(self, z_t: Tensor, t, class_id, c_lq: Optional[Tensor] = None,
                residuals: Optional[Sequence[Tensor]] = None, delta=1.0) -> Tensor:
        n = z_t.shape[0]
        if z_t.ndim != 4 or z_t.shape[1:] != (1, self.image_size, self.image_size):
            raise ShapeError(f"DenoiserNet: expected (N, 1, {self.image_size}, {self.image_size}), got {z_t.shape}")
        if residuals is not None and len(residuals) != LEVELS:
            raise ShapeError(f"DenoiserNet: expected {LEVELS} residuals, got {len(residuals)}")
        steps = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        temb = self.time_embed(steps)
        c_txt = self.class_embed(np.broadcast_to(np.asarray(class_id, dtype=np.int64), (n,)))

        h = self.conv_in(z_t)
        skips = []
        for level in range(LEVELS):
            h = self.enc_attn[level](self.enc_blocks[level](h, temb), c_txt, c_lq)
            skips.append(h)
            if level < LEVELS - 1:
                h = self.downs[level](h)
        h = self.mid(h, temb)
        for level in reversed(range(LEVELS)):
            skip = inject_residual(skips[level], residuals[level] if residuals is not None else None, delta)
            h = self.dec_blocks[level](concat([h, skip], axis=1), temb)
            h = self.dec_attn[level](h, c_txt, c_lq)
            if level > 0:
                h = self.ups[level - 1](upsample2x(h))
        return self.conv_out(silu(channel_norm(h)))
