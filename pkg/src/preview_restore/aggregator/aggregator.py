"""Preview/LQ fusion network producing the decoder residuals."""

import copy
from typing import Callable, List, Tuple

import numpy as np

from preview_restore.diffusion import NoiseSchedule, noise_to
from preview_restore.errors import ShapeError
from preview_restore.nets.adapter import detach_adapters
from preview_restore.nets.denoiser import LEVELS, DenoiserNet
from preview_restore.nets.layers import Conv2d
from preview_restore.nets.module import Module
from preview_restore.tensor import Rng, Tensor, concat, silu, split


def spatial_concat(preview: Tensor, lq: Tensor) -> Tensor:
    """Stack ``preview`` above ``lq`` along the height axis: (N, C, H, W) x2 -> (N, C, 2H, W)."""
    if preview.shape != lq.shape:
        raise ShapeError(f"spatial_concat: preview {preview.shape} vs lq {lq.shape}")
    return concat([preview, lq], axis=2)


def spatial_split(joint: Tensor) -> Tuple[Tensor, Tensor]:
    """Exact inverse of ``spatial_concat``: (top, bottom) halves of the height axis."""
    if joint.shape[2] % 2:
        raise ShapeError(f"spatial_split: odd height {joint.shape[2]}")
    top, bottom = split(joint, 2, axis=2)
    return top, bottom


def _halves_to_batch(joint: Tensor) -> Tensor:
    top, bottom = spatial_split(joint)
    return concat([top, bottom], axis=0)


def _batch_to_halves(stacked: Tensor) -> Tensor:
    top, bottom = split(stacked, 2, axis=0)
    return spatial_concat(top, bottom)


def sft_fuse(h_p: Tensor, h_o: Tensor, sft_head: Callable[[Tensor], Tuple[Tensor, Tensor]]) -> Tensor:
    """``(1 + alpha) * h_p + beta`` with ``(alpha, beta) = sft_head(h_o)``."""
    alpha, beta = sft_head(h_o)
    if alpha.shape != h_p.shape or beta.shape != h_p.shape:
        raise ShapeError(f"sft_fuse: alpha {alpha.shape} / beta {beta.shape} vs features {h_p.shape}")
    return h_p * (alpha + 1.0) + beta


class SFTHead(Module):
    """Per-pixel, per-channel (alpha, beta) maps predicted from the LQ stream."""

    def __init__(self, channels: int, rng: Rng):
        self.conv1 = Conv2d(channels, channels, rng.fork("conv1"))
        self.conv2 = Conv2d(channels, 2 * channels, rng.fork("conv2"))

    def forward(self, h_o: Tensor) -> Tuple[Tensor, Tensor]:
        alpha, beta = split(self.conv2(silu(self.conv1(h_o))), 2, axis=1)
        return alpha, beta


class AggregatorNet(Module):
    """
    Trainable copy of the denoiser's compression path without cross-attention.

    The preview and LQ image run through the copied convolutions as two halves of one
    spatially concatenated map; self-attention (where the denoiser has it) sees the
    whole map. After each level the halves are fused by SFT and projected by a
    zero-initialised convolution, so a fresh aggregator emits exactly zero residuals.
    """

    def __init__(self, denoiser: DenoiserNet, rng: Rng):
        self.image_size = denoiser.image_size
        self.widths = list(denoiser.widths)
        self.time_embed = copy.deepcopy(denoiser.time_embed)
        self.conv_in = copy.deepcopy(denoiser.conv_in)
        self.enc_blocks = copy.deepcopy(denoiser.enc_blocks)
        self.enc_attn = copy.deepcopy(denoiser.enc_attn)
        for block in self.enc_attn:
            block.txt_attn = None
            block.lq_attn = None
        self.downs = copy.deepcopy(denoiser.downs)
        self.sft_heads = [SFTHead(width, rng.fork(f"sft{l}")) for l, width in enumerate(self.widths)]
        self.out_projs = [Conv2d(width, width, rng, zero_init=True) for width in self.widths]
        detach_adapters(self)
        self.unfreeze()
        self.zero_grad()

    def encode_levels(self, preview: Tensor, lq: Tensor, t) -> List[Tuple[Tensor, Tensor]]:
        """Per-level ``(h_p, h_o)`` feature pairs carved from the joint map."""
        joint = spatial_concat(preview, lq)
        n = joint.shape[0]
        steps = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        temb = self.time_embed(np.concatenate([steps, steps]))
        h = self.conv_in(_halves_to_batch(joint))
        levels = []
        for level in range(LEVELS):
            joint_h = self.enc_attn[level](_batch_to_halves(self.enc_blocks[level](h, temb)))
            levels.append(spatial_split(joint_h))
            h = _halves_to_batch(joint_h)
            if level < LEVELS - 1:
                h = self.downs[level](h)
        return levels

    def forward(self, preview: Tensor, lq: Tensor, t) -> List[Tensor]:
        """One residual per decoder level, shaped like the denoiser's skip features."""
        return [proj(sft_fuse(h_p, h_o, head))
                for (h_p, h_o), head, proj in zip(self.encode_levels(preview, lq, t), self.sft_heads, self.out_projs)]


def aggregate(aggregator: AggregatorNet, preview: Tensor, lq: Tensor, t) -> List[Tensor]:
    return aggregator(preview, lq, t)


def noisy_preview_variant(preview: Tensor, t, schedule: NoiseSchedule, rng: Rng) -> Tensor:
    """Re-noise the preview to step ``t``: ``alpha_t * preview + beta_t * eps``."""
    eps = Tensor(rng.normal(preview.shape, dtype=preview.dtype), dtype=preview.dtype)
    return noise_to(preview, eps, t, schedule)
