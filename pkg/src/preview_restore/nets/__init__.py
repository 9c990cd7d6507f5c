# File: preview_restore/nets/__init__.py

from .module import Module, Parameter
from .layers import Conv2d, FeedForward, Linear, PointwiseConv, ResBlock, TimeEmbedding, sinusoidal_embedding
from .attention import Attention, DualCrossAttnBlock, dual_cross_attn
from .adapter import (
    LowRankAdapter,
    adapter_parameters,
    adapter_scope,
    adapter_toggle,
    adapters_enabled,
    adapters_of,
    attach_adapters,
    detach_adapters,
)
from .encoder import AdaLayerNorm, CompactEncoder, ada_layer_norm, patchify
from .denoiser import LEVELS, ClassEmbedding, DenoiserNet, inject_residual
