"""Multi-head attention and the dual cross-attention conditioning block."""

from typing import Optional

from preview_restore.errors import ShapeError
from preview_restore.tensor import Rng, Tensor, layer_norm, scaled_dot_product_attention, transpose
from .layers import Linear, from_tokens, to_tokens
from .module import Module


class Attention(Module):
    """
    Bias-free multi-head attention of ``x`` (N, L, query_dim) over ``context`` (N, S, context_dim).

    With ``norm_query`` the query stream is layer-normalised before projection;
    a zero value projection therefore yields an exactly zero output.
    """

    def __init__(self, query_dim: int, context_dim: int, width: int, heads: int, rng: Rng,
                 norm_query: bool = True):
        if width % heads:
            raise ShapeError(f"Attention: width {width} not divisible by {heads} heads")
        self.heads = heads
        self.norm_query = norm_query
        self.to_q = Linear(query_dim, width, rng.fork("q"), bias=False)
        self.to_k = Linear(context_dim, width, rng.fork("k"), bias=False)
        self.to_v = Linear(context_dim, width, rng.fork("v"), bias=False)
        self.to_out = Linear(width, query_dim, rng.fork("out"), bias=False)

    def _split_heads(self, x: Tensor) -> Tensor:
        n, length, width = x.shape
        return transpose(x.reshape(n, length, self.heads, width // self.heads), (0, 2, 1, 3))

    def forward(self, x: Tensor, context: Optional[Tensor] = None) -> Tensor:
        query = layer_norm(x) if self.norm_query else x
        context = query if context is None else context
        if context.ndim != 3 or context.shape[0] != x.shape[0]:
            raise ShapeError(f"Attention: context {context.shape} does not match queries {x.shape}")
        q = self._split_heads(self.to_q(query))
        k = self._split_heads(self.to_k(context))
        v = self._split_heads(self.to_v(context))
        out = scaled_dot_product_attention(q, k, v)
        n, _, length, head_width = out.shape
        return self.to_out(transpose(out, (0, 2, 1, 3)).reshape(n, length, self.heads * head_width))


def dual_cross_attn(f_in: Tensor, c_txt: Optional[Tensor], c_lq: Optional[Tensor], w_l: float,
                    txt_attn: Optional[Attention], lq_attn: Optional[Attention]) -> Tensor:
    """
    ``f_in + CrossAttn(f_in, c_txt) + w_l * CrossAttn(f_in, c_lq)`` on tokens (N, L, C).

    A branch whose context or attention is absent, or the LQ branch with ``w_l == 0``, is skipped.
    """
    f_out = f_in
    if txt_attn is not None and c_txt is not None:
        f_out = f_out + txt_attn(f_in, c_txt)
    if lq_attn is not None and c_lq is not None and w_l != 0.0:
        lq_term = lq_attn(f_in, c_lq)
        f_out = f_out + (lq_term if w_l == 1.0 else lq_term * float(w_l))
    return f_out


class DualCrossAttnBlock(Module):
    """
    Optional self-attention over spatial tokens, then class and LQ cross-attention.

    Operates on (N, C, H, W) maps; ``class_branch=False`` / ``lq_branch=False`` build a
    block without that cross-attention.
    """

    def __init__(self, channels: int, context_width: int, heads: int, rng: Rng, lq_weight: float = 1.0,
                 self_attn: bool = True, class_branch: bool = True, lq_branch: bool = True):
        self.lq_weight = float(lq_weight)
        self.self_attn = Attention(channels, channels, channels, heads, rng.fork("self")) if self_attn else None
        self.txt_attn = Attention(channels, context_width, channels, heads, rng.fork("txt")) if class_branch else None
        self.lq_attn = Attention(channels, context_width, channels, heads, rng.fork("lq")) if lq_branch else None

    def attend_tokens(self, tokens: Tensor, c_txt: Optional[Tensor] = None, c_lq: Optional[Tensor] = None) -> Tensor:
        if self.self_attn is not None:
            tokens = tokens + self.self_attn(tokens)
        return dual_cross_attn(tokens, c_txt, c_lq, self.lq_weight, self.txt_attn, self.lq_attn)

    def forward(self, h: Tensor, c_txt: Optional[Tensor] = None, c_lq: Optional[Tensor] = None) -> Tensor:
        if self.self_attn is None and self.txt_attn is None and self.lq_attn is None:
            return h
        _, _, height, width = h.shape
        return from_tokens(self.attend_tokens(to_tokens(h), c_txt, c_lq), height, width)
