# File: preview_restore/tensor/__init__.py

from .tensor import (
    Tensor,
    add,
    clamp,
    concat,
    conv2d,
    get_default_dtype,
    layer_norm,
    matmul,
    mul,
    neg,
    no_grad,
    ones,
    precision,
    reshape,
    scaled_dot_product_attention,
    silu,
    slice_axis,
    softmax,
    split,
    take,
    tensor_mean,
    tensor_sum,
    transpose,
    upsample2x,
    zeros,
)
from .rng import Rng
from .optim import AdamW, OptimizerConfig, SGD, adamw_step, sgd_step
