"""Minimal dense-tensor engine: reverse-mode autodiff plus AdamW, CPU only."""

from sptk.numcore.tensor import (
    Tensor,
    add,
    backward,
    binary_cross_entropy,
    concat,
    cross_entropy,
    default_dtype,
    dropout,
    embedding_lookup,
    gather_rows,
    gelu,
    get_default_dtype,
    layer_norm,
    matmul,
    mean,
    mse,
    mul,
    reshape,
    scale,
    set_debug_finite,
    sigmoid,
    softmax,
    sub,
    tsum,
    transpose,
)
from sptk.numcore.optim import (
    LRSchedule,
    OptimizerState,
    adamw_step,
    clip_global_norm,
    init_optimizer_state,
    lr_at_step,
)

__all__ = [
    "Tensor",
    "add",
    "backward",
    "binary_cross_entropy",
    "concat",
    "cross_entropy",
    "default_dtype",
    "dropout",
    "embedding_lookup",
    "gather_rows",
    "gelu",
    "get_default_dtype",
    "layer_norm",
    "matmul",
    "mean",
    "mse",
    "mul",
    "reshape",
    "scale",
    "set_debug_finite",
    "sigmoid",
    "softmax",
    "sub",
    "tsum",
    "transpose",
    "LRSchedule",
    "OptimizerState",
    "adamw_step",
    "clip_global_norm",
    "init_optimizer_state",
    "lr_at_step",
]
