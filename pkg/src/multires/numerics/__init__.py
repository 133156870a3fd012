from .gradcheck import global_grad_norm, grad_check
from .ops import (
    LAYER_NORM_EPS,
    add,
    affine,
    attention_block,
    bmm,
    constant,
    conv1d,
    cross_entropy_masked,
    dropout,
    embed_logits,
    fit_rows,
    gelu,
    group_norm,
    layer_norm,
    mask_rows,
    mean_scalar,
    pad_rows,
    repeat_rows,
    reshape,
    scale,
    skip_rows,
    slice_rows,
    softmax,
    sum_scalar,
    transpose,
    transposed_conv1d,
    weighted_sum_scalars,
)
from .tensor import Parameter, Tensor, backward, debug_checks_enabled, set_debug_checks

__all__ = [
    "LAYER_NORM_EPS",
    "Parameter",
    "Tensor",
    "add",
    "affine",
    "attention_block",
    "backward",
    "bmm",
    "constant",
    "conv1d",
    "cross_entropy_masked",
    "debug_checks_enabled",
    "dropout",
    "embed_logits",
    "fit_rows",
    "gelu",
    "global_grad_norm",
    "grad_check",
    "group_norm",
    "layer_norm",
    "mask_rows",
    "mean_scalar",
    "pad_rows",
    "repeat_rows",
    "reshape",
    "scale",
    "set_debug_checks",
    "skip_rows",
    "slice_rows",
    "softmax",
    "sum_scalar",
    "transpose",
    "transposed_conv1d",
    "weighted_sum_scalars",
]
