from .gradcheck import GradCheckResult, check_gradients
from .layers import mlp, multi_head_attention, transformer_block
from .params import ParamStore, trunc_normal
from .tensor import (
    Tensor,
    add,
    attention_core,
    backward,
    concat,
    gelu,
    layer_norm,
    linear,
    mean,
    softmax,
    square,
    total,
)

__all__ = [
    "GradCheckResult",
    "ParamStore",
    "Tensor",
    "add",
    "attention_core",
    "backward",
    "check_gradients",
    "concat",
    "gelu",
    "layer_norm",
    "linear",
    "mean",
    "mlp",
    "multi_head_attention",
    "softmax",
    "square",
    "total",
    "transformer_block",
    "trunc_normal",
]
