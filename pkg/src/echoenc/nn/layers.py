"""Transformer building blocks expressed over the autodiff ops."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .params import ParamStore, trunc_normal
from .tensor import Tensor, add, attention_core, gelu, layer_norm, linear, reshape

LN_EPS = 1e-5


def multi_head_attention(x, params, heads: int, prefix: str = "attn") -> Tensor:
    """Pre-projected MHA: qkv projection, per-head softmax attention, output projection.

    Accepts (n, d) or (B, n, d).
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    d = x.shape[-1]
    if d % heads:
        raise ConfigError(f"embed dim {d} is not divisible by {heads} heads")
    qkv = linear(x, params[f"{prefix}.qkv.weight"], params[f"{prefix}.qkv.bias"])
    o = attention_core(qkv, heads)
    out = linear(o, params[f"{prefix}.proj.weight"], params[f"{prefix}.proj.bias"])
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def mlp(x, params, prefix: str = "mlp") -> Tensor:
    h = gelu(linear(x, params[f"{prefix}.fc1.weight"], params[f"{prefix}.fc1.bias"]))
    return linear(h, params[f"{prefix}.fc2.weight"], params[f"{prefix}.fc2.bias"])


def transformer_block(x, params, heads: int, prefix: str = "") -> Tensor:
    """Pre-norm block: x + MHA(LN(x)), then x + MLP(LN(x))."""
    p = prefix
    h = layer_norm(x, params[f"{p}ln1.gain"], params[f"{p}ln1.bias"], LN_EPS)
    x = add(x, multi_head_attention(h, params, heads, prefix=f"{p}attn"))
    h = layer_norm(x, params[f"{p}ln2.gain"], params[f"{p}ln2.bias"], LN_EPS)
    return add(x, mlp(h, params, prefix=f"{p}mlp"))


def block_param_shapes(d: int, mlp_ratio: int = 4) -> dict:
    hidden = d * mlp_ratio
    return {
        "ln1.gain": (d,),
        "ln1.bias": (d,),
        "attn.qkv.weight": (d, 3 * d),
        "attn.qkv.bias": (3 * d,),
        "attn.proj.weight": (d, d),
        "attn.proj.bias": (d,),
        "ln2.gain": (d,),
        "ln2.bias": (d,),
        "mlp.fc1.weight": (d, hidden),
        "mlp.fc1.bias": (hidden,),
        "mlp.fc2.weight": (hidden, d),
        "mlp.fc2.bias": (d,),
    }


def init_block(rng: np.random.Generator, d: int, mlp_ratio: int = 4, prefix: str = "") -> dict:
    out = {}
    for name, shape in block_param_shapes(d, mlp_ratio).items():
        if name.endswith(".gain"):
            arr = np.ones(shape)
        elif name.endswith(".weight"):
            arr = trunc_normal(rng, shape)
        else:
            arr = np.zeros(shape)
        out[prefix + name] = arr
    return out


def make_block_params(rng, d, mlp_ratio=4) -> ParamStore:
    return ParamStore(init_block(rng, d, mlp_ratio))
