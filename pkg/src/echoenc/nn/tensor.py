"""A small reverse-mode autodiff over numpy arrays.

Each op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. Graphs are only recorded
when at least one input requires a gradient, so teacher/inference passes run
with no bookkeeping.
"""

from __future__ import annotations

import math

import numpy as np

from .. import _kernels as K
from ..errors import ConfigError, UsageError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data, parents, backward_fn):
    out = Tensor(out_data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise and structural ops
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def total(a) -> Tensor:
    a = as_tensor(a)
    return _record(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _record(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _record(a.data[idx], (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    return _record(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(ts)):
            sl[axis] = slice(bounds[i], bounds[i + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _record(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` is true, else ``b`` (with broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def bw(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape), _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _record(out, (a, b), bw)


# --------------------------------------------------------------------------
# fused layers
# --------------------------------------------------------------------------


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis; ``w`` is (in, out)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ConfigError(f"linear: input dim {x.shape[-1]} does not match weight {w.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ConfigError(f"linear: bias shape {b.shape} does not match weight {w.shape}")
    x2 = x.data.reshape(-1, w.shape[0])
    y = x2 @ w.data
    if b is not None:
        y = y + b.data
    y = y.reshape(x.shape[:-1] + (w.shape[1],))
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    return _record(y, parents, bw)


def layer_norm(x, gain, bias, eps=1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ConfigError(f"layer_norm: gain/bias must have shape ({d},)")
    y, xhat, rstd = K.layer_norm_fwd(x.data.reshape(-1, d), gain.data, bias.data, eps)

    def bw(g):
        dx, dgain, dbias = K.layer_norm_bwd(g.reshape(-1, d), xhat, rstd, gain.data)
        return dx.reshape(x.shape), dgain, dbias

    return _record(y.reshape(x.shape), (x, gain, bias), bw)


def gelu(x) -> Tensor:
    """Exact (erf) GELU."""
    x = as_tensor(x)
    d = x.shape[-1]
    x2 = x.data.reshape(-1, d)
    return _record(
        K.gelu_fwd(x2).reshape(x.shape),
        (x,),
        lambda g: (K.gelu_bwd(g.reshape(-1, d), x2).reshape(x.shape),),
    )


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    n = x.shape[-1]
    p = K.softmax_rows(x.data.reshape(-1, n))
    return _record(
        p.reshape(x.shape),
        (x,),
        lambda g: (K.softmax_rows_bwd(g.reshape(-1, n), p).reshape(x.shape),),
    )


def attention_core(qkv, heads: int) -> Tensor:
    """Scaled dot-product self-attention from packed projections.

    ``qkv`` is (B, n, 3d) holding [q | k | v]; returns (B, n, d) with heads
    concatenated along the feature axis. No causal mask.
    """
    qkv = as_tensor(qkv)
    B, n, d3 = qkv.shape
    d = d3 // 3
    if d3 != 3 * d or d % heads:
        raise ConfigError(f"attention: width {d} not divisible by {heads} heads")
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    t = qkv.data.reshape(B, n, 3, heads, dh).transpose(2, 0, 3, 1, 4)  # (3, B, h, n, dh)
    q, k, v = t[0], t[1], t[2]
    s = (q @ k.transpose(0, 1, 3, 2)) * scale
    a = K.softmax_rows(s.reshape(-1, n)).reshape(B, heads, n, n)
    o = a @ v  # (B, h, n, dh)
    out = o.transpose(0, 2, 1, 3).reshape(B, n, d)

    def bw(g):
        go = g.reshape(B, n, heads, dh).transpose(0, 2, 1, 3)
        ga = go @ v.transpose(0, 1, 3, 2)
        gv = a.transpose(0, 1, 3, 2) @ go
        gs = K.softmax_rows_bwd(ga.reshape(-1, n), a.reshape(-1, n)).reshape(B, heads, n, n) * scale
        gq = gs @ k
        gk = gs.transpose(0, 1, 3, 2) @ q
        gt = np.stack([gq, gk, gv])  # (3, B, h, n, dh)
        return (gt.transpose(1, 3, 0, 2, 4).reshape(B, n, d3),)

    return _record(out, (qkv,), bw)


# --------------------------------------------------------------------------
# backward pass
# --------------------------------------------------------------------------


def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None):
    """Reverse-mode sweep from a scalar loss.

    Leaf gradients are accumulated into ``.grad``. With a ParamStore (or any
    ``name -> Tensor`` mapping) the gradients are also returned in its
    iteration order; parameters the loss does not depend on get zeros.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward() expects a Tensor")
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._backward is None:
        raise UsageError("loss has no recorded forward computation (no input requires grad)")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    return {name: (t.grad if t.grad is not None else np.zeros(t.shape)) for name, t in params.items()}
