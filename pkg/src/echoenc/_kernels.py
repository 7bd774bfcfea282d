"""Hot row-wise kernels with a numba path and a pure-numpy fallback.

Set ``ECHOENC_NUMBA=0`` before import to force the numpy implementations.
Both paths operate on C-contiguous float64 2-D arrays (rows, features);
callers reshape higher-rank tensors before dispatch.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import erf as _erf

SQRT1_2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _numba_requested() -> bool:
    return os.environ.get("ECHOENC_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


# --------------------------------------------------------------------------
# numpy reference implementations
# --------------------------------------------------------------------------


def layer_norm_fwd_np(x, gain, bias, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def layer_norm_bwd_np(dy, xhat, rstd, gain):
    dxhat = dy * gain
    n = xhat.shape[1]
    a = dxhat.sum(axis=1, keepdims=True) / n
    b = (dxhat * xhat).sum(axis=1, keepdims=True) / n
    dx = (dxhat - a - xhat * b) * rstd[:, None]
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def gelu_fwd_np(x):
    return 0.5 * x * (1.0 + _erf(x * SQRT1_2))


def gelu_bwd_np(dy, x):
    cdf = 0.5 * (1.0 + _erf(x * SQRT1_2))
    pdf = np.exp(-0.5 * x * x) * INV_SQRT_2PI
    return dy * (cdf + x * pdf)


def softmax_rows_np(s):
    z = s - s.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd_np(dp, p):
    return p * (dp - (dp * p).sum(axis=1, keepdims=True))


def pairwise_sqdist_np(a, b):
    # direct differences rather than the |a|^2 - 2ab + |b|^2 expansion:
    # exact zeros for identical rows, no cancellation
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


# --------------------------------------------------------------------------
# numba implementations
# --------------------------------------------------------------------------

_NUMBA_AVAILABLE = False
if _numba_requested():
    try:
        from numba import njit

        _NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _NUMBA_AVAILABLE = False

if _NUMBA_AVAILABLE:

    @njit(cache=True)
    def layer_norm_fwd_nb(x, gain, bias, eps):
        rows, n = x.shape
        out = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(rows)
        for r in range(rows):
            mu = 0.0
            for j in range(n):
                mu += x[r, j]
            mu /= n
            var = 0.0
            for j in range(n):
                c = x[r, j] - mu
                var += c * c
            var /= n
            s = 1.0 / math.sqrt(var + eps)
            rstd[r] = s
            for j in range(n):
                h = (x[r, j] - mu) * s
                xhat[r, j] = h
                out[r, j] = h * gain[j] + bias[j]
        return out, xhat, rstd

    @njit(cache=True)
    def layer_norm_bwd_nb(dy, xhat, rstd, gain):
        rows, n = dy.shape
        dx = np.empty_like(dy)
        dgain = np.zeros(n)
        dbias = np.zeros(n)
        for r in range(rows):
            a = 0.0
            b = 0.0
            for j in range(n):
                g = dy[r, j] * gain[j]
                a += g
                b += g * xhat[r, j]
                dgain[j] += dy[r, j] * xhat[r, j]
                dbias[j] += dy[r, j]
            a /= n
            b /= n
            for j in range(n):
                dx[r, j] = (dy[r, j] * gain[j] - a - xhat[r, j] * b) * rstd[r]
        return dx, dgain, dbias

    @njit(cache=True)
    def gelu_fwd_nb(x):
        rows, n = x.shape
        out = np.empty_like(x)
        for r in range(rows):
            for j in range(n):
                v = x[r, j]
                out[r, j] = 0.5 * v * (1.0 + math.erf(v * SQRT1_2))
        return out

    @njit(cache=True)
    def gelu_bwd_nb(dy, x):
        rows, n = x.shape
        out = np.empty_like(x)
        for r in range(rows):
            for j in range(n):
                v = x[r, j]
                cdf = 0.5 * (1.0 + math.erf(v * SQRT1_2))
                pdf = math.exp(-0.5 * v * v) * INV_SQRT_2PI
                out[r, j] = dy[r, j] * (cdf + v * pdf)
        return out

    @njit(cache=True)
    def softmax_rows_nb(s):
        rows, n = s.shape
        out = np.empty_like(s)
        for r in range(rows):
            m = s[r, 0]
            for j in range(1, n):
                if s[r, j] > m:
                    m = s[r, j]
            tot = 0.0
            for j in range(n):
                e = math.exp(s[r, j] - m)
                out[r, j] = e
                tot += e
            for j in range(n):
                out[r, j] /= tot
        return out

    @njit(cache=True)
    def softmax_rows_bwd_nb(dp, p):
        rows, n = p.shape
        out = np.empty_like(p)
        for r in range(rows):
            dot = 0.0
            for j in range(n):
                dot += dp[r, j] * p[r, j]
            for j in range(n):
                out[r, j] = p[r, j] * (dp[r, j] - dot)
        return out

    @njit(cache=True)
    def pairwise_sqdist_nb(a, b):
        na, e = a.shape
        nb = b.shape[0]
        out = np.empty((na, nb))
        for i in range(na):
            for j in range(nb):
                acc = 0.0
                for k in range(e):
                    d = a[i, k] - b[j, k]
                    acc += d * d
                out[i, j] = acc
        return out


NUMBA_ENABLED = _NUMBA_AVAILABLE


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if NUMBA_ENABLED:
    _impl = {
        "layer_norm_fwd": layer_norm_fwd_nb,
        "layer_norm_bwd": layer_norm_bwd_nb,
        "gelu_fwd": gelu_fwd_nb,
        "gelu_bwd": gelu_bwd_nb,
        "softmax_rows": softmax_rows_nb,
        "softmax_rows_bwd": softmax_rows_bwd_nb,
        "pairwise_sqdist": pairwise_sqdist_nb,
    }
else:
    _impl = {
        "layer_norm_fwd": layer_norm_fwd_np,
        "layer_norm_bwd": layer_norm_bwd_np,
        "gelu_fwd": gelu_fwd_np,
        "gelu_bwd": gelu_bwd_np,
        "softmax_rows": softmax_rows_np,
        "softmax_rows_bwd": softmax_rows_bwd_np,
        "pairwise_sqdist": pairwise_sqdist_np,
    }


def backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def layer_norm_fwd(x, gain, bias, eps):
    return _impl["layer_norm_fwd"](_c64(x), _c64(gain), _c64(bias), float(eps))


def layer_norm_bwd(dy, xhat, rstd, gain):
    return _impl["layer_norm_bwd"](_c64(dy), _c64(xhat), _c64(rstd), _c64(gain))


def gelu_fwd(x):
    return _impl["gelu_fwd"](_c64(x))


def gelu_bwd(dy, x):
    return _impl["gelu_bwd"](_c64(dy), _c64(x))


def softmax_rows(s):
    return _impl["softmax_rows"](_c64(s))


def softmax_rows_bwd(dp, p):
    return _impl["softmax_rows_bwd"](_c64(dp), _c64(p))


def pairwise_sqdist(a, b):
    return _impl["pairwise_sqdist"](_c64(a), _c64(b))
