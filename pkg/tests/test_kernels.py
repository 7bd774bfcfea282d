import numpy as np
import pytest

from echoenc import _kernels as K

pytestmark = pytest.mark.skipif(not K.NUMBA_ENABLED, reason="numba backend disabled")

NAMES = ["layer_norm_fwd", "layer_norm_bwd", "gelu_fwd", "gelu_bwd", "softmax_rows", "softmax_rows_bwd",
         "pairwise_sqdist"]


def _args(name, rng):
    x = rng.standard_normal((7, 5)) * 3
    g, b = rng.standard_normal(5), rng.standard_normal(5)
    if name == "layer_norm_fwd":
        return x, g, b, 1e-5
    if name == "layer_norm_bwd":
        _, xhat, rstd = K.layer_norm_fwd_np(x, g, b, 1e-5)
        return rng.standard_normal(x.shape), xhat, rstd, g
    if name in ("gelu_fwd", "softmax_rows"):
        return (x,)
    if name == "gelu_bwd":
        return rng.standard_normal(x.shape), x
    if name == "softmax_rows_bwd":
        return rng.standard_normal(x.shape), K.softmax_rows_np(x)
    return rng.standard_normal((4, 5)), rng.standard_normal((6, 5))


@pytest.mark.parametrize("name", NAMES)
def test_numba_matches_numpy(name, rng):
    for _ in range(5):
        args = _args(name, rng)
        a = getattr(K, f"{name}_np")(*args)
        b = getattr(K, f"{name}_nb")(*args)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-12)


def test_softmax_extreme_logits():
    s = np.array([[1000.0, 0.0, -1000.0]])
    np.testing.assert_allclose(K.softmax_rows(s), [[1.0, 0.0, 0.0]])


def test_backend_label():
    assert K.backend() == "numba"
