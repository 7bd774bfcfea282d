"""Time the numba kernels against their numpy fallbacks, plus one encoder forward pass.

Usage: python benchmarks/bench_kernels.py [--repeat N]

The kernel table calls both implementations directly. The encoder line is
measured in two subprocesses, one per ECHOENC_NUMBA setting, because the
backend is chosen at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from echoenc import _kernels as K

ENCODER_SNIPPET = """
import time, numpy as np
from echoenc import EchoConfig, init_params, encode_signal
from echoenc.dsp import Waveform
from echoenc._kernels import backend
cfg = EchoConfig.from_variant("toy")
p = init_params(cfg, 0)
w = Waveform(np.random.default_rng(0).standard_normal(16000 * 2), 16000)
encode_signal(w, p, cfg)
t = time.perf_counter()
for _ in range({n}):
    encode_signal(w, p, cfg)
print(backend(), (time.perf_counter() - t) / {n})
"""


def cases(rng):
    x = rng.standard_normal((2048, 64))
    g, b = rng.standard_normal(64), rng.standard_normal(64)
    s = rng.standard_normal((4096, 48))
    a, q = rng.standard_normal((200, 384)), rng.standard_normal((60, 384))
    _, xhat, rstd = K.layer_norm_fwd_np(x, g, b, 1e-5)
    p = K.softmax_rows_np(s)
    return {
        "layer_norm_fwd": ((x, g, b, 1e-5), {}),
        "layer_norm_bwd": ((x, xhat, rstd, g), {}),
        "gelu_fwd": ((x,), {}),
        "gelu_bwd": ((x, x), {}),
        "softmax_rows": ((s,), {}),
        "softmax_rows_bwd": ((s, p), {}),
        "pairwise_sqdist": ((q, a), {}),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, (call_args, _) in cases(rng).items():
        np_fn = getattr(K, f"{name}_np")
        t_np = min(timeit.repeat(lambda: np_fn(*call_args), number=args.repeat, repeat=3)) / args.repeat
        if K.NUMBA_ENABLED:
            nb_fn = getattr(K, f"{name}_nb")
            nb_fn(*call_args)  # compile outside the timed region
            t_nb = min(timeit.repeat(lambda: nb_fn(*call_args), number=args.repeat, repeat=3)) / args.repeat
            print(f"{name:<18} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>7.2f}x")
        else:
            print(f"{name:<18} {t_np * 1e3:>10.3f} {'n/a':>10}")
    print()
    for flag in ("0", "1"):
        env = dict(os.environ, ECHOENC_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", ENCODER_SNIPPET.format(n=5)], env=env,
                             capture_output=True, text=True, check=True).stdout.split()
        print(f"toy encoder, 2 s @ 16 kHz, {out[0]:>5}: {float(out[1]) * 1e3:8.2f} ms / signal")


if __name__ == "__main__":
    main()
