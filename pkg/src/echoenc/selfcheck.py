"""Built-in verification suite: analytic gradients, PE consistency, STFT and geometry oracles."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .bandsplit import BandSplitConfig, center_frequency, frequency_pe, normalized_position, split_bands
from .dsp import StftConfig, Waveform, frame_count, stft_magnitude
from .encoder import EchoConfig, forward, init_params
from .nn.gradcheck import check_gradients
from .patching import patch_count
from .trainer import alignment_losses, make_mask

TIME_BUDGET_S = 120.0


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _tiny_config():
    return EchoConfig.from_variant("custom", embed_dim=16, depth=2, heads=2, band_width=4, patch_len=4,
                                   patch_stride=2)


def gradient_checks(perturb=None, coords=6, seed=0):
    """Finite-difference check of every parameter group of a tiny encoder under the training loss."""
    cfg = _tiny_config()
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    # wider init than the training default so every path carries signal
    for name, t in params.items():
        t.data = t.data + 0.3 * rng.standard_normal(t.shape)
    B, P = 2, 5
    x = rng.standard_normal((B, P, cfg.band_width * cfg.patch_len))
    pe = rng.standard_normal((B, cfg.embed_dim))
    mask = np.stack([make_mask(P, 0.6, rng) for _ in range(B)])
    gt = rng.standard_normal((B, cfg.embed_dim))
    ft = rng.standard_normal((B, P, cfg.embed_dim))

    def loss(p):
        cls, tokens, _ = forward(p, cfg, x, pe, mask=mask)
        return alignment_losses(cls, tokens, gt, ft, mask)[2]

    results = check_gradients(loss, params, coords_per_param=coords, rng=rng, perturb=perturb)
    return [CheckResult(f"grad:{r.name}", r.passed, f"max rel err {r.max_rel_err:.2e}") for r in results]


def pe_consistency_check(d=64, gamma=100.0):
    """Bands at equal relative position across 16/32/48 kHz must share one encoding."""
    worst = 0.0
    stft = StftConfig()
    for band in range(6):
        vecs = []
        for fs in (16000, 32000, 48000):
            n_fft = stft.window_len(fs)
            s = fs // 16000
            # scaled edges keep (b0 + b1 - 1) / n_fft, hence p, fixed
            b0, b1 = band * 32 * s, ((band + 1) * 32 - 1) * s + 1
            vecs.append(frequency_pe(normalized_position(center_frequency(b0, b1, fs, n_fft), fs), d, gamma))
        worst = max(worst, max(float(np.max(np.abs(v - vecs[0]))) for v in vecs))
    return CheckResult("pe-cross-rate", worst <= 1e-12, f"max abs diff {worst:.1e}")


def _dft_magnitude_oracle(x, win, hop):
    n = len(win)
    frames = (len(x) - n) // hop + 1
    k = np.arange(n // 2 + 1)[:, None]
    basis = np.exp(-2j * np.pi * k * np.arange(n)[None] / n)
    return np.stack([np.abs(basis @ (x[t * hop : t * hop + n] * win)) for t in range(frames)], axis=1)


def stft_oracle_check(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for fs in (8000, 16000):
        x = rng.standard_normal(fs // 4)
        spec = stft_magnitude(Waveform(x, fs))
        n = spec.n_fft
        win = np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / n) for i in range(n)])
        ref = _dft_magnitude_oracle(x, win, spec.hop_len)
        if ref.shape != spec.magnitudes.shape:
            return CheckResult("stft-oracle", False, f"shape {spec.magnitudes.shape} vs {ref.shape}")
        worst = max(worst, float(np.max(np.abs(ref - spec.magnitudes))))
    return CheckResult("stft-oracle", worst <= 1e-9, f"max abs diff {worst:.1e}")


def geometry_check():
    ok = True
    for fs, K in ((16000, 6), (32000, 12), (48000, 18)):
        n_fft = StftConfig().window_len(fs)
        w = Waveform(np.zeros(n_fft), fs)
        got = len(split_bands(stft_magnitude(w), BandSplitConfig(pe_dim=8)))
        ok &= got == K
    ok &= frame_count(16000, 400, 160) == 98 and patch_count(98, 32, 16) == 5 and patch_count(3, 32, 16) == 1
    return CheckResult("band/frame/patch counts", bool(ok), "K=6/12/18 at 16/32/48 kHz")


def run_self_check(perturb=None, seed=0):
    """All checks in order, plus elapsed wall time. ``perturb`` is the gradient fault-injection hook."""
    t0 = time.perf_counter()
    results = gradient_checks(perturb=perturb, seed=seed)
    results += [pe_consistency_check(), stft_oracle_check(seed), geometry_check()]
    return results, time.perf_counter() - t0


def format_table(results) -> str:
    width = max(len(r.name) for r in results)
    return "\n".join(f"{r.name:<{width}}  {'pass' if r.passed else 'FAIL'}  {r.detail}" for r in results)
