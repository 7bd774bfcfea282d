"""Seeded synthetic machine signals: harmonic stacks in noise plus fault perturbations.

A normal signal and its anomalous counterpart share one seed path; the
perturbation draws from a separate sub-stream and is added (or multiplied)
on top, so a zero-strength anomaly reproduces the normal signal.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields

import numpy as np

from ..dsp import Waveform
from ..errors import ConfigError

ANOMALY_KINDS = ("none", "extra_harmonic", "impulse_train", "amplitude_mod", "noise_boost")


@dataclass(frozen=True)
class SynthSpec:
    sample_rate_hz: int = 16000
    duration_s: float = 1.0
    base_rotation_hz: float = 120.0
    num_harmonics: int = 12
    harmonic_decay: float = 0.8
    noise_snr_db: float = 10.0
    anomaly_kind: str = "none"
    anomaly_strength: float = 0.0
    seed: int = 0
    rotation_jitter: float = 0.03
    resonance_hz: float = 0.0
    resonance_gain: float = 0.0

    def __post_init__(self):
        if self.duration_s < 0.5:
            raise ConfigError(f"duration_s must be >= 0.5, got {self.duration_s}")
        if self.anomaly_kind not in ANOMALY_KINDS:
            raise ConfigError(f"anomaly_kind must be one of {ANOMALY_KINDS}, got {self.anomaly_kind!r}")
        if self.sample_rate_hz <= 0 or self.num_harmonics < 1 or self.base_rotation_hz <= 0:
            raise ConfigError("sample_rate_hz, num_harmonics and base_rotation_hz must be positive")
        if self.anomaly_strength < 0:
            raise ConfigError("anomaly_strength must be >= 0")

    @classmethod
    def field_names(cls):
        return {f.name for f in fields(cls)}

    def to_dict(self):
        return asdict(self)


def derive_seed(*parts) -> int:
    h = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def _rngs(seed: int):
    ss = np.random.SeedSequence(seed)
    base, pert = ss.spawn(2)
    return np.random.default_rng(base), np.random.default_rng(pert)


def normal_component(spec: SynthSpec, rng: np.random.Generator):
    fs = spec.sample_rate_hz
    n = int(round(spec.duration_s * fs))
    t = np.arange(n) / fs
    f0 = spec.base_rotation_hz * (1.0 + spec.rotation_jitter * rng.uniform(-1.0, 1.0))
    x = np.zeros(n)
    for h in range(1, spec.num_harmonics + 1):
        f = h * f0
        amp = spec.harmonic_decay ** (h - 1) * (1.0 + 0.2 * rng.uniform(-1.0, 1.0))
        if spec.resonance_gain and spec.resonance_hz:
            amp *= 1.0 + spec.resonance_gain * np.exp(-0.5 * ((f - spec.resonance_hz) / (0.1 * spec.resonance_hz)) ** 2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        if f < fs / 2:
            x += amp * np.sin(2.0 * np.pi * f * t + phase)
    sig_power = np.mean(x**2)
    noise_power = sig_power / 10.0 ** (spec.noise_snr_db / 10.0)
    noise = rng.standard_normal(n) * np.sqrt(noise_power)
    return t, f0, x, noise


def apply_anomaly(spec: SynthSpec, t, f0, harmonic, noise, rng: np.random.Generator):
    s = spec.anomaly_strength
    kind = spec.anomaly_kind
    fs = spec.sample_rate_hz
    rms = np.sqrt(np.mean(harmonic**2)) or 1.0
    if kind == "none" or s == 0.0:
        return harmonic + noise
    if kind == "extra_harmonic":
        ratio = rng.uniform(2.3, 7.7)
        f = min(ratio * f0, 0.45 * fs)
        return harmonic + noise + s * np.sqrt(2.0) * rms * np.sin(2.0 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    if kind == "impulse_train":
        rate = rng.uniform(8.0, 20.0)
        ring_hz = rng.uniform(0.15, 0.35) * fs
        n = t.size
        burst_len = int(0.01 * fs)
        tb = np.arange(burst_len) / fs
        burst = np.exp(-tb * 600.0) * np.sin(2.0 * np.pi * ring_hz * tb)
        pulses = np.zeros(n)
        start = rng.uniform(0.0, 1.0 / rate)
        for k in range(int(t[-1] * rate) + 2):
            i = int(round((start + k / rate) * fs))
            if i >= n:
                break
            seg = burst[: n - i]
            pulses[i : i + seg.size] += seg
        peak = np.max(np.abs(harmonic)) or 1.0
        return harmonic + noise + s * 4.0 * peak * pulses
    if kind == "amplitude_mod":
        fm = rng.uniform(2.0, 8.0)
        return harmonic * (1.0 + s * np.sin(2.0 * np.pi * fm * t + rng.uniform(0, 2 * np.pi))) + noise
    # noise_boost
    return harmonic + noise * np.sqrt(1.0 + 10.0 * s)


def generate_signal(spec: SynthSpec, with_normal: bool = False):
    """Return the waveform (and optionally its unperturbed counterpart).

    Both share a fixed gain so the normal part has RMS 0.2.
    """
    base_rng, pert_rng = _rngs(spec.seed)
    t, f0, harmonic, noise = normal_component(spec, base_rng)
    normal = harmonic + noise
    gain = 0.2 / (np.sqrt(np.mean(normal**2)) or 1.0)
    out = apply_anomaly(spec, t, f0, harmonic, noise, pert_rng) * gain
    w = Waveform(out, spec.sample_rate_hz)
    if with_normal:
        return w, Waveform(normal * gain, spec.sample_rate_hz)
    return w


def kurtosis(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    c = x - x.mean()
    v = np.mean(c**2)
    return float(np.mean(c**4) / (v * v)) if v > 0 else 0.0
