"""Uniform sub-band splitting with relative-frequency positional encoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import Spectrogram
from .errors import InvalidInputError


@dataclass(frozen=True)
class BandSplitConfig:
    band_width_bins: int = 32
    pe_dim: int = 384
    gamma: float = 100.0

    def __post_init__(self):
        if self.band_width_bins < 1:
            raise InvalidInputError(f"band_width_bins must be >= 1, got {self.band_width_bins}")
        if self.pe_dim < 2 or self.pe_dim % 2:
            raise InvalidInputError(f"pe_dim must be a positive even integer, got {self.pe_dim}")
        if not self.gamma > 0:
            raise InvalidInputError(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class SubBand:
    band_index: int
    bin_start: int
    bin_end: int
    magnitudes: np.ndarray  # (W, T)
    center_freq_hz: float
    normalized_position: float
    freq_pe: np.ndarray

    @property
    def width(self) -> int:
        return self.bin_end - self.bin_start

    @property
    def num_frames(self) -> int:
        return self.magnitudes.shape[1]


@dataclass(frozen=True)
class BandSet:
    bands: tuple
    sample_rate_hz: int
    n_fft: int
    discarded_bins: int = 0

    @property
    def K(self) -> int:
        return len(self.bands)

    def __len__(self):
        return len(self.bands)

    def __iter__(self):
        return iter(self.bands)

    def __getitem__(self, i):
        return self.bands[i]

    def records(self) -> list[dict]:
        """Per-band summary for debug dumps."""
        return [
            {
                "k": b.band_index,
                "b_start": b.bin_start,
                "b_end": b.bin_end,
                "f_c": b.center_freq_hz,
                "p": b.normalized_position,
            }
            for b in self.bands
        ]


def center_frequency(b_start: int, b_end: int, fs: float, n_fft: int) -> float:
    """Center of bins ``[b_start, b_end)`` in Hz."""
    if not (0 <= b_start < b_end):
        raise InvalidInputError(f"invalid bin range [{b_start}, {b_end})")
    return (b_start + b_end - 1) / 2.0 * (fs / n_fft)


def normalized_position(f_c: float, fs: float) -> float:
    nyquist = fs / 2.0
    if f_c < 0 or f_c > nyquist:
        raise InvalidInputError(f"center frequency {f_c} Hz outside [0, {nyquist}] Hz")
    return f_c / nyquist


def frequency_pe(p: float, d: int, gamma: float) -> np.ndarray:
    """Sinusoidal encoding of a normalized band position.

    Even slots hold ``sin(gamma * p / 10000**(2i/d))``, odd slots the cosine.
    """
    if d % 2:
        raise InvalidInputError(f"PE dimension must be even, got {d}")
    if not (0.0 <= p <= 1.0):
        raise InvalidInputError(f"normalized position {p} outside [0, 1]")
    i = np.arange(d // 2, dtype=np.float64)
    angle = gamma * p / np.power(10000.0, 2.0 * i / d)
    out = np.empty(d, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def split_bands(spec: Spectrogram, cfg: BandSplitConfig) -> BandSet:
    W = cfg.band_width_bins
    F = spec.num_bins
    if F < W:
        raise InvalidInputError(f"spectrogram has {F} bins, fewer than band width {W}")
    K = F // W
    fs = spec.sample_rate_hz
    bands = []
    for k in range(K):
        b0, b1 = k * W, (k + 1) * W
        fc = center_frequency(b0, b1, fs, spec.n_fft)
        p = normalized_position(fc, fs)
        bands.append(
            SubBand(
                band_index=k,
                bin_start=b0,
                bin_end=b1,
                magnitudes=spec.magnitudes[b0:b1],
                center_freq_hz=fc,
                normalized_position=p,
                freq_pe=frequency_pe(p, cfg.pe_dim, cfg.gamma),
            )
        )
    return BandSet(tuple(bands), fs, spec.n_fft, discarded_bins=F - K * W)


def band_count(sample_rate_hz: int, n_fft: int, band_width_bins: int = 32) -> int:
    return (n_fft // 2 + 1) // band_width_bins
