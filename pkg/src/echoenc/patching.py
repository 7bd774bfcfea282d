"""Overlapping temporal patches of a sub-band and their linear projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bandsplit import SubBand
from .errors import ConfigError, InvalidInputError


@dataclass(frozen=True)
class PatchConfig:
    patch_len: int = 32
    stride: int = 16
    embed_dim: int = 384

    def __post_init__(self):
        if self.patch_len < 1 or self.stride < 1:
            raise ConfigError("patch_len and stride must be >= 1")


@dataclass(frozen=True)
class PatchProjection:
    """Shared conv kernel, shape (D, W, L), plus one bias per output channel."""

    weight: np.ndarray
    bias: np.ndarray
    stride: int

    @property
    def band_width(self) -> int:
        return self.weight.shape[1]

    @property
    def patch_len(self) -> int:
        return self.weight.shape[2]

    @property
    def embed_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class PatchSequence:
    patches: np.ndarray  # (P, D)
    band_index: int

    @property
    def num_patches(self) -> int:
        return self.patches.shape[0]


def patch_count(T: int, L: int, stride: int) -> int:
    return (max(T, L) - L) // stride + 1


def pad_frames(mag: np.ndarray, L: int) -> np.ndarray:
    """Right zero-pad a (W, T) block to at least L frames."""
    T = mag.shape[1]
    if T >= L:
        return mag
    return np.pad(mag, ((0, 0), (0, L - T)))


def unfold(mag: np.ndarray, L: int, stride: int) -> np.ndarray:
    """(W, T) -> (P, W*L); row t is frames [t*stride, t*stride+L) flattened band-major."""
    if mag.ndim != 2 or mag.shape[1] < 1:
        raise InvalidInputError(f"band magnitudes must be (W, T>=1), got {mag.shape}")
    mag = pad_frames(mag, L)
    P = patch_count(mag.shape[1], L, stride)
    win = np.lib.stride_tricks.sliding_window_view(mag, L, axis=1)[:, : (P - 1) * stride + 1 : stride]
    # win: (W, P, L)
    return np.ascontiguousarray(win.transpose(1, 0, 2).reshape(P, -1))


def extract_patches(band: SubBand, proj: PatchProjection) -> PatchSequence:
    W = band.magnitudes.shape[0]
    if W != proj.band_width:
        raise ConfigError(f"band has {W} bins but projection kernel expects {proj.band_width}")
    cols = unfold(band.magnitudes, proj.patch_len, proj.stride)
    kernel = proj.weight.reshape(proj.embed_dim, -1)
    return PatchSequence(cols @ kernel.T + proj.bias, band.band_index)
