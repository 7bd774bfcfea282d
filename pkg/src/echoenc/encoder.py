"""Band encoder: per-band transformer with CLS aggregation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache

import numpy as np

from .bandsplit import BandSet, BandSplitConfig, SubBand, split_bands
from .dsp import StftConfig, Waveform, normalize_waveform, stft_magnitude
from .errors import ConfigError, UsageError
from .nn import tensor as T
from .nn.layers import LN_EPS, init_block, transformer_block
from .nn.params import ParamStore, trunc_normal
from .patching import PatchProjection, patch_count, unfold

VARIANTS = {
    "toy": dict(embed_dim=64, depth=4, heads=4),
    "tiny": dict(embed_dim=192, depth=12, heads=3),
    "small": dict(embed_dim=384, depth=12, heads=6),
    "base": dict(embed_dim=768, depth=12, heads=12),
}


@dataclass(frozen=True)
class EchoConfig:
    variant: str = "small"
    embed_dim: int = 384
    depth: int = 12
    heads: int = 6
    mlp_ratio: int = 4
    band_width: int = 32
    patch_len: int = 32
    patch_stride: int = 16
    gamma: float = 100.0
    window_ms: float = 25.0
    hop_ms: float = 10.0
    log_compress: bool = False
    temporal_pe: bool = True
    freq_pe_on_cls: bool = False

    def __post_init__(self):
        if self.embed_dim % 2:
            raise ConfigError(f"embed_dim must be even, got {self.embed_dim}")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.patch_len < 1 or self.patch_stride < 1:
            raise ConfigError("patch_len and patch_stride must be >= 1")

    @classmethod
    def from_variant(cls, variant: str, **overrides) -> "EchoConfig":
        if variant not in VARIANTS and variant != "custom":
            raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
        base = dict(VARIANTS.get(variant, {}))
        base.update(overrides)
        return cls(variant=variant, **base)

    @classmethod
    def from_dict(cls, d: dict) -> "EchoConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def stft(self) -> StftConfig:
        return StftConfig(window_ms=self.window_ms, hop_ms=self.hop_ms, log_compress=self.log_compress)

    @property
    def bandsplit(self) -> BandSplitConfig:
        return BandSplitConfig(band_width_bins=self.band_width, pe_dim=self.embed_dim, gamma=self.gamma)


@dataclass(frozen=True)
class SignalEmbedding:
    values: np.ndarray
    K: int
    d: int
    sample_rate_hz: int
    duration_s: float


@dataclass(frozen=True)
class BandOutput:
    cls: np.ndarray  # (d,)
    tokens: np.ndarray  # (P, d)


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


def init_params(cfg: EchoConfig, rng: np.random.Generator | int = 0) -> ParamStore:
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    d = cfg.embed_dim
    arrays = {
        "patch_embed.weight": trunc_normal(rng, (d, cfg.band_width, cfg.patch_len)),
        "patch_embed.bias": np.zeros(d),
        "cls_token": trunc_normal(rng, (d,)),
        "mask_token": trunc_normal(rng, (d,)),
        "norm.gain": np.ones(d),
        "norm.bias": np.zeros(d),
    }
    for i in range(cfg.depth):
        arrays.update(init_block(rng, d, cfg.mlp_ratio, prefix=f"blocks.{i}."))
    return ParamStore(arrays)


def param_shapes(cfg: EchoConfig) -> dict:
    return {n: t.shape for n, t in init_params(cfg, 0).items()}


def patch_projection(params: ParamStore, cfg: EchoConfig) -> PatchProjection:
    return PatchProjection(params["patch_embed.weight"].data, params["patch_embed.bias"].data, cfg.patch_stride)


@lru_cache(maxsize=64)
def _temporal_pe_cached(P: int, d: int) -> np.ndarray:
    pos = np.arange(P, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    out = np.empty((P, d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    out.setflags(write=False)
    return out


def temporal_pe(P: int, d: int) -> np.ndarray:
    """Fixed sinusoidal encoding of patch index; computed for any length."""
    return _temporal_pe_cached(int(P), int(d))


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------


def band_inputs(band: SubBand, cfg: EchoConfig) -> np.ndarray:
    """Unfolded patch windows of a band, (P, W*L)."""
    if band.magnitudes.shape[0] != cfg.band_width:
        raise ConfigError(f"band has {band.magnitudes.shape[0]} bins, model expects {cfg.band_width}")
    return unfold(band.magnitudes, cfg.patch_len, cfg.patch_stride)


def forward(params: ParamStore, cfg: EchoConfig, patches, freq_pe, mask=None, capture=False):
    """Batched encoder pass.

    patches: (B, P, W*L) unfolded windows; freq_pe: (B, d); mask: optional
    (B, P) bool, true where the token is replaced by the mask token.
    Returns ``(cls, tokens, layers)`` as Tensors; ``layers`` holds each block's
    token-position output (CLS excluded) when ``capture`` is set.
    """
    patches = np.asarray(patches, dtype=np.float64)
    freq_pe = np.asarray(freq_pe, dtype=np.float64)
    B, P, _ = patches.shape
    d = cfg.embed_dim
    w = T.transpose(T.reshape(params["patch_embed.weight"], (d, -1)))
    x = T.linear(patches, w, params["patch_embed.bias"])
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (B, P):
            raise UsageError(f"mask shape {mask.shape} does not match patch layout {(B, P)}")
        if mask.any():
            x = T.where(mask[:, :, None], params["mask_token"], x)
    pos = freq_pe[:, None, :]
    if cfg.temporal_pe:
        pos = pos + temporal_pe(P, d)[None]
    x = T.add(x, pos)
    cls = T.broadcast_to(params["cls_token"], (B, 1, d))
    if cfg.freq_pe_on_cls:
        cls = T.add(cls, freq_pe[:, None, :])
    h = T.concat([cls, x], axis=1)
    layers = []
    for i in range(cfg.depth):
        h = transformer_block(h, params, cfg.heads, prefix=f"blocks.{i}.")
        if capture:
            layers.append(T.getitem(h, (slice(None), slice(1, None))))
    h = T.layer_norm(h, params["norm.gain"], params["norm.bias"], LN_EPS)
    return T.getitem(h, (slice(None), 0)), T.getitem(h, (slice(None), slice(1, None))), layers


def encode_subband(band: SubBand, params: ParamStore, cfg: EchoConfig, mask=None) -> BandOutput:
    x = band_inputs(band, cfg)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (x.shape[0],):
            raise UsageError(f"mask has length {mask.size}, band has {x.shape[0]} patches")
        mask = mask[None]
    cls, tokens, _ = forward(params, cfg, x[None], band.freq_pe[None], mask)
    return BandOutput(cls.data[0].copy(), tokens.data[0].copy())


def concat_cls(cls_vectors, band_indices) -> np.ndarray:
    """Concatenate per-band CLS outputs; band order must be strictly ascending."""
    idx = list(band_indices)
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise UsageError(f"band CLS outputs are not in ascending band order: {idx}")
    return np.concatenate([np.asarray(c).reshape(-1) for c in cls_vectors])


def prepare_signal(w: Waveform, cfg: EchoConfig) -> BandSet:
    return split_bands(stft_magnitude(normalize_waveform(w), cfg.stft), cfg.bandsplit)


def encode_bandset(bands: BandSet, params: ParamStore, cfg: EchoConfig) -> np.ndarray:
    x = np.stack([band_inputs(b, cfg) for b in bands])
    pe = np.stack([b.freq_pe for b in bands])
    cls, _, _ = forward(params, cfg, x, pe)
    return concat_cls(list(cls.data), [b.band_index for b in bands])


def encode_signal(w: Waveform, params: ParamStore, cfg: EchoConfig) -> SignalEmbedding:
    bands = prepare_signal(w, cfg)
    z = encode_bandset(bands, params, cfg)
    return SignalEmbedding(z, len(bands), cfg.embed_dim, w.sample_rate_hz, w.duration_s)


def embedding_length(sample_rate_hz: int, cfg: EchoConfig) -> int:
    n_fft = cfg.stft.window_len(sample_rate_hz)
    return ((n_fft // 2 + 1) // cfg.band_width) * cfg.embed_dim


def num_patches(num_frames: int, cfg: EchoConfig) -> int:
    return patch_count(num_frames, cfg.patch_len, cfg.patch_stride)


@dataclass
class EchoEncoder:
    """Config + parameters bundle with convenience wrappers."""

    config: EchoConfig
    params: ParamStore

    @classmethod
    def initialize(cls, config: EchoConfig, seed=0) -> "EchoEncoder":
        return cls(config, init_params(config, seed))

    def encode(self, w: Waveform) -> SignalEmbedding:
        return encode_signal(w, self.params, self.config)

    def encode_subband(self, band: SubBand, mask=None) -> BandOutput:
        return encode_subband(band, self.params, self.config, mask)

    def with_config(self, **changes) -> "EchoEncoder":
        return EchoEncoder(replace(self.config, **changes), self.params)
