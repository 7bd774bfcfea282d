import numpy as np
import pytest

from echoenc.bandsplit import BandSplitConfig, split_bands
from echoenc.dsp import Spectrogram, Waveform
from echoenc.encoder import (
    EchoConfig,
    EchoEncoder,
    concat_cls,
    embedding_length,
    encode_signal,
    encode_subband,
    forward,
    init_params,
    param_shapes,
    temporal_pe,
)
from echoenc.errors import ConfigError, UsageError


@pytest.fixture(scope="module")
def toy():
    cfg = EchoConfig.from_variant("toy")
    return cfg, init_params(cfg, 0)


def _band(cfg, T, rng, p_bins=(0, 32)):
    spec = Spectrogram(rng.random((201, T)), 16000, 400)
    return split_bands(spec, cfg.bandsplit)


def test_variants():
    assert (EchoConfig.from_variant("small").embed_dim, EchoConfig.from_variant("small").depth) == (384, 12)
    assert EchoConfig.from_variant("tiny").heads == 3
    with pytest.raises(ConfigError):
        EchoConfig.from_variant("huge")
    with pytest.raises(ConfigError):
        EchoConfig.from_dict({"embed_dim": 64, "bogus": 1})
    with pytest.raises(ConfigError):
        EchoConfig.from_variant("toy", heads=3)


def test_param_shapes(toy):
    cfg, p = toy
    shapes = param_shapes(cfg)
    assert shapes["patch_embed.weight"] == (64, 32, 32)
    assert shapes["cls_token"] == (64,) and shapes["mask_token"] == (64,)
    assert p.schema() == {k: tuple(v) for k, v in shapes.items()}


def test_single_patch_shapes(toy, rng):
    cfg, p = toy
    out = encode_subband(_band(cfg, 10, rng)[0], p, cfg)
    assert out.cls.shape == (64,) and out.tokens.shape == (1, 64)


def test_empty_mask_is_noop(toy, rng):
    cfg, p = toy
    band = _band(cfg, 80, rng)[1]
    a = encode_subband(band, p, cfg)
    b = encode_subband(band, p, cfg, mask=np.zeros(4, dtype=bool))
    assert np.array_equal(a.cls, b.cls) and np.array_equal(a.tokens, b.tokens)
    with pytest.raises(UsageError):
        encode_subband(band, p, cfg, mask=np.zeros(3, dtype=bool))


def test_mask_changes_output(toy, rng):
    cfg, p = toy
    band = _band(cfg, 80, rng)[1]
    m = np.zeros(4, dtype=bool)
    m[2] = True
    assert not np.array_equal(encode_subband(band, p, cfg).tokens, encode_subband(band, p, cfg, mask=m).tokens)


def test_frequency_pe_distinguishes_bands(toy, rng):
    cfg, p = toy
    mags = rng.random((201, 50))
    mags[32:64] = mags[0:32]
    bands = split_bands(Spectrogram(mags, 16000, 400), cfg.bandsplit)
    a, b = encode_subband(bands[0], p, cfg), encode_subband(bands[1], p, cfg)
    assert np.linalg.norm(a.cls - b.cls) > 0


def test_embedding_lengths(toy):
    cfg, p = toy
    rng = np.random.default_rng(0)
    for fs, K in ((16000, 6), (32000, 12)):
        e = encode_signal(Waveform(rng.standard_normal(fs), fs), p, cfg)
        assert (e.K, e.values.size) == (K, K * 64)
    assert embedding_length(16000, EchoConfig.from_variant("small")) == 2304
    assert embedding_length(32000, cfg) == 768


def test_length_independent_of_duration(toy):
    cfg, p = toy
    rng = np.random.default_rng(1)
    sizes = {encode_signal(Waveform(rng.standard_normal(int(s * 16000)), 16000), p, cfg).values.size
             for s in (0.5, 2.0, 7.3)}
    assert sizes == {384}


def test_concat_order():
    np.testing.assert_array_equal(concat_cls([np.ones(2), np.zeros(2)], [0, 1]), [1, 1, 0, 0])
    with pytest.raises(UsageError):
        concat_cls([np.ones(2), np.zeros(2)], [1, 0])


def test_batched_forward_matches_single(toy, rng):
    cfg, p = toy
    bands = _band(cfg, 60, rng)
    x = np.stack([rng.standard_normal((3, 32 * 32)) for _ in range(2)])
    pe = np.stack([bands[0].freq_pe, bands[3].freq_pe])
    cls, tok, _ = forward(p, cfg, x, pe)
    for i in range(2):
        c1, t1, _ = forward(p, cfg, x[i : i + 1], pe[i : i + 1])
        np.testing.assert_allclose(cls.data[i], c1.data[0], atol=1e-12)
        np.testing.assert_allclose(tok.data[i], t1.data[0], atol=1e-12)


def test_temporal_pe_is_sinusoidal():
    pe = temporal_pe(5, 8)
    assert pe.shape == (5, 8)
    np.testing.assert_allclose(pe[3, 0], np.sin(3.0))
    np.testing.assert_allclose(pe[3, 1], np.cos(3.0))


def test_encoder_wrapper(toy):
    cfg, p = toy
    enc = EchoEncoder(cfg, p)
    w = Waveform(np.random.default_rng(5).standard_normal(8000), 16000)
    np.testing.assert_array_equal(enc.encode(w).values, encode_signal(w, p, cfg).values)
