import math

import numpy as np
import pytest

from echoenc.bandsplit import (
    BandSplitConfig,
    band_count,
    center_frequency,
    frequency_pe,
    normalized_position,
    split_bands,
)
from echoenc.dsp import Spectrogram, StftConfig
from echoenc.errors import InvalidInputError


def _spec(fs, frames=3):
    n_fft = StftConfig().window_len(fs)
    return Spectrogram(np.random.default_rng(fs).random((n_fft // 2 + 1, frames)), fs, n_fft)


def test_band_layout_16k():
    bands = split_bands(_spec(16000), BandSplitConfig(pe_dim=8))
    assert bands.K == 6 and bands.discarded_bins == 201 - 192
    assert [(b.bin_start, b.bin_end) for b in bands] == [(32 * k, 32 * k + 32) for k in range(6)]


def test_band_count_proportional():
    assert split_bands(_spec(32000), BandSplitConfig(pe_dim=8)).K == 12
    assert band_count(48000, 1200) == 18


def test_single_exact_band():
    spec = Spectrogram(np.ones((32, 2)), 2480, 62)
    bands = split_bands(spec, BandSplitConfig(pe_dim=4))
    assert bands.K == 1 and (bands[0].bin_start, bands[0].bin_end) == (0, 32)


def test_too_few_bins():
    with pytest.raises(InvalidInputError):
        split_bands(Spectrogram(np.ones((31, 2)), 2400, 60), BandSplitConfig(pe_dim=4))


def test_band_views_share_data():
    spec = _spec(16000)
    b = split_bands(spec, BandSplitConfig(pe_dim=8))[2]
    np.testing.assert_array_equal(b.magnitudes, spec.magnitudes[64:96])


def test_center_frequency_examples():
    assert center_frequency(0, 32, 16000, 400) == 620.0
    assert center_frequency(0, 2, 16000, 400) == 20.0
    assert center_frequency(32, 64, 32000, 800) == 1900.0
    with pytest.raises(InvalidInputError):
        center_frequency(5, 5, 16000, 400)


def test_normalized_position_examples():
    assert normalized_position(4000, 16000) == 0.5
    assert normalized_position(0, 16000) == 0.0
    assert normalized_position(8000, 16000) == 1.0
    with pytest.raises(InvalidInputError):
        normalized_position(8000.1, 16000)


def test_frequency_pe_examples():
    pe = frequency_pe(0.0, 10, 7.0)
    assert (pe[0::2] == 0.0).all() and (pe[1::2] == 1.0).all()
    np.testing.assert_array_equal(frequency_pe(0.5, 2, 100.0), [math.sin(50.0), math.cos(50.0)])
    with pytest.raises(InvalidInputError):
        frequency_pe(0.5, 3, 100.0)


def test_frequency_pe_scalar_oracle(rng):
    for _ in range(200):
        p, d, g = rng.random(), 2 * int(rng.integers(1, 40)), float(rng.uniform(1, 200))
        pe = frequency_pe(p, d, g)
        for i in range(d // 2):
            a = g * p / 10000 ** (2 * i / d)
            assert abs(pe[2 * i] - math.sin(a)) <= 1e-12 and abs(pe[2 * i + 1] - math.cos(a)) <= 1e-12


def test_pe_identical_across_rates():
    # edges scaled so (b0 + b1 - 1) / n_fft, hence p, is shared across rates
    for k in range(6):
        vecs = []
        for fs, n_fft in ((16000, 400), (32000, 800), (48000, 1200)):
            s = fs // 16000
            b0, b1 = 32 * k * s, (32 * k + 31) * s + 1
            p = normalized_position(center_frequency(b0, b1, fs, n_fft), fs)
            vecs.append(frequency_pe(p, 64, 100.0))
        for v in vecs[1:]:
            assert np.max(np.abs(v - vecs[0])) <= 1e-12


def test_records():
    recs = split_bands(_spec(16000), BandSplitConfig(pe_dim=8)).records()
    assert recs[0] == {"k": 0, "b_start": 0, "b_end": 32, "f_c": 620.0, "p": 620.0 / 8000}
