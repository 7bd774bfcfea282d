"""Frequency-aware hierarchical encoding of machine signals."""

__version__ = "0.1.0"

from .bandsplit import BandSplitConfig, center_frequency, frequency_pe, normalized_position, split_bands  # noqa: E402
from .dsp import StftConfig, Waveform, normalize_waveform, read_signal, stft_magnitude  # noqa: E402
from .encoder import EchoConfig, EchoEncoder, encode_signal, encode_subband, init_params  # noqa: E402

__all__ = [
    "__version__",
    "BandSplitConfig",
    "EchoConfig",
    "EchoEncoder",
    "StftConfig",
    "Waveform",
    "center_frequency",
    "encode_signal",
    "encode_subband",
    "frequency_pe",
    "init_params",
    "normalize_waveform",
    "normalized_position",
    "read_signal",
    "split_bands",
    "stft_magnitude",
]
