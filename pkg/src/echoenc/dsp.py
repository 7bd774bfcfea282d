"""Waveform ingestion and magnitude STFT.

The FFT size equals the analysis window length in samples, so the bin
spacing ``fs / n_fft`` depends only on ``window_ms`` (40 Hz at 25 ms) and the
number of bins grows linearly with the sampling rate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataIOError, InvalidInputError


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise InvalidInputError(f"waveform must be 1-D, got shape {s.shape}")
        if s.size < 1:
            raise InvalidInputError("waveform is empty")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("waveform contains NaN or Inf")
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise InvalidInputError(f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class StftConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    window_fn: str = "hann"
    log_compress: bool = False

    def __post_init__(self):
        if not (0 < self.hop_ms <= self.window_ms):
            raise InvalidInputError(f"need 0 < hop_ms <= window_ms, got hop={self.hop_ms} window={self.window_ms}")
        if self.window_fn != "hann":
            raise InvalidInputError(f"unsupported window function {self.window_fn!r}")

    def window_len(self, sample_rate_hz: int) -> int:
        """Window length in samples, rounded down to an even count."""
        n = int(round(self.window_ms / 1000.0 * sample_rate_hz))
        n -= n % 2
        if n < 2:
            raise InvalidInputError(f"window of {self.window_ms} ms at {sample_rate_hz} Hz is shorter than 2 samples")
        return n

    def hop_len(self, sample_rate_hz: int) -> int:
        h = int(round(self.hop_ms / 1000.0 * sample_rate_hz))
        if h < 1:
            raise InvalidInputError(f"hop of {self.hop_ms} ms at {sample_rate_hz} Hz is shorter than 1 sample")
        return h


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # (F, T)
    sample_rate_hz: int
    n_fft: int
    hop_len: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def bin_hz(self) -> float:
        return self.sample_rate_hz / self.n_fft

    @property
    def num_bins(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def num_frames(self) -> int:
        return self.magnitudes.shape[1]


def normalize_waveform(w: Waveform) -> Waveform:
    """Zero mean, unit population std; near-constant input maps to zeros."""
    x = w.samples
    if x.size == 0:
        raise InvalidInputError("cannot normalize an empty waveform")
    std = x.std()
    if std < 1e-12:
        return Waveform(np.zeros_like(x), w.sample_rate_hz)
    return Waveform((x - x.mean()) / std, w.sample_rate_hz)


def hann_window(n: int) -> np.ndarray:
    # periodic form
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def frame_count(num_samples: int, window_len: int, hop_len: int) -> int:
    if num_samples < window_len:
        return 0
    return (num_samples - window_len) // hop_len + 1


def stft_magnitude(w: Waveform, cfg: StftConfig | None = None) -> Spectrogram:
    cfg = cfg or StftConfig()
    fs = w.sample_rate_hz
    n_win = cfg.window_len(fs)
    hop = cfg.hop_len(fs)
    x = w.samples
    if x.size < n_win:
        raise InvalidInputError(
            f"signal has {x.size} samples, shorter than one {n_win}-sample window; zero-pad explicitly"
        )
    frames = np.lib.stride_tricks.sliding_window_view(x, n_win)[::hop]
    spec = np.abs(np.fft.rfft(frames * hann_window(n_win), n=n_win, axis=1)).T
    if cfg.log_compress:
        spec = np.log1p(spec)
    return Spectrogram(np.ascontiguousarray(spec), fs, n_win, hop)


# --------------------------------------------------------------------------
# readers
# --------------------------------------------------------------------------


def read_wav(path, channel: int = 0) -> Waveform:
    """Read PCM16 / PCM32 / float WAV at its native rate; first channel by default."""
    path = Path(path)
    try:
        fs, data = wavfile.read(path)
    except (ValueError, OSError, EOFError) as exc:
        raise DataIOError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim == 2:
        data = data[:, channel]
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise DataIOError(f"unsupported WAV sample type {data.dtype} in {path}")
    try:
        return Waveform(x, int(fs))
    except InvalidInputError as exc:
        raise DataIOError(f"invalid audio in {path}: {exc}") from exc


def write_wav(path, w: Waveform, pcm16: bool = True) -> None:
    """Write a waveform; PCM16 clips to [-1, 1)."""
    x = w.samples
    if pcm16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    else:
        data = x.astype("<f4")
    try:
        wavfile.write(path, w.sample_rate_hz, data)
    except OSError as exc:
        raise DataIOError(f"cannot write WAV file {path}: {exc}") from exc


def read_csv_signal(path, sample_rate_hz: int | None = None, channel: int = 0) -> Waveform:
    """Read one channel of a vibration CSV.

    The first row may be a header ``sample_rate_hz=<int>``; otherwise the
    rate must be passed in.
    """
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataIOError(f"cannot read CSV file {path}: {exc}") from exc
    if rows and rows[0] and rows[0][0].strip().startswith("sample_rate_hz="):
        header_rate = int(rows[0][0].split("=", 1)[1])
        if sample_rate_hz is None:
            sample_rate_hz = header_rate
        rows = rows[1:]
    if sample_rate_hz is None:
        raise DataIOError(f"{path}: no sample_rate_hz header and no rate supplied")
    try:
        values = [float(r[channel]) for r in rows if r]
    except (ValueError, IndexError) as exc:
        raise DataIOError(f"{path}: malformed numeric data ({exc})") from exc
    try:
        return Waveform(np.array(values), int(sample_rate_hz))
    except InvalidInputError as exc:
        raise DataIOError(f"invalid signal in {path}: {exc}") from exc


def read_signal(path, sample_rate_hz: int | None = None) -> Waveform:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv_signal(path, sample_rate_hz)
    return read_wav(path)


def expected_bins(n_fft: int) -> int:
    return n_fft // 2 + 1


def bin_resolution_hz(window_ms: float, sample_rate_hz: int) -> float:
    n = StftConfig(window_ms=window_ms, hop_ms=min(10.0, window_ms)).window_len(sample_rate_hz)
    return sample_rate_hz / n


__all__ = [
    "Waveform",
    "StftConfig",
    "Spectrogram",
    "normalize_waveform",
    "stft_magnitude",
    "frame_count",
    "hann_window",
    "read_wav",
    "write_wav",
    "read_csv_signal",
    "read_signal",
    "expected_bins",
    "bin_resolution_hz",
]
