"""Spectrogram / mel-spectrogram transforms and the processing family
applied before spectral distances (identity, log, cumulative sums).

Frames are Hann-windowed with hop = window/4 and reflect center padding.
The padding is realized as an index map into the original buffer, so the
whole framing step is a single differentiable gather.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from gradsynth import autodiff as ad
from gradsynth.autodiff import DiffBuffer
from gradsynth.audio import Signal

__all__ = [
    "PROCESSINGS",
    "WINDOW_SIZES",
    "SpectralConfigError",
    "Spectrogram",
    "mel_filterbank",
    "mel_spectrogram",
    "process",
    "stft_magnitude",
]

WINDOW_SIZES = (256, 512, 1024, 2048)

PROCESSINGS = ("identity", "log", "cumsum_time", "cumsum_freq")

LOG_OFFSET = 1e-5


class SpectralConfigError(Exception):
    """Window/signal geometry or processing kind is unusable."""


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude time-frequency matrix, (freq bins x time frames)."""

    magnitudes: DiffBuffer
    window_size: int
    hop: int
    scale: str  # "linear" or "mel"

    @property
    def values(self) -> np.ndarray:
        return self.magnitudes.values

    @property
    def shape(self):
        return self.magnitudes.values.shape


_frame_index_cache: dict = {}


def _frame_indices(n: int, window: int, hop: int) -> np.ndarray:
    """(frames x window) indices into the raw buffer, center padding folded in."""
    key = (n, window, hop)
    cached = _frame_index_cache.get(key)
    if cached is not None:
        return cached
    pad = window // 2
    padded = np.pad(np.arange(n), pad, mode="reflect")
    n_frames = (len(padded) - window) // hop + 1
    starts = np.arange(n_frames) * hop
    idx = padded[starts[:, None] + np.arange(window)[None, :]]
    _frame_index_cache[key] = idx
    return idx


def _hann_periodic(window: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(window) / window)


def stft_magnitude(signal: Signal, window_size: int, hop: Optional[int] = None) -> Spectrogram:
    """Hann-windowed, reflect-center-padded magnitude STFT."""
    if window_size not in WINDOW_SIZES:
        raise SpectralConfigError(
            f"window_size {window_size} not in {WINDOW_SIZES}"
        )
    if hop is None:
        hop = window_size // 4
    n = len(signal)
    if window_size > n:
        raise SpectralConfigError(
            f"window_size {window_size} longer than signal ({n} samples)"
        )
    idx = _frame_indices(n, window_size, hop)
    frames = ad.gather(signal.samples, idx)
    windowed = frames * ad.buffer(_hann_periodic(window_size))
    mag = ad.rfft_magnitude(windowed)
    return Spectrogram(ad.transpose(mag), window_size, hop, "linear")


def _hz_to_mel(f):
    """Slaney scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    log_step = math.log(6.4) / 27.0
    return np.where(f < 1000.0, 3.0 * f / 200.0, 15.0 + np.log(np.maximum(f, 1000.0) / 1000.0) / log_step)


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    log_step = math.log(6.4) / 27.0
    return np.where(m < 15.0, 200.0 * m / 3.0, 1000.0 * np.exp(log_step * (m - 15.0)))


_mel_fb_cache: dict = {}


def mel_filterbank(sample_rate: int, window_size: int, n_mels: int) -> np.ndarray:
    """(n_mels x bins) triangular filters, 0 Hz to Nyquist, area-normalized."""
    key = (sample_rate, window_size, n_mels)
    cached = _mel_fb_cache.get(key)
    if cached is not None:
        return cached
    n_bins = window_size // 2 + 1
    if n_mels >= n_bins:
        raise SpectralConfigError(
            f"n_mels = {n_mels} must be below the {n_bins} FFT bins"
        )
    nyquist = sample_rate / 2.0
    mel_points = np.linspace(_hz_to_mel(0.0), _hz_to_mel(nyquist), n_mels + 2)
    hz_points = _mel_to_hz(mel_points)
    bin_freqs = np.arange(n_bins) * (sample_rate / window_size)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (bin_freqs - left) / (center - left)
        down = (right - bin_freqs) / (right - center)
        tri = np.maximum(0.0, np.minimum(up, down))
        fb[m] = tri * (2.0 / (right - left))
    _mel_fb_cache[key] = fb
    return fb


def mel_spectrogram(
    signal: Signal, window_size: int, hop: Optional[int] = None, n_mels: int = 128
) -> Spectrogram:
    """Mel-pooled magnitude STFT (Slaney-style filterbank)."""
    base = stft_magnitude(signal, window_size, hop)
    fb = mel_filterbank(signal.sample_rate, window_size, n_mels)
    pooled = ad.const_matmul(fb, base.magnitudes)
    return Spectrogram(pooled, base.window_size, base.hop, "mel")


def _mass_normalized(mag, axis: int):
    total = ad.sum_axis(mag, axis=axis, keepdims=True)
    return mag / (total + LOG_OFFSET)


def process(spec: Spectrogram, kind: str, normalize: bool = False) -> Spectrogram:
    """Apply one F_k: identity, ln(m + 1e-5), or a cumulative sum along
    time (axis 1) or frequency (axis 0).

    ``normalize`` rescales to unit mass along the cumsum axis first,
    turning the cumulative difference into a transport-style distance.
    """
    if kind == "identity":
        return spec
    if kind == "log":
        return replace(spec, magnitudes=ad.ln(spec.magnitudes + LOG_OFFSET))
    if kind == "cumsum_time":
        mag = _mass_normalized(spec.magnitudes, 1) if normalize else spec.magnitudes
        return replace(spec, magnitudes=ad.cumsum(mag, axis=1))
    if kind == "cumsum_freq":
        mag = _mass_normalized(spec.magnitudes, 0) if normalize else spec.magnitudes
        return replace(spec, magnitudes=ad.cumsum(mag, axis=0))
    raise SpectralConfigError(f"unknown processing kind {kind!r}; expected {PROCESSINGS}")
