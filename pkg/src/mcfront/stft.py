"""Short-time Fourier analysis/synthesis and multichannel PCM containers.

Shape conventions used throughout the package:
    M: number of microphone channels
    T: number of STFT frames
    F: number of frequency bins (fft_size // 2 + 1)
    S: number of time-domain samples
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StftConfig",
    "MultichannelPcm",
    "MultichannelSpectrogram",
    "analysis_window",
    "stft",
    "istft",
]

_WINDOWS = ("hann", "hamming", "rect")


@dataclass(frozen=True)
class StftConfig:
    """STFT framing parameters.

    Defaults give 257 frequency bins with a 10 ms hop at 16 kHz.
    """

    sample_rate: int = 16000
    fft_size: int = 512
    hop: int = 160
    window: str = "hann"
    center_padding: bool = True

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0 < self.hop <= self.fft_size:
            raise ValueError(f"hop must satisfy 0 < hop <= fft_size, got {self.hop}")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}, expected one of {_WINDOWS}")

    @property
    def num_bins(self) -> int:
        """One-sided bin count F."""
        return self.fft_size // 2 + 1

    @property
    def bin_freqs(self) -> np.ndarray:
        """Center frequency in Hz of each bin, shape (F,)."""
        return np.arange(self.num_bins) * self.sample_rate / self.fft_size


def analysis_window(cfg: StftConfig) -> np.ndarray:
    """Periodic analysis window of length fft_size."""
    n = np.arange(cfg.fft_size)
    if cfg.window == "hann":
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / cfg.fft_size)
    if cfg.window == "hamming":
        return 0.54 - 0.46 * np.cos(2 * np.pi * n / cfg.fft_size)
    return np.ones(cfg.fft_size)


@dataclass(frozen=True)
class MultichannelPcm:
    """Time-domain audio, shape (M, S), float64, one row per channel."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        arr = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if arr.ndim != 2:
            raise ValueError(f"samples must be 1-D or (channels, samples), got ndim={arr.ndim}")
        if arr.size == 0:
            raise ValueError("empty PCM input")
        if not np.all(np.isfinite(arr)):
            raise ValueError("PCM contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", arr)

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def channel(self, m: int) -> "MultichannelPcm":
        return MultichannelPcm(self.samples[m : m + 1], self.sample_rate)


@dataclass(frozen=True)
class MultichannelSpectrogram:
    """Complex STFT tensor, shape (M, T, F)."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.complex128)
        if arr.ndim != 3:
            raise ValueError(f"data must be (channels, frames, bins), got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"need at least one channel and one frame, got {arr.shape}")
        if arr.shape[2] != self.config.num_bins:
            raise ValueError(
                f"bin count {arr.shape[2]} does not match config ({self.config.num_bins})"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def num_bins(self) -> int:
        return self.data.shape[2]

    def channel(self, m: int) -> "MultichannelSpectrogram":
        return MultichannelSpectrogram(self.data[m : m + 1], self.config)


def _frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Slice (M, S) into overlapping frames (M, T, fft_size)."""
    size, hop = cfg.fft_size, cfg.hop
    if cfg.center_padding:
        pad = size // 2
        x = np.pad(x, ((0, 0), (pad, pad)))
    if x.shape[1] < size:
        x = np.pad(x, ((0, 0), (0, size - x.shape[1])))
    num_frames = 1 + (x.shape[1] - size) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, size, axis=1)[:, ::hop]
    return frames[:, :num_frames]


def stft(pcm: MultichannelPcm, cfg: StftConfig | None = None) -> MultichannelSpectrogram:
    """Forward STFT of a multichannel signal.

    With center padding, frame t is centered at sample t * hop. Bin 0 and
    the Nyquist bin of the output are real for real input.

    Arguments:
        pcm: input audio, (M, S)
        cfg: framing parameters; pcm.sample_rate must match

    Returns:
        MultichannelSpectrogram with data of shape (M, T, F)
    """
    cfg = cfg or StftConfig()
    if pcm.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: pcm {pcm.sample_rate} Hz vs config {cfg.sample_rate} Hz"
        )
    frames = _frame_signal(pcm.samples, cfg)
    spec = np.fft.rfft(frames * analysis_window(cfg), axis=-1)
    return MultichannelSpectrogram(spec, cfg)


def _ola_window_norm(window: np.ndarray, hop: int, num_frames: int, length: int) -> np.ndarray:
    """Overlap-added squared window, the WOLA normalization denominator."""
    den = np.zeros(length)
    wsq = window**2
    for t in range(num_frames):
        den[t * hop : t * hop + len(window)] += wsq
    return den


def istft(
    spec: MultichannelSpectrogram,
    length: int | None = None,
) -> MultichannelPcm:
    """Inverse STFT by weighted overlap-add.

    Synthesis reuses the analysis window; normalization by the summed
    squared window makes stft -> istft the identity on the region the
    frames cover. Raises if the window/hop pair leaves interior samples
    with no window coverage (reconstruction identity violated).

    Arguments:
        spec: spectrogram to invert
        length: output sample count; defaults to (T - 1) * hop

    Returns:
        MultichannelPcm of shape (M, length)
    """
    cfg = spec.config
    size, hop = cfg.fft_size, cfg.hop
    num_frames = spec.num_frames
    window = analysis_window(cfg)
    padded_len = size + (num_frames - 1) * hop

    den = _ola_window_norm(window, hop, num_frames, padded_len)
    offset = size // 2 if cfg.center_padding else 0
    if length is None:
        length = (num_frames - 1) * hop if num_frames > 1 else padded_len - offset
    if length > padded_len - offset:
        raise ValueError(f"requested length {length} exceeds frame coverage {padded_len - offset}")

    # reject window/hop pairs that violate the overlap-add identity even with
    # unbounded frames (checked on one fully-tiled period, away from edges)
    tiles = 2 * (size // hop + 1) + 1
    periodic = _ola_window_norm(window, hop, tiles, size + (tiles - 1) * hop)
    if periodic[size : size + hop].min() <= 1e-10 * max(periodic.max(), 1e-300):
        raise ValueError(
            f"window {cfg.window!r} with hop {hop} violates the overlap-add "
            "reconstruction identity (zero window coverage at some offsets)"
        )

    frames = np.fft.irfft(spec.data, n=size, axis=-1) * window
    out = np.zeros((spec.num_channels, padded_len))
    for t in range(num_frames):
        out[:, t * hop : t * hop + size] += frames[:, t]
    good = den > 1e-10 * max(den.max(), 1e-300)
    out[:, good] /= den[good]
    out[:, ~good] = 0.0
    return MultichannelPcm(out[:, offset : offset + length], cfg.sample_rate)
