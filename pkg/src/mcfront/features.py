"""ASR feature transformation: log-mel filterbanks, frame stacking, GMVN.

Pipeline shape law with defaults: 512-point FFT -> 257 bins -> 80 mels
-> 240-dim superframes (3 stacked frames) -> normalized features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rasterfile import load_raster
from .stft import MultichannelSpectrogram

__all__ = [
    "GmvnStats",
    "mel_filterbank",
    "log_mel",
    "frame2superframe",
    "gmvn",
    "compute_gmvn_stats",
    "save_gmvn_stats",
    "load_gmvn_stats",
]

GMVN_MAGIC = b"GMV1"
VARIANCE_FLOOR = 1e-8


@dataclass(frozen=True)
class GmvnStats:
    """Global per-dimension mean/variance with provenance."""

    mean: np.ndarray
    variance: np.ndarray
    frame_count: int
    source_tag: str = ""

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        var = np.maximum(np.asarray(self.variance, dtype=np.float64).reshape(-1), VARIANCE_FLOOR)
        if mean.shape != var.shape:
            raise ValueError(f"mean/variance dims differ: {mean.shape} vs {var.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _hz_to_mel(f: np.ndarray | float) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m: np.ndarray) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    num_bins: int,
    sample_rate: int,
    n_mels: int = 80,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> np.ndarray:
    """Triangular mel filters (HTK mel scale), shape (n_mels, num_bins).

    Filters peak at 1 and partition unity between the first and last filter
    centers.
    """
    fmax = sample_rate / 2 if fmax is None else fmax
    fft_size = 2 * (num_bins - 1)
    bin_hz = np.arange(num_bins) * sample_rate / fft_size
    edges_hz = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    weights = np.zeros((n_mels, num_bins))
    for k in range(n_mels):
        lo, mid, hi = edges_hz[k], edges_hz[k + 1], edges_hz[k + 2]
        rising = (bin_hz - lo) / max(mid - lo, 1e-12)
        falling = (hi - bin_hz) / max(hi - mid, 1e-12)
        weights[k] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def log_mel(
    spec: MultichannelSpectrogram,
    n_mels: int = 80,
    floor: float = 1e-10,
) -> np.ndarray:
    """Log power-domain mel features of a single-channel spectrogram, (T, n_mels)."""
    if spec.num_channels != 1:
        raise ValueError(f"log_mel expects a single channel, got {spec.num_channels}")
    fb = mel_filterbank(spec.num_bins, spec.config.sample_rate, n_mels=n_mels)
    power = np.abs(spec.data[0]) ** 2  # (T, F)
    return np.log(power @ fb.T + floor)


def frame2superframe(feat: np.ndarray, p: int = 3, stride: int | None = None) -> np.ndarray:
    """Stack p consecutive frames into superframes, decimating by stride.

    Output frame k concatenates input frames [k*stride, k*stride + p);
    indices past the end repeat the last frame. stride defaults to p, so
    the frame rate drops by p (p=1 is the identity).
    """
    feat = np.asarray(feat)
    if feat.ndim != 2 or feat.shape[0] < 1:
        raise ValueError(f"features must be a non-empty (T, D) array, got {feat.shape}")
    if p < 1:
        raise ValueError("p must be >= 1")
    stride = p if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    T = feat.shape[0]
    starts = np.arange(0, T, stride)
    idx = np.minimum(starts[:, None] + np.arange(p)[None, :], T - 1)
    return feat[idx].reshape(len(starts), -1)


def gmvn(feat: np.ndarray, stats: GmvnStats) -> np.ndarray:
    """Per-dimension (x - mean) / sqrt(variance)."""
    feat = np.asarray(feat)
    if feat.shape[-1] != stats.dim:
        raise ValueError(f"feature dim {feat.shape[-1]} does not match stats dim {stats.dim}")
    return (feat - stats.mean) / np.sqrt(stats.variance)


def compute_gmvn_stats(
    corpus: Iterable[np.ndarray | str | Path],
    source_tag: str = "",
) -> GmvnStats:
    """Single-pass mean/variance over a corpus of (T, D) feature arrays.

    Entries may be arrays or paths to raster feature files. Accumulation
    uses pairwise (Chan) combination for numerical stability; variance is
    the population variance, floored at 1e-8.
    """
    count = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None
    for entry in corpus:
        arr = load_raster(entry) if isinstance(entry, (str, Path)) else np.asarray(entry)
        arr = arr.astype(np.float64).reshape(arr.shape[0], -1)
        if arr.shape[0] == 0:
            continue
        c_n = arr.shape[0]
        c_mean = arr.mean(axis=0)
        c_m2 = ((arr - c_mean) ** 2).sum(axis=0)
        if mean is None:
            count, mean, m2 = c_n, c_mean, c_m2
            continue
        if arr.shape[1] != mean.shape[0]:
            raise ValueError(f"feature dim changed across corpus: {arr.shape[1]} vs {mean.shape[0]}")
        delta = c_mean - mean
        total = count + c_n
        mean = mean + delta * (c_n / total)
        m2 = m2 + c_m2 + delta**2 * (count * c_n / total)
        count = total
    if mean is None or m2 is None:
        raise ValueError("empty corpus")
    return GmvnStats(mean=mean, variance=m2 / count, frame_count=count, source_tag=source_tag)


def save_gmvn_stats(stats: GmvnStats, path: str | Path) -> None:
    """Write a GMV1 stats file: magic, u32 dim, f64 mean[], f64 var[], u64 frames."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(GMVN_MAGIC)
        fh.write(struct.pack("<I", stats.dim))
        fh.write(np.ascontiguousarray(stats.mean, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(stats.variance, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", stats.frame_count))


def load_gmvn_stats(path: str | Path) -> GmvnStats:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != GMVN_MAGIC:
            raise ValueError(f"bad magic in {path}, expected GMV1")
        (dim,) = struct.unpack("<I", fh.read(4))
        mean = np.frombuffer(fh.read(8 * dim), dtype="<f8")
        var = np.frombuffer(fh.read(8 * dim), dtype="<f8")
        if mean.size != dim or var.size != dim:
            raise ValueError(f"truncated GMV1 file {path}")
        tail = fh.read(8)
        if len(tail) != 8:
            raise ValueError(f"truncated GMV1 file {path} (missing frame count)")
        (frames,) = struct.unpack("<Q", tail)
    return GmvnStats(mean=mean.copy(), variance=var.copy(), frame_count=frames,
                     source_tag=str(path))
