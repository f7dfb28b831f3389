"""Shared test helpers: independent signal synthesis and references."""

import numpy as np
import pytest

from mcfront import ArrayGeometry, StftConfig


def fractional_delay(x: np.ndarray, delay_samples: float) -> np.ndarray:
    """Delay a 1-D signal by a (possibly fractional) number of samples.

    Uses a full-length zero-padded DFT phase ramp, independent of the
    package's STFT and RIR code paths.
    """
    n = len(x)
    pad = int(np.ceil(abs(delay_samples))) + 8
    buf = np.concatenate([x, np.zeros(pad)])
    spec = np.fft.rfft(buf)
    freqs = np.arange(len(spec)) / len(buf)
    return np.fft.irfft(spec * np.exp(-2j * np.pi * freqs * delay_samples), n=len(buf))[:n]


def multitone(duration: float, sample_rate: int, bins: list[int], fft_size: int = 512,
              rng: np.random.Generator | None = None) -> np.ndarray:
    """Sum of unit sinusoids centered on exact STFT bins (low leakage)."""
    rng = rng or np.random.default_rng(0)
    t = np.arange(int(duration * sample_rate)) / sample_rate
    sig = np.zeros_like(t)
    for b in bins:
        f = b * sample_rate / fft_size
        sig += np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return sig / len(bins)


def plane_wave_capture(
    source: np.ndarray,
    geom: ArrayGeometry,
    doa_deg: float,
    sample_rate: int,
) -> np.ndarray:
    """Anechoic far-field capture of a mono source, shape (M, S).

    Each channel is the source delayed by the plane-wave delay relative to
    mic 0 (full-signal DFT delay, independent of the package steering code).
    """
    az = np.deg2rad(doa_deg)
    u = np.array([np.cos(az), np.sin(az), 0.0])
    offsets = geom.mic_positions - geom.mic_positions[0]
    taus = -(offsets @ u) / geom.speed_of_sound * sample_rate
    return np.stack([fractional_delay(source, tau) for tau in taus])


@pytest.fixture
def cfg() -> StftConfig:
    return StftConfig()


@pytest.fixture
def geometry() -> ArrayGeometry:
    return ArrayGeometry.circular_7ch()
