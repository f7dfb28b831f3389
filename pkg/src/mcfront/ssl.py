"""Grid-search sound source localization over azimuth.

Steered response power with phase-transform weighting, scored on all mic
pairs against the far-field steering grid; the argmax is the DOA estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spatial import ArrayGeometry, relative_delays
from .stft import MultichannelSpectrogram

__all__ = ["DoaEstimate", "localize"]


@dataclass(frozen=True)
class DoaEstimate:
    """Azimuth snapped to the search grid plus the full score curve."""

    azimuth: float
    score: float
    score_curve: np.ndarray
    resolution: float

    @property
    def grid(self) -> np.ndarray:
        return np.arange(len(self.score_curve)) * self.resolution

    @property
    def peak_to_mean(self) -> float:
        """Flatness diagnostic; near 1 for direction-free (diffuse) input."""
        mean = float(np.mean(self.score_curve))
        if mean == 0.0:
            return float("inf")
        return float(self.score / mean)


def localize(
    spec: MultichannelSpectrogram,
    geom: ArrayGeometry,
    resolution: float = 3.0,
    phase_transform: bool = True,
    fmin: float = 125.0,
    fmax: float = 7600.0,
    floor_percentile: float | None = 90.0,
    frame_quantile: float | None = 0.75,
) -> DoaEstimate:
    """Estimate the source azimuth by steered response power.

    For each grid azimuth the score sums Re(cross-spectrum x steering
    conjugate) over frames, scoring-band bins and all mic pairs; with
    phase_transform each cross-spectrum bin is magnitude-normalized first
    (PHAT). Two robustness gates temper pure PHAT, which would give full
    weight to signal-free bins whose phase is noise: only frames whose
    reference-channel band energy reaches frame_quantile are scored, and
    the PHAT normalizer is floored at the floor_percentile of the
    cross-spectral magnitudes (None disables either). The scoring band
    defaults to 125-7600 Hz.

    Arguments:
        spec: observation, (M, T, F), M >= 2
        geom: array geometry matching the channel order
        resolution: grid step in degrees; must divide 360

    Returns:
        DoaEstimate with the argmax azimuth and the full score curve
    """
    M = spec.num_channels
    if M < 2:
        raise ValueError("localization needs at least 2 channels")
    if geom.num_mics != M:
        raise ValueError(f"geometry has {geom.num_mics} mics, spectrogram {M}")
    if resolution <= 0 or abs(360.0 / resolution - round(360.0 / resolution)) > 1e-9:
        raise ValueError(f"resolution must divide 360, got {resolution}")

    freqs = spec.config.bin_freqs
    band = (freqs >= fmin) & (freqs <= fmax)
    if not band.any():
        raise ValueError(f"empty scoring band [{fmin}, {fmax}] Hz")
    x = spec.data[:, :, band]  # (M, T, Fb)
    fb = freqs[band]
    if frame_quantile is not None and x.shape[1] > 1:
        energy = np.mean(np.abs(x[0]) ** 2, axis=1)
        x = x[:, energy >= np.quantile(energy, frame_quantile)]

    pairs = [(i, j) for i in range(M) for j in range(i + 1, M)]
    ii = [p[0] for p in pairs]
    jj = [p[1] for p in pairs]
    cross = x[ii] * x[jj].conj()  # (P, T, Fb)
    if phase_transform:
        mag = np.abs(cross)
        floor = np.percentile(mag, floor_percentile) if floor_percentile else 0.0
        cross = np.where(mag > 0, cross / np.maximum(mag, max(floor, 1e-300)), 0.0)
    summed = cross.sum(axis=1)  # (P, Fb)

    grid = np.arange(0.0, 360.0, resolution)
    # relative delay difference per pair for each grid point: (A, P)
    taus = np.stack([relative_delays(geom, az) for az in grid])  # (A, M)
    pair_tau = taus[:, ii] - taus[:, jj]
    # expected pair phase term exp(-j 2 pi f (tau_i - tau_j)): (A, P, Fb)
    steer = np.exp(-2j * np.pi * pair_tau[:, :, None] * fb[None, None, :])
    scores = np.einsum("pf,apf->a", summed, steer.conj()).real

    best = int(np.argmax(scores))
    return DoaEstimate(
        azimuth=float(grid[best]),
        score=float(scores[best]),
        score_curve=scores,
        resolution=float(resolution),
    )
