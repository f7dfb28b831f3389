"""Spatial features: steering vectors, IPD, angle features, pre-masking.

All directions are azimuths in degrees, measured counterclockwise from the
positive x axis in the array plane. The reference microphone is index 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .stft import MultichannelSpectrogram, StftConfig

__all__ = [
    "ArrayGeometry",
    "SteeringField",
    "IpdFeature",
    "AngleFeature",
    "SpeakerEmbedding",
    "steering_vector",
    "compute_ipd",
    "angle_feature",
    "pre_mask",
    "assemble_mask_input",
    "angular_distance",
]

EMBEDDING_DIM = 128


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in meters, shape (M, 3). Index 0 is the reference."""

    mic_positions: np.ndarray
    speed_of_sound: float = 343.0

    def __post_init__(self) -> None:
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"mic_positions must be (M, 3), got {pos.shape}")
        if pos.shape[0] < 1:
            raise ValueError("need at least one microphone")
        if not np.all(np.isfinite(pos)):
            raise ValueError("mic positions must be finite")
        if self.speed_of_sound <= 0:
            raise ValueError("speed of sound must be positive")
        object.__setattr__(self, "mic_positions", pos)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]

    @classmethod
    def circular_7ch(cls, radius: float = 0.0425, speed_of_sound: float = 343.0) -> "ArrayGeometry":
        """Preset: 6 mics on a uniform circle plus a center mic at index 0."""
        angles = np.arange(6) * np.pi / 3
        ring = np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(6)], axis=1)
        return cls(np.vstack([np.zeros(3), ring]), speed_of_sound)

    def rotated(self, degrees: float) -> "ArrayGeometry":
        """Geometry rotated about the z axis."""
        a = np.deg2rad(degrees)
        rot = np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])
        return ArrayGeometry(self.mic_positions @ rot.T, self.speed_of_sound)


@dataclass(frozen=True)
class SteeringField:
    """Far-field steering vectors for one DOA, shape (M, F), unit modulus.

    Entry (i, f) is exp(-j 2 pi f_hz tau_i) with tau_i the plane-wave delay
    of mic i relative to mic 0, so the reference row is identically 1.
    """

    doa: float
    vectors: np.ndarray
    elevation: float = 0.0


@dataclass(frozen=True)
class IpdFeature:
    """Inter-microphone phase differences against the reference mic.

    values has shape (P, T, F): one pair per non-reference channel when raw
    (P = M - 1, values in (-pi, pi]), or stacked (cos, sin) mean-removed
    blocks when normalized (P = 2 (M - 1)).

    reference_silent flags (t, f) bins whose reference magnitude is exactly
    zero; the IPD there is 0 by convention.
    """

    values: np.ndarray
    normalized: bool
    reference_silent: np.ndarray

    @property
    def num_pairs(self) -> int:
        return self.values.shape[0] if not self.normalized else self.values.shape[0] // 2


@dataclass(frozen=True)
class AngleFeature:
    """Per-bin agreement with one DOA's steering phases, shape (T, F) in [-1, 1]."""

    values: np.ndarray
    doa: float


@dataclass(frozen=True)
class SpeakerEmbedding:
    """Opaque fixed-dimension speaker vector."""

    vector: np.ndarray
    source_id: str = ""

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float32)
        if vec.shape != (EMBEDDING_DIM,):
            raise ValueError(f"embedding must have {EMBEDDING_DIM} components, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding must be finite")
        object.__setattr__(self, "vector", vec)


def _doa_unit_vector(doa_deg: float, elevation_deg: float = 0.0) -> np.ndarray:
    """Unit vector pointing from the array toward the source."""
    az = np.deg2rad(doa_deg)
    el = np.deg2rad(elevation_deg)
    return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def relative_delays(geom: ArrayGeometry, doa: float, elevation: float = 0.0) -> np.ndarray:
    """Plane-wave delay of each mic relative to mic 0, in seconds, shape (M,).

    Mics displaced toward the source receive the wavefront earlier
    (negative delay).
    """
    u = _doa_unit_vector(doa, elevation)
    offsets = geom.mic_positions - geom.mic_positions[0]
    return -(offsets @ u) / geom.speed_of_sound


def steering_vector(
    geom: ArrayGeometry,
    doa: float,
    cfg: StftConfig | None = None,
    elevation: float = 0.0,
) -> SteeringField:
    """Far-field steering vectors for all bins of the given STFT grid."""
    cfg = cfg or StftConfig()
    doa = float(doa) % 360.0
    tau = relative_delays(geom, doa, elevation)
    # (M, F) phase ramp over bin frequencies
    vectors = np.exp(-2j * np.pi * np.outer(tau, cfg.bin_freqs))
    return SteeringField(doa=doa, vectors=vectors, elevation=elevation)


def _wrap_phase(phi: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - phi, 2 * np.pi)


def compute_ipd(spec: MultichannelSpectrogram, normalize: bool = False) -> IpdFeature:
    """IPD of every channel i >= 1 against channel 0, shape (M-1, T, F).

    Raw values are angle(x_i) - angle(x_0) wrapped to (-pi, pi]. With
    normalize=True the feature is re-expressed as (cos, sin) with the
    per-pair per-frequency temporal mean removed, stacked as
    (2 (M-1), T, F); this sidesteps wrap artifacts of averaging raw angles.
    """
    if spec.num_channels < 2:
        raise ValueError(f"IPD needs at least 2 channels, got {spec.num_channels}")
    x = spec.data
    ref_silent = np.abs(x[0]) == 0.0
    raw = _wrap_phase(np.angle(x[1:]) - np.angle(x[0])[None])
    raw[:, ref_silent] = 0.0
    if not normalize:
        return IpdFeature(values=raw, normalized=False, reference_silent=ref_silent)
    cos = np.cos(raw)
    sin = np.sin(raw)
    cos -= cos.mean(axis=1, keepdims=True)
    sin -= sin.mean(axis=1, keepdims=True)
    return IpdFeature(
        values=np.concatenate([cos, sin], axis=0), normalized=True, reference_silent=ref_silent
    )


def angle_feature(spec: MultichannelSpectrogram, sf: SteeringField) -> AngleFeature:
    """Mean over mic pairs of cos(observed IPD - steering phase), shape (T, F).

    Equals 1 where the observed phases exactly match the steering field.
    Pairs whose reference or own magnitude is zero carry no phase and are
    left out of the mean; bins with no valid pair yield 0.
    """
    if sf.vectors.shape[0] != spec.num_channels:
        raise ValueError(
            f"steering field has {sf.vectors.shape[0]} mics, spectrogram {spec.num_channels}"
        )
    if spec.num_channels < 2:
        raise ValueError("angle feature needs at least 2 channels")
    x = spec.data
    ipd = np.angle(x[1:]) - np.angle(x[0])[None]  # (M-1, T, F)
    steer = np.angle(sf.vectors[1:])[:, None, :]  # (M-1, 1, F)
    agreement = np.cos(ipd - steer)
    valid = (np.abs(x[1:]) > 0.0) & (np.abs(x[0]) > 0.0)[None]
    count = valid.sum(axis=0)
    values = np.where(valid, agreement, 0.0).sum(axis=0) / np.maximum(count, 1)
    values[count == 0] = 0.0
    return AngleFeature(values=values, doa=sf.doa)


def angular_distance(a: float, b: float) -> float:
    """Shortest angular distance between two azimuths, in [0, 180]."""
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def pre_mask(
    target: AngleFeature,
    competitors: Sequence[AngleFeature],
    theta: float = 30.0,
) -> AngleFeature:
    """Zero target bins dominated by competitors more than theta degrees away.

    Competitors within theta of the target DOA are ignored. Among the rest,
    the per-bin max forms the interference feature; target bins that do not
    strictly exceed it are set to zero (ties zero out).
    """
    kept = [c for c in competitors if angular_distance(target.doa, c.doa) > theta]
    if not kept:
        return AngleFeature(values=target.values.copy(), doa=target.doa)
    rival = kept[0].values
    for c in kept[1:]:
        if c.values.shape != target.values.shape:
            raise ValueError("competitor angle features must share the target's shape")
        rival = np.maximum(rival, c.values)
    if rival.shape != target.values.shape:
        raise ValueError("competitor angle features must share the target's shape")
    gated = np.where(target.values > rival, target.values, 0.0)
    return AngleFeature(values=gated, doa=target.doa)


def assemble_mask_input(
    spec: MultichannelSpectrogram,
    ipd: IpdFeature,
    angle: AngleFeature | None = None,
    embedding: SpeakerEmbedding | None = None,
) -> np.ndarray:
    """Per-channel feature tensor for an external mask estimator, (M, T, W).

    Each channel row is [|x_m| (F) | IPD block (P*F) | angle (F, optional) |
    embedding (128, optional, repeated per frame)]; the IPD/angle/embedding
    blocks are shared across channels. For M=7, F=257, raw IPD and no bias
    features the width is (1 + 6) * 257 = 1799.
    """
    M, T, F = spec.data.shape
    if ipd.values.shape[1:] != (T, F):
        raise ValueError(f"IPD frames/bins {ipd.values.shape[1:]} do not match spec {(T, F)}")
    blocks = [ipd.values.transpose(1, 0, 2).reshape(T, -1)]
    if angle is not None:
        if angle.values.shape != (T, F):
            raise ValueError(f"angle feature shape {angle.values.shape} does not match {(T, F)}")
        blocks.append(angle.values)
    if embedding is not None:
        blocks.append(np.tile(embedding.vector.astype(np.float64), (T, 1)))
    shared = np.concatenate(blocks, axis=1)
    mag = np.abs(spec.data)  # (M, T, F)
    out = np.concatenate([mag, np.broadcast_to(shared, (M,) + shared.shape)], axis=2)
    return out.astype(np.float32)
