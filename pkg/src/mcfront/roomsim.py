"""Image-method room simulation, diffuse noise, and overlap generation.

Covers the meeting-simulation recipe: sample a room and speaker layout,
derive array RIRs with the image method, convolve close-talk segments, add
spatially diffuse noise at a sampled SNR, and normalize; plus the overlap
generator that mixes trimmed same-session interference into a base segment
while keeping its transcript.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .spatial import ArrayGeometry
from .stft import MultichannelPcm, MultichannelSpectrogram, StftConfig, istft, stft

__all__ = [
    "RoomConfig",
    "SourceSegment",
    "SimSegment",
    "SimulationResult",
    "PlacementError",
    "sample_room",
    "image_rir",
    "array_rirs",
    "diffuse_noise",
    "simulate_session",
    "mix_overlap",
    "speech_like",
]

SPEED_OF_SOUND = 343.0

DIMS_RANGE = (np.array([4.0, 4.0, 2.0]), np.array([10.0, 10.0, 5.0]))
RT60_RANGE = (0.15, 0.6)
ARRAY_HEIGHT_RANGE = (1.0, 1.5)
MIN_SPEAKER_DISTANCE = 1.0


class PlacementError(RuntimeError):
    """Raised when constrained random placement fails after bounded retries."""


@dataclass(frozen=True)
class RoomConfig:
    """One sampled room: dimensions, reverberation, array and speaker layout."""

    dims: np.ndarray
    rt60: float
    array_center: np.ndarray  # (x, y) in meters
    array_height: float
    speaker_positions: np.ndarray  # (num_speakers, 3)
    seed: int = 0

    def __post_init__(self) -> None:
        dims = np.asarray(self.dims, dtype=np.float64)
        center = np.asarray(self.array_center, dtype=np.float64)
        speakers = np.asarray(self.speaker_positions, dtype=np.float64).reshape(-1, 3)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError(f"room dims must be 3 positive lengths, got {dims}")
        if self.rt60 < 0:
            raise ValueError(f"rt60 must be non-negative, got {self.rt60}")
        if center.shape != (2,):
            raise ValueError("array_center must be (x, y)")
        array_pos = np.array([center[0], center[1], self.array_height])
        for label, pos in [("array", array_pos)] + [
            (f"speaker {k}", speakers[k]) for k in range(len(speakers))
        ]:
            if np.any(pos <= 0) or np.any(pos >= dims):
                raise ValueError(f"{label} position {pos} not strictly inside room {dims}")
        dists = np.linalg.norm(speakers - array_pos, axis=1)
        if len(dists) and dists.min() < MIN_SPEAKER_DISTANCE - 1e-9:
            raise ValueError(
                f"speaker-to-array distance {dists.min():.3f} m below {MIN_SPEAKER_DISTANCE} m"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "array_center", center)
        object.__setattr__(self, "speaker_positions", speakers)

    @property
    def num_speakers(self) -> int:
        return self.speaker_positions.shape[0]

    @property
    def array_position(self) -> np.ndarray:
        return np.array([self.array_center[0], self.array_center[1], self.array_height])

    def speaker_azimuths(self) -> np.ndarray:
        """True DOA of each speaker as seen from the array, degrees in [0, 360)."""
        rel = self.speaker_positions - self.array_position
        return np.degrees(np.arctan2(rel[:, 1], rel[:, 0])) % 360.0


def sample_room(
    num_speakers: int,
    seed: int,
    max_retries: int = 200,
    wall_margin: float = 0.3,
) -> RoomConfig:
    """Draw a room layout: uniform dims, RT60 and array height, constrained speakers.

    Speakers are placed uniformly inside the room (mouth height 1.0-1.8 m)
    subject to a >= 1 m distance from the array; placement failures after
    bounded retries raise PlacementError rather than relaxing a constraint.
    """
    if num_speakers < 1:
        raise ValueError("need at least one speaker")
    rng = np.random.default_rng(seed)
    dims = rng.uniform(DIMS_RANGE[0], DIMS_RANGE[1])
    rt60 = rng.uniform(*RT60_RANGE)
    array_height = rng.uniform(*ARRAY_HEIGHT_RANGE)
    array_center = rng.uniform([wall_margin, wall_margin], dims[:2] - wall_margin)
    array_pos = np.array([array_center[0], array_center[1], array_height])

    z_hi = min(1.8, dims[2] - wall_margin)
    speakers = []
    for k in range(num_speakers):
        for _ in range(max_retries):
            pos = np.array(
                [
                    rng.uniform(wall_margin, dims[0] - wall_margin),
                    rng.uniform(wall_margin, dims[1] - wall_margin),
                    rng.uniform(1.0, z_hi),
                ]
            )
            if np.linalg.norm(pos - array_pos) >= MIN_SPEAKER_DISTANCE:
                speakers.append(pos)
                break
        else:
            raise PlacementError(
                f"could not place speaker {k} with >= {MIN_SPEAKER_DISTANCE} m "
                f"array distance in room {dims} after {max_retries} tries"
            )
    return RoomConfig(
        dims=dims,
        rt60=rt60,
        array_center=array_center,
        array_height=array_height,
        speaker_positions=np.array(speakers),
        seed=seed,
    )


def _reflection_coefficient(room: RoomConfig) -> float:
    """Uniform wall reflection coefficient from RT60 by Sabine inversion.

    Sabine (alpha = 0.1611 V / (S RT60)) rather than Eyring: the image
    method's direction-dependent decay runs slow against Eyring-derived
    coefficients, while Sabine-derived ones land on the requested RT60.
    """
    if room.rt60 <= 0:
        return 0.0
    lx, ly, lz = room.dims
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = min(0.1611 * volume / (surface * room.rt60), 1.0)
    return float(np.sqrt(1.0 - alpha))


def _frac_delay_kernel(offsets: np.ndarray, taps: int, rel_cutoff: float) -> np.ndarray:
    """Hann-windowed sinc kernel values at integer taps around fractional delays.

    offsets: (..., taps) tap position minus the exact delay, in samples.
    At integer delays and rel_cutoff=1 the kernel collapses to a single
    unit tap.
    """
    window = 0.5 * (1.0 + np.cos(2.0 * np.pi * offsets / taps))
    return window * rel_cutoff * np.sinc(rel_cutoff * offsets)


def _enumerate_images(
    room: RoomConfig,
    src: np.ndarray,
    max_dist: float,
    max_images: int,
) -> tuple[np.ndarray, np.ndarray]:
    """All image-source positions within reach and their reflection orders.

    Returns (positions (K, 3), reflection exponent (K,)).
    """
    dims = room.dims
    n = np.ceil(max_dist / (2.0 * dims)).astype(int) + 1
    count = int(np.prod(2 * n + 1)) * 8
    if count > max_images:
        raise ValueError(
            f"image count {count} exceeds cap {max_images}; shorten the RIR or "
            "raise max_images"
        )
    axes = [np.arange(-n[a], n[a] + 1) for a in range(3)]
    r = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    positions = []
    orders = []
    for px in (0, 1):
        for py in (0, 1):
            for pz in (0, 1):
                p = np.array([px, py, pz])
                pos = (1 - 2 * p) * src + 2.0 * r * dims
                # image (1-2p)s + 2rL bounces |r - p| times off the near
                # walls and |r| times off the far walls
                order = np.abs(r - p).sum(axis=1) + np.abs(r).sum(axis=1)
                positions.append(pos)
                orders.append(order)
    return np.concatenate(positions), np.concatenate(orders)


def _scatter_rirs(
    images: np.ndarray,
    orders: np.ndarray,
    beta: float,
    mics: np.ndarray,
    num_samples: int,
    sample_rate: int,
    taps: int,
    rel_cutoff: float,
    chunk: int = 32768,
) -> np.ndarray:
    """Accumulate fractional-delay taps of every image into (M, num_samples)."""
    half = taps // 2
    out = np.zeros((len(mics), num_samples))
    tap_offsets = np.arange(taps) - half
    for start in range(0, len(images), chunk):
        img = images[start : start + chunk]
        refl = beta ** orders[start : start + chunk].astype(np.float64)
        live = refl > 0.0
        if not live.any():
            continue
        img, refl = img[live], refl[live]
        for m, mic in enumerate(mics):
            dist = np.linalg.norm(img - mic, axis=1)
            delay = dist / SPEED_OF_SOUND * sample_rate
            keep = delay - half < num_samples
            if not keep.any():
                continue
            d, amp = delay[keep], refl[keep] / (4.0 * np.pi * dist[keep])
            base = np.round(d).astype(np.int64)[:, None] + tap_offsets[None, :]
            vals = amp[:, None] * _frac_delay_kernel(base - d[:, None], taps, rel_cutoff)
            inside = (base >= 0) & (base < num_samples)
            out[m] += np.bincount(
                base[inside], weights=vals[inside], minlength=num_samples
            )
    return out


def image_rir(
    room: RoomConfig,
    src: np.ndarray,
    mic: np.ndarray,
    duration: float | None = None,
    max_order: int | None = None,
    sample_rate: int = 16000,
    taps: int = 81,
    rel_cutoff: float = 1.0,
    max_images: int = 20_000_000,
) -> np.ndarray:
    """Image-method impulse response between one source and one mic.

    Wall reflectivity comes from the room RT60 (Eyring); the RIR length
    defaults to direct delay + RT60 + 20 ms so the tail covers the decay.
    Taps are placed with an 81-point windowed-sinc fractional-delay kernel,
    so the direct path lands at distance/c with sub-sample accuracy and
    amplitude 1/(4 pi d).

    Arguments:
        src, mic: positions in meters, strictly inside the room
        duration: RIR length in seconds (overrides the RT60-derived default)
        max_order: optional cap on images per axis instead of the
            distance-derived order

    Returns:
        float64 array of length round(duration * sample_rate)
    """
    return array_rirs(
        room,
        src,
        np.asarray(mic, dtype=np.float64)[None, :],
        duration=duration,
        max_order=max_order,
        sample_rate=sample_rate,
        taps=taps,
        rel_cutoff=rel_cutoff,
        max_images=max_images,
    )[0]


def array_rirs(
    room: RoomConfig,
    src: np.ndarray,
    mics: np.ndarray,
    duration: float | None = None,
    max_order: int | None = None,
    sample_rate: int = 16000,
    taps: int = 81,
    rel_cutoff: float = 1.0,
    max_images: int = 20_000_000,
) -> np.ndarray:
    """Image-method RIRs from one source to several mics, shape (M, L).

    Shares the image enumeration across microphones; see image_rir.
    """
    src = np.asarray(src, dtype=np.float64)
    mics = np.asarray(mics, dtype=np.float64).reshape(-1, 3)
    for label, pos in [("source", src)] + [(f"mic {m}", mics[m]) for m in range(len(mics))]:
        if np.any(pos <= 0) or np.any(pos >= room.dims):
            raise ValueError(f"{label} position {pos} outside room {room.dims}")
    if np.any(np.linalg.norm(mics - src, axis=1) == 0):
        raise ValueError("source and microphone coincide")

    direct = np.linalg.norm(mics - src, axis=1).max() / SPEED_OF_SOUND
    if duration is None:
        duration = direct + room.rt60 + 0.02
    num_samples = max(int(round(duration * sample_rate)), taps)
    beta = _reflection_coefficient(room)

    if max_order is not None:
        max_dist = 2.0 * max_order * float(room.dims.max()) + float(np.linalg.norm(room.dims))
    else:
        # reach every image whose delay fits the RIR, plus kernel slack
        max_dist = (num_samples + taps) / sample_rate * SPEED_OF_SOUND
    images, orders = _enumerate_images(room, src, max_dist, max_images)
    if max_order is not None:
        keep = orders <= max_order
        images, orders = images[keep], orders[keep]
    return _scatter_rirs(
        images, orders, beta, mics, num_samples, sample_rate, taps, rel_cutoff
    )


def diffuse_noise(
    geom: ArrayGeometry,
    duration: float,
    sample_rate: int = 16000,
    spectrum: str = "white",
    seed: int | np.random.Generator | None = None,
    nfft: int = 512,
) -> MultichannelPcm:
    """Multichannel noise with spherically isotropic spatial coherence.

    Independent white channels are mixed per frequency with a square root
    of the sinc coherence matrix Gamma_ij(f) = sinc(2 f d_ij / c), then
    resynthesized; the output is scaled to unit global standard deviation.

    spectrum: "white" or "pink" (1/f power shaping above 50 Hz).
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if spectrum not in ("white", "pink"):
        raise ValueError(f"unknown spectrum {spectrum!r}")
    rng = np.random.default_rng(seed)
    M = geom.num_mics
    n = int(round(duration * sample_rate))
    cfg = StftConfig(sample_rate=sample_rate, fft_size=nfft, hop=nfft // 2, window="hann")
    freqs = cfg.bin_freqs

    raw = rng.standard_normal((M, n + 2 * nfft))
    spec = stft(MultichannelPcm(raw, sample_rate), cfg)
    data = spec.data  # (M, T, F)

    if M > 1:
        pos = geom.mic_positions
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        mixed = np.empty_like(data)
        for fi, f_hz in enumerate(freqs):
            gamma = np.sinc(2.0 * f_hz * dist / geom.speed_of_sound)
            lam, vec = np.linalg.eigh(gamma)
            root = (vec * np.sqrt(np.maximum(lam, 0.0))) @ vec.T
            mixed[:, :, fi] = root @ data[:, :, fi]
        data = mixed

    if spectrum == "pink":
        shaping = 1.0 / np.sqrt(np.maximum(freqs, 50.0))
        data = data * shaping[None, None, :]

    out = istft(MultichannelSpectrogram(data, cfg), length=n + nfft)
    samples = out.samples[:, nfft // 2 : nfft // 2 + n]
    std = samples.std()
    if std > 0:
        samples = samples / std
    return MultichannelPcm(samples, sample_rate)


@dataclass(frozen=True)
class SourceSegment:
    """Close-talk (mono) source material for one speaker turn."""

    speaker_id: str
    samples: np.ndarray
    transcript: str = ""
    start: float = 0.0
    end: float = 0.0


@dataclass(frozen=True)
class SimSegment:
    """One simulated or mixed 7-channel segment with its metadata."""

    audio: MultichannelPcm
    transcript: str
    speaker_id: str
    session_id: str
    start: float
    end: float
    overlap_ratio: float = 0.0
    doa_truth: float | None = None


@dataclass(frozen=True)
class SimulationResult:
    segments: list[SimSegment]
    skipped: list[dict] = field(default_factory=list)
    references: list[dict] | None = None


def simulate_session(
    room: RoomConfig,
    close_talk: Sequence[SourceSegment],
    geom: ArrayGeometry,
    session_id: str = "session0",
    snr_range: tuple[float, float] = (-5.0, 10.0),
    sample_rate: int = 16000,
    seed: int = 0,
    keep_references: bool = False,
    rir_duration: float | None = None,
    peak_dbfs: float = -3.0,
) -> SimulationResult:
    """Render close-talk segments through the room and add diffuse noise.

    Each segment is convolved with its speaker's array RIRs, diffuse noise
    is added at a per-segment SNR drawn from snr_range (speech power vs.
    noise power over the segment), and the whole session is peak-normalized
    to peak_dbfs. Silent source segments are skipped and reported.

    speaker_id values must be "0".."num_speakers-1" referring to
    room.speaker_positions rows.
    """
    speaker_ids = sorted({s.speaker_id for s in close_talk})
    for sid in speaker_ids:
        if not sid.isdigit() or int(sid) >= room.num_speakers:
            raise ValueError(f"speaker_id {sid!r} has no position in the room config")
    mics = room.array_position[None, :] + geom.mic_positions
    rirs = {
        sid: array_rirs(room, room.speaker_positions[int(sid)], mics,
                        duration=rir_duration, sample_rate=sample_rate)
        for sid in speaker_ids
    }
    azimuths = room.speaker_azimuths()

    segments: list[SimSegment] = []
    skipped: list[dict] = []
    refs: list[dict] = []
    for idx, seg in enumerate(close_talk):
        mono = np.asarray(seg.samples, dtype=np.float64).reshape(-1)
        if mono.size == 0 or not np.any(mono):
            skipped.append({"index": idx, "speaker_id": seg.speaker_id, "reason": "silent source"})
            continue
        rng = np.random.default_rng([seed, idx])
        reverb = fftconvolve(mono[None, :], rirs[seg.speaker_id], axes=1)[:, : mono.size]
        speech_power = np.mean(reverb**2)
        snr_db = rng.uniform(*snr_range)
        noise = diffuse_noise(geom, mono.size / sample_rate, sample_rate, seed=rng).samples
        noise = noise[:, : mono.size]
        noise_power = np.mean(noise**2)
        gain = np.sqrt(speech_power / (noise_power * 10.0 ** (snr_db / 10.0)))
        mix = reverb + gain * noise
        segments.append(
            SimSegment(
                audio=MultichannelPcm(mix, sample_rate),
                transcript=seg.transcript,
                speaker_id=seg.speaker_id,
                session_id=session_id,
                start=seg.start,
                end=seg.end,
                doa_truth=float(azimuths[int(seg.speaker_id)]),
            )
        )
        if keep_references:
            refs.append({"reverberant": reverb, "noise": gain * noise, "snr_db": snr_db})

    peak = max((np.abs(s.audio.samples).max() for s in segments), default=0.0)
    if peak > 0:
        scale = 10.0 ** (peak_dbfs / 20.0) / peak
        segments = [
            replace(s, audio=MultichannelPcm(s.audio.samples * scale, sample_rate))
            for s in segments
        ]
        for r in refs:
            r["reverberant"] = r["reverberant"] * scale
            r["noise"] = r["noise"] * scale
    return SimulationResult(segments, skipped, refs if keep_references else None)


def mix_overlap(
    base: SimSegment,
    interferer: SimSegment,
    ratio: float,
    seed: int | None = None,
    placement: str = "end",
) -> SimSegment:
    """Add a trimmed interference span from another speaker onto a base segment.

    The interference is trimmed to ratio * len(base) samples and added to a
    contiguous span of the base signal, aligned to the base's end by
    default ("random" draws the span start from seed). The transcript is
    the base's, unchanged; overlap_ratio records the span actually mixed.
    """
    if base.speaker_id == interferer.speaker_id:
        raise ValueError("interference must come from a different speaker")
    if base.session_id != interferer.session_id:
        raise ValueError("interference must come from the same session")
    if base.audio.num_channels != interferer.audio.num_channels:
        raise ValueError(
            f"channel mismatch: base {base.audio.num_channels} vs "
            f"interferer {interferer.audio.num_channels}"
        )
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"overlap ratio must be in (0, 1], got {ratio}")
    base_len = base.audio.num_samples
    span = min(max(int(round(ratio * base_len)), 1), base_len, interferer.audio.num_samples)
    if placement == "end":
        start = base_len - span
    elif placement == "random":
        start = int(np.random.default_rng(seed).integers(0, base_len - span + 1))
    else:
        raise ValueError(f"unknown placement {placement!r}")
    mixed = base.audio.samples.copy()
    mixed[:, start : start + span] += interferer.audio.samples[:, :span]
    return replace(
        base,
        audio=MultichannelPcm(mixed, base.audio.sample_rate),
        overlap_ratio=span / base_len,
    )


def speech_like(
    duration: float,
    sample_rate: int = 16000,
    seed: int | np.random.Generator | None = None,
) -> np.ndarray:
    """Synthetic speech-shaped test material: drifting harmonics with
    syllabic amplitude modulation, pauses, and noise bursts.

    Returns a mono float64 array with peak 0.3. Used as close-talk
    surrogate by the simulator CLI, scripts, and tests.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    def smooth(rate_hz: float) -> np.ndarray:
        knots = max(int(duration * rate_hz) + 2, 2)
        return np.interp(t, np.linspace(0.0, duration, knots), rng.standard_normal(knots))

    f0 = (120.0 + 60.0 * rng.random()) * (1.0 + 0.08 * smooth(2.0))
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    voiced = sum(np.sin(k * phase) / k for k in range(1, 13))
    env_v = np.maximum(smooth(4.0), 0.0)
    env_u = np.maximum(smooth(6.0) - 0.8, 0.0)
    noise = rng.standard_normal(n)
    sig = env_v * voiced + 2.0 * env_u * noise
    peak = np.abs(sig).max()
    if peak == 0.0:  # pathological envelope draw: fall back to faint noise
        sig = 0.01 * noise
        peak = np.abs(sig).max()
    return 0.3 * sig / peak
