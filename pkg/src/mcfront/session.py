"""Session-level orchestration: bias estimation, enhancement, reporting.

A session manifest (JSON) lists 7-channel segment WAVs with speaker labels
and timings. Per speaker, the DOA (and optionally a speaker embedding
sidecar) is estimated once from the longest non-overlapped segment and
applied to every segment of that speaker, mirroring offline meeting
decoding. Segment processing chains the full front-end:

    stft -> angle feature -> pre-mask gate -> masks -> average ->
    PSD -> MVDR -> beamform -> istft (wav) and log-mel -> stack -> GMVN
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .beamformer import BeamformerWeights, apply_beamformer, estimate_psd, mvdr_weights
from .features import (
    GmvnStats,
    compute_gmvn_stats,
    frame2superframe,
    gmvn,
    log_mel,
)
from .masks import TwoHeadMask, average_masks, load_masks, oracle_irm, save_masks
from .rasterfile import load_embedding, save_raster
from .spatial import (
    AngleFeature,
    ArrayGeometry,
    SpeakerEmbedding,
    angle_feature,
    angular_distance,
    steering_vector,
)
from .ssl import DoaEstimate, localize
from .stft import MultichannelPcm, MultichannelSpectrogram, StftConfig, istft, stft
from .wavio import read_wav, write_wav

__all__ = [
    "PipelineConfig",
    "SegmentInfo",
    "SessionMetadata",
    "BiasInfo",
    "SegmentResult",
    "read_manifest",
    "write_manifest",
    "derive_overlap_flags",
    "estimate_session_bias",
    "process_segment",
    "si_snr",
    "run_session",
]


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs shared by the CLI and the session runner."""

    stft: StftConfig = field(default_factory=StftConfig)
    geometry: ArrayGeometry = field(default_factory=ArrayGeometry.circular_7ch)
    theta: float = 30.0
    resolution: float = 3.0
    diag_load: float = 1e-6
    premask: bool = True
    reference_channel: int = 0
    normalize_psd: bool = False
    mask_exponent: float = 1.0
    n_mels: int = 80
    stack: int = 3
    overlap_guard: float = 0.0


@dataclass(frozen=True)
class SegmentInfo:
    """One manifest row."""

    segment_id: str
    speaker_id: str
    start: float
    end: float
    wav: str
    transcript: str = ""
    overlap_ratio: float = 0.0
    doa_truth: float | None = None
    clean_wav: str | None = None
    overlapped: bool = False

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class SessionMetadata:
    session_id: str
    speakers: tuple[str, ...]
    segments: tuple[SegmentInfo, ...]

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.segments, key=lambda s: (s.start, s.segment_id)))
        object.__setattr__(self, "segments", ordered)


@dataclass(frozen=True)
class BiasInfo:
    """Per-speaker session bias: DOA estimate plus optional embedding."""

    doa: DoaEstimate
    embedding: SpeakerEmbedding | None
    provenance: str
    from_overlapped: bool = False


def derive_overlap_flags(
    segments: Sequence[SegmentInfo], guard: float = 0.0
) -> tuple[SegmentInfo, ...]:
    """Mark segments whose interval intersects another speaker's segment.

    Intersections must exceed the guard band (seconds) to count.
    """
    out = []
    for seg in segments:
        overlapped = any(
            other.speaker_id != seg.speaker_id
            and min(seg.end, other.end) - max(seg.start, other.start) > guard
            for other in segments
        )
        out.append(
            SegmentInfo(**{**seg.__dict__, "overlapped": overlapped})
        )
    return tuple(out)


def read_manifest(path: str | Path) -> SessionMetadata:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    segments = []
    for idx, row in enumerate(doc.get("segments", [])):
        segments.append(
            SegmentInfo(
                segment_id=row.get("segment_id", f"seg{idx:04d}"),
                speaker_id=str(row["speaker_id"]),
                start=float(row["start"]),
                end=float(row["end"]),
                wav=row["wav"],
                transcript=row.get("transcript", ""),
                overlap_ratio=float(row.get("overlap_ratio", 0.0)),
                doa_truth=row.get("doa_truth"),
                clean_wav=row.get("clean_wav"),
            )
        )
    speakers = tuple(str(s) for s in doc.get("speakers", sorted({s.speaker_id for s in segments})))
    return SessionMetadata(session_id=doc.get("session_id", path.stem), speakers=speakers,
                           segments=tuple(segments))


def write_manifest(session: SessionMetadata, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for seg in session.segments:
        row = {
            "segment_id": seg.segment_id,
            "speaker_id": seg.speaker_id,
            "start": seg.start,
            "end": seg.end,
            "wav": seg.wav,
            "transcript": seg.transcript,
            "overlap_ratio": seg.overlap_ratio,
            "doa_truth": seg.doa_truth,
        }
        if seg.clean_wav is not None:
            row["clean_wav"] = seg.clean_wav
        rows.append(row)
    doc = {"session_id": session.session_id, "speakers": list(session.speakers),
           "segments": rows}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def estimate_session_bias(
    session: SessionMetadata,
    audio_root: str | Path,
    cfg: PipelineConfig,
    embedding_dir: str | Path | None = None,
) -> dict[str, BiasInfo]:
    """Per-speaker DOA (and optional embedding) from the session itself.

    Uses each speaker's longest non-overlapped segment (ties broken by the
    earliest start). A speaker with only overlapped segments falls back to
    their longest segment and is flagged.
    """
    root = Path(audio_root)
    bias: dict[str, BiasInfo] = {}
    for speaker in session.speakers:
        mine = [s for s in session.segments if s.speaker_id == speaker]
        if not mine:
            continue
        clean = [s for s in mine if not s.overlapped]
        pool = clean if clean else mine
        pick = max(pool, key=lambda s: (s.duration, -s.start))
        pcm = read_wav(root / pick.wav)
        doa = localize(
            stft(pcm, cfg.stft), cfg.geometry, resolution=cfg.resolution
        )
        embedding = None
        if embedding_dir is not None:
            sidecar = Path(embedding_dir) / f"{speaker}.emb"
            if sidecar.exists():
                embedding = load_embedding(sidecar, source_id=speaker)
        bias[speaker] = BiasInfo(
            doa=doa,
            embedding=embedding,
            provenance=pick.segment_id,
            from_overlapped=not clean,
        )
    return bias


@dataclass(frozen=True)
class SegmentResult:
    enhanced: MultichannelPcm
    features: np.ndarray
    masks_used: TwoHeadMask
    weights: BeamformerWeights
    diagnostics: dict


def _premask_gate(
    spec: MultichannelSpectrogram,
    target_doa: float,
    competitor_doas: Sequence[float],
    cfg: PipelineConfig,
) -> tuple[AngleFeature, np.ndarray]:
    """Target angle feature and the boolean keep-gate from pre-masking.

    The gate drops exactly the bins where the target feature does not
    strictly exceed the max over competitors more than theta away (the
    support rule of pre_mask); with no such competitor everything is kept.
    """
    target_feat = angle_feature(spec, steering_vector(cfg.geometry, target_doa, cfg.stft))
    rivals = [
        angle_feature(spec, steering_vector(cfg.geometry, doa, cfg.stft))
        for doa in competitor_doas
        if angular_distance(target_doa, doa) > cfg.theta
    ]
    if not rivals:
        return target_feat, np.ones_like(target_feat.values, dtype=bool)
    rival_max = rivals[0].values
    for r in rivals[1:]:
        rival_max = np.maximum(rival_max, r.values)
    return target_feat, target_feat.values > rival_max


def process_segment(
    audio: MultichannelPcm,
    target_doa: float,
    competitor_doas: Sequence[float] = (),
    masks: TwoHeadMask | str | Path | None = None,
    cfg: PipelineConfig | None = None,
    gmvn_stats: GmvnStats | None = None,
    reference: np.ndarray | None = None,
) -> SegmentResult:
    """Enhance one segment toward a target DOA and extract ASR features.

    masks may be a TwoHeadMask or a path to a TFM1 file. With pre-masking
    enabled, mask bins dominated by competitors more than theta degrees
    away are moved from the speech head to the noise head before PSD
    estimation. gmvn_stats defaults to self-statistics of the segment.
    reference (mono samples) enables SI-SNR diagnostics.
    """
    cfg = cfg or PipelineConfig()
    if masks is None:
        raise ValueError("masks are required (TwoHeadMask or TFM1 path)")
    if isinstance(masks, (str, Path)):
        mask_path = Path(masks)
        if not mask_path.exists():
            raise FileNotFoundError(f"mask file not found: {mask_path}")
        masks = load_masks(mask_path)

    spec = stft(audio, cfg.stft)
    mask = masks if masks.averaged or masks.shape[0] == 1 else average_masks(masks)

    premask_fraction = 0.0
    if cfg.premask and competitor_doas:
        _, keep = _premask_gate(spec, target_doa, competitor_doas, cfg)
        speech = mask.speech * keep[None]
        noise = np.clip(mask.noise + mask.speech * (~keep)[None], 0.0, 1.0)
        mask = TwoHeadMask(speech=speech, noise=noise, averaged=True)
        premask_fraction = float((~keep).mean())

    psd = estimate_psd(spec, mask, normalize=cfg.normalize_psd)
    weights = mvdr_weights(psd, u=cfg.reference_channel, diag_load=cfg.diag_load)
    out_spec = apply_beamformer(spec, weights)
    enhanced = istft(out_spec, length=audio.num_samples)

    feats = frame2superframe(log_mel(out_spec, n_mels=cfg.n_mels), p=cfg.stack)
    stats = gmvn_stats or compute_gmvn_stats([feats], source_tag="self")
    normalized = gmvn(feats, stats).astype(np.float32)

    diagnostics = {
        "target_doa": float(target_doa),
        "premask_zero_fraction": premask_fraction,
        "mvdr_fallback_bins": int(weights.fallback.sum()),
        "input_power": float(np.mean(audio.samples**2)),
        "output_power": float(np.mean(enhanced.samples**2)),
    }
    if reference is not None:
        ref = np.asarray(reference, dtype=np.float64).reshape(-1)
        n = min(ref.size, audio.num_samples)
        per_channel = [
            si_snr(audio.samples[m, :n], ref[:n]) for m in range(audio.num_channels)
        ]
        diagnostics["si_snr_in_best"] = float(max(per_channel))
        diagnostics["si_snr_out"] = float(si_snr(enhanced.samples[0, :n], ref[:n]))
    return SegmentResult(
        enhanced=enhanced,
        features=normalized,
        masks_used=mask,
        weights=weights,
        diagnostics=diagnostics,
    )


def si_snr(estimate: np.ndarray, reference: np.ndarray, cap_db: float = 60.0) -> float:
    """Scale-invariant SNR in dB: 10 log10(|a s|^2 / |x - a s|^2), a = <x,s>/|s|^2."""
    x = np.asarray(estimate, dtype=np.float64).reshape(-1)
    s = np.asarray(reference, dtype=np.float64).reshape(-1)
    if x.shape != s.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {s.shape}")
    ref_power = float(s @ s)
    if ref_power == 0.0:
        raise ValueError("zero reference signal")
    alpha = float(x @ s) / ref_power
    target = alpha * s
    err = x - target
    err_power = float(err @ err)
    sig_power = float(target @ target)
    if err_power == 0.0 or sig_power / err_power > 10.0 ** (cap_db / 10.0):
        return cap_db
    return 10.0 * np.log10(sig_power / err_power)


def _metric_block(entries: list[dict]) -> dict:
    block: dict = {"count": len(entries)}
    snrs_in = [e["si_snr_in_best"] for e in entries if "si_snr_in_best" in e]
    snrs_out = [e["si_snr_out"] for e in entries if "si_snr_out" in e]
    if snrs_out:
        block["mean_si_snr_in_best"] = float(np.mean(snrs_in))
        block["mean_si_snr_out"] = float(np.mean(snrs_out))
        block["mean_si_snr_gain"] = float(np.mean(np.array(snrs_out) - np.array(snrs_in)))
    return block


def _run_one_segment(args: tuple) -> dict:
    (seg_dict, target_doa, competitor_doas, cfg, root, out_dir, masks_source,
     stats) = args
    seg = SegmentInfo(**seg_dict)
    root, out_dir = Path(root), Path(out_dir)
    entry: dict = {
        "segment_id": seg.segment_id,
        "speaker_id": seg.speaker_id,
        "overlapped": seg.overlapped,
    }
    audio = read_wav(root / seg.wav)
    reference = None
    if masks_source == "oracle":
        if seg.clean_wav is None:
            raise ValueError(f"segment {seg.segment_id} has no clean_wav for oracle masks")
        clean = read_wav(root / seg.clean_wav)
        clean_spec = stft(clean, cfg.stft)
        mix_spec = stft(audio, cfg.stft)
        interference = MultichannelSpectrogram(mix_spec.data - clean_spec.data, cfg.stft)
        masks = oracle_irm(clean_spec, interference, exponent=cfg.mask_exponent)
        reference = clean.samples[cfg.reference_channel]
    else:
        masks = Path(masks_source) / f"{seg.segment_id}.tfm1"
        if seg.clean_wav is not None:
            reference = read_wav(root / seg.clean_wav).samples[cfg.reference_channel]

    result = process_segment(
        audio,
        target_doa=target_doa,
        competitor_doas=competitor_doas,
        masks=masks,
        cfg=cfg,
        gmvn_stats=stats,
        reference=reference,
    )
    seg_out = out_dir / "segments"
    write_wav(seg_out / f"{seg.segment_id}.enhanced.wav", result.enhanced)
    save_raster(result.features, seg_out / f"{seg.segment_id}.feat.ras")
    save_masks(result.masks_used, seg_out / f"{seg.segment_id}.tfm1")
    entry.update(result.diagnostics)
    entry["enhanced_wav"] = f"segments/{seg.segment_id}.enhanced.wav"
    return entry


def run_session(
    manifest_path: str | Path,
    out_dir: str | Path,
    cfg: PipelineConfig | None = None,
    masks_source: str = "oracle",
    gmvn_stats: GmvnStats | None = None,
    embedding_dir: str | Path | None = None,
    jobs: int = 1,
) -> dict:
    """Process every segment of a session manifest; returns the report dict.

    masks_source is "oracle" (requires clean_wav sidecars in the manifest)
    or a directory of per-segment TFM1 files named <segment_id>.tfm1.
    Per-segment failures are recorded in the report and processing
    continues. The report, features, masks, and enhanced WAVs are written
    under out_dir and are byte-identical across reruns with the same
    inputs and configuration.
    """
    cfg = cfg or PipelineConfig()
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    session = read_manifest(manifest_path)
    root = manifest_path.parent
    segments = derive_overlap_flags(session.segments, guard=cfg.overlap_guard)
    session = SessionMetadata(session.session_id, session.speakers, segments)

    report: dict = {
        "session_id": session.session_id,
        "speakers": list(session.speakers),
        "masks_source": "oracle" if masks_source == "oracle" else "file",
        "segments": [],
        "errors": [],
    }
    if not segments:
        report["metrics"] = {
            "non_overlap": {"count": 0},
            "overlap": {"count": 0},
            "overall": {"count": 0},
        }
        _write_report(report, out_dir)
        return report

    bias = estimate_session_bias(session, root, cfg, embedding_dir=embedding_dir)
    report["bias"] = {
        spk: {
            "azimuth": b.doa.azimuth,
            "provenance": b.provenance,
            "from_overlapped": b.from_overlapped,
            "has_embedding": b.embedding is not None,
        }
        for spk, b in sorted(bias.items())
    }

    jobs_args = []
    for seg in segments:
        if seg.speaker_id not in bias:
            report["errors"].append(
                {"segment_id": seg.segment_id, "error": f"no bias for speaker {seg.speaker_id}"}
            )
            continue
        competitor_doas = tuple(
            b.doa.azimuth for spk, b in sorted(bias.items()) if spk != seg.speaker_id
        )
        jobs_args.append(
            (
                seg.__dict__.copy(),
                bias[seg.speaker_id].doa.azimuth,
                competitor_doas,
                cfg,
                str(root),
                str(out_dir),
                masks_source,
                gmvn_stats,
            )
        )

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_one_segment_safe, jobs_args))
    else:
        outcomes = [_run_one_segment_safe(a) for a in jobs_args]
    for ok, payload in outcomes:
        if ok:
            report["segments"].append(payload)
        else:
            report["errors"].append(payload)

    done = report["segments"]
    non = [e for e in done if not e["overlapped"]]
    ovl = [e for e in done if e["overlapped"]]
    report["metrics"] = {
        "non_overlap": _metric_block(non),
        "overlap": _metric_block(ovl),
        "overall": _metric_block(done),
    }
    _write_report(report, out_dir)
    return report


def _run_one_segment_safe(args: tuple) -> tuple[bool, dict]:
    try:
        return True, _run_one_segment(args)
    except Exception as exc:  # per-segment failures must not stop the run
        return False, {"segment_id": args[0]["segment_id"], "error": str(exc)}


def _write_report(report: dict, out_dir: Path) -> None:
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
