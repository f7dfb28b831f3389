"""Command-line surface tying the front-end modules together.

Subcommands: simulate, overlap, localize, masks-oracle, beamform,
features, session, si-snr. Exit codes: 0 success, 2 per-segment partial
failures, 1 fatal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .beamformer import apply_beamformer, estimate_psd, mvdr_weights
from .features import compute_gmvn_stats, frame2superframe, gmvn, load_gmvn_stats, log_mel, save_gmvn_stats
from .masks import average_masks, load_masks, oracle_irm, save_masks
from .rasterfile import save_raster
from .roomsim import (
    SourceSegment,
    mix_overlap,
    sample_room,
    simulate_session,
    speech_like,
    SimSegment,
)
from .session import (
    PipelineConfig,
    SegmentInfo,
    SessionMetadata,
    process_segment,
    read_manifest,
    run_session,
    si_snr,
    write_manifest,
)
from .spatial import ArrayGeometry
from .ssl import localize
from .stft import MultichannelPcm, MultichannelSpectrogram, StftConfig, stft
from .wavio import read_wav, write_wav

__all__ = ["main"]


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".json"):
        return json.loads(text)
    try:
        import tomllib  # py311+
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(text.decode())


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    doc = _load_config_file(args.config) if args.config else {}
    stft_doc = doc.get("stft", {})
    stft_cfg = StftConfig(
        sample_rate=int(stft_doc.get("sample_rate", 16000)),
        fft_size=int(stft_doc.get("fft_size", 512)),
        hop=int(stft_doc.get("hop", 160)),
        window=stft_doc.get("window", "hann"),
        center_padding=bool(stft_doc.get("center_padding", True)),
    )
    geo_doc = doc.get("geometry", {})
    if "positions" in geo_doc:
        geom = ArrayGeometry(
            np.asarray(geo_doc["positions"], dtype=np.float64),
            speed_of_sound=float(geo_doc.get("speed_of_sound", 343.0)),
        )
    else:
        geom = ArrayGeometry.circular_7ch(
            radius=float(geo_doc.get("radius", 0.0425)),
            speed_of_sound=float(geo_doc.get("speed_of_sound", 343.0)),
        )
    pipe = doc.get("pipeline", {})
    cfg = PipelineConfig(
        stft=stft_cfg,
        geometry=geom,
        theta=float(pipe.get("theta", 30.0)),
        resolution=float(pipe.get("resolution", 3.0)),
        diag_load=float(pipe.get("diag_load", 1e-6)),
        premask=bool(pipe.get("premask", True)),
        reference_channel=int(pipe.get("reference_channel", 0)),
        normalize_psd=bool(pipe.get("normalize_psd", False)),
        mask_exponent=float(pipe.get("mask_exponent", 1.0)),
        n_mels=int(pipe.get("n_mels", 80)),
        stack=int(pipe.get("stack", 3)),
        overlap_guard=float(pipe.get("overlap_guard", 0.0)),
    )
    if args.theta is not None:
        cfg = replace(cfg, theta=args.theta)
    if args.resolution is not None:
        cfg = replace(cfg, resolution=args.resolution)
    return cfg


def _cmd_simulate(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    out = Path(args.out)
    rate = cfg.stft.sample_rate
    rng = np.random.default_rng(args.seed)
    for s in range(args.sessions):
        session_id = f"session{s:03d}"
        room = sample_room(args.speakers, seed=args.seed + s)
        if args.rt60 is not None:
            room = replace(room, rt60=args.rt60)
        sources = []
        t = 0.0
        for k in range(args.segments):
            spk = k % args.speakers
            dur = args.seg_duration * (0.75 + 0.5 * rng.random())
            sources.append(
                SourceSegment(
                    speaker_id=str(spk),
                    samples=speech_like(dur, rate, seed=rng),
                    transcript=f"utterance {k} speaker {spk}",
                    start=t,
                    end=t + dur,
                )
            )
            t += dur + 0.25
        result = simulate_session(
            room,
            sources,
            cfg.geometry,
            session_id=session_id,
            snr_range=(args.snr_min, args.snr_max),
            sample_rate=rate,
            seed=args.seed + s,
            keep_references=args.refs,
        )
        sdir = out / session_id
        rows = []
        for i, seg in enumerate(result.segments):
            seg_id = f"seg{i:04d}"
            write_wav(sdir / f"{seg_id}.wav", seg.audio)
            info = dict(
                segment_id=seg_id,
                speaker_id=seg.speaker_id,
                start=seg.start,
                end=seg.end,
                wav=f"{seg_id}.wav",
                transcript=seg.transcript,
                overlap_ratio=seg.overlap_ratio,
                doa_truth=seg.doa_truth,
            )
            if args.refs:
                clean = MultichannelPcm(result.references[i]["reverberant"], rate)
                write_wav(sdir / f"{seg_id}.clean.wav", clean)
                info["clean_wav"] = f"{seg_id}.clean.wav"
            rows.append(SegmentInfo(**info))
        meta = SessionMetadata(
            session_id=session_id,
            speakers=tuple(str(k) for k in range(args.speakers)),
            segments=tuple(rows),
        )
        write_manifest(meta, sdir / "manifest.json")
        for skip in result.skipped:
            print(f"skipped silent segment {skip['index']} (speaker {skip['speaker_id']})")
        print(f"{session_id}: {len(result.segments)} segments -> {sdir}")
    return 0


def _cmd_overlap(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    manifest = Path(args.manifest)
    session = read_manifest(manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    rows = []
    made = 0
    for seg in session.segments:
        others = [s for s in session.segments if s.speaker_id != seg.speaker_id]
        if not others:
            rows.append(seg)
            continue
        rival = others[int(rng.integers(len(others)))]
        ratio = float(rng.uniform(args.ratio_min, args.ratio_max))
        base_pcm = read_wav(manifest.parent / seg.wav)
        rival_pcm = read_wav(manifest.parent / rival.wav)
        base_sim = SimSegment(
            audio=base_pcm, transcript=seg.transcript, speaker_id=seg.speaker_id,
            session_id=session.session_id, start=seg.start, end=seg.end,
        )
        rival_sim = SimSegment(
            audio=rival_pcm, transcript=rival.transcript, speaker_id=rival.speaker_id,
            session_id=session.session_id, start=rival.start, end=rival.end,
        )
        mixed = mix_overlap(base_sim, rival_sim, ratio, seed=int(rng.integers(2**31)))
        wav_name = f"{seg.segment_id}.overlap.wav"
        write_wav(out / wav_name, mixed.audio)
        info = {**seg.__dict__}
        info.update(wav=wav_name, overlap_ratio=mixed.overlap_ratio)
        if seg.clean_wav is not None:
            clean_src = (manifest.parent / seg.clean_wav).resolve()
            info["clean_wav"] = os.path.relpath(clean_src, out.resolve())
        rows.append(SegmentInfo(**info))
        made += 1
    meta = SessionMetadata(session.session_id, session.speakers, tuple(rows))
    write_manifest(meta, out / "manifest.json")
    print(f"mixed {made} overlapped segments -> {out}")
    return 0


def _cmd_localize(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    pcm = read_wav(args.wav)
    est = localize(stft(pcm, cfg.stft), cfg.geometry, resolution=cfg.resolution)
    print(f"azimuth {est.azimuth:.1f} deg  score {est.score:.4g}  "
          f"peak/mean {est.peak_to_mean:.2f}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("azimuth,score\n")
            for az, sc in zip(est.grid, est.score_curve):
                fh.write(f"{az},{sc}\n")
    return 0


def _cmd_masks_oracle(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    clean = stft(read_wav(args.clean), cfg.stft)
    if args.interference:
        interference = stft(read_wav(args.interference), cfg.stft)
    elif args.mix:
        mix = stft(read_wav(args.mix), cfg.stft)
        interference = MultichannelSpectrogram(mix.data - clean.data, cfg.stft)
    else:
        raise ValueError("need --interference or --mix")
    mask = oracle_irm(clean, interference, exponent=cfg.mask_exponent)
    save_masks(mask, args.out)
    print(f"wrote {args.out} with shape {mask.shape}")
    return 0


def _cmd_beamform(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    audio = read_wav(args.wav)
    competitor_doas = (
        tuple(float(x) for x in args.competitor_doas.split(",")) if args.competitor_doas else ()
    )
    if args.target_doa is not None:
        result = process_segment(
            audio,
            target_doa=args.target_doa,
            competitor_doas=competitor_doas,
            masks=args.masks,
            cfg=cfg,
        )
        enhanced, weights = result.enhanced, result.weights
    else:
        spec = stft(audio, cfg.stft)
        mask = load_masks(args.masks)
        if not mask.averaged and mask.shape[0] > 1:
            mask = average_masks(mask)
        psd = estimate_psd(spec, mask, normalize=cfg.normalize_psd)
        weights = mvdr_weights(psd, u=cfg.reference_channel, diag_load=cfg.diag_load)
        from .stft import istft

        enhanced = istft(apply_beamformer(spec, weights), length=audio.num_samples)
    write_wav(args.out, enhanced)
    if args.export_weights:
        save_raster(weights.w.astype(np.complex64), args.export_weights)
    print(f"wrote {args.out} ({weights.fallback.sum()} fallback bins)")
    return 0


def _cmd_features(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    pcm = read_wav(args.wav)
    spec = stft(pcm, cfg.stft).channel(args.channel)
    feats = frame2superframe(log_mel(spec, n_mels=cfg.n_mels), p=cfg.stack)
    stats = load_gmvn_stats(args.stats) if args.stats else compute_gmvn_stats(
        [feats], source_tag=str(args.wav)
    )
    if args.save_stats:
        save_gmvn_stats(stats, args.save_stats)
    save_raster(gmvn(feats, stats).astype(np.float32), args.out)
    print(f"wrote {args.out} with shape {feats.shape}")
    return 0


def _cmd_session(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    stats = load_gmvn_stats(args.gmvn_stats) if args.gmvn_stats else None
    report = run_session(
        args.manifest,
        args.out,
        cfg=cfg,
        masks_source=args.masks,
        gmvn_stats=stats,
        embedding_dir=args.embeddings,
        jobs=args.jobs,
    )
    overall = report["metrics"]["overall"]
    print(
        f"session {report['session_id']}: {overall['count']} segments processed, "
        f"{len(report['errors'])} errors -> {args.out}"
    )
    if overall.get("mean_si_snr_gain") is not None:
        print(f"mean SI-SNR gain {overall['mean_si_snr_gain']:.2f} dB")
    return 2 if report["errors"] else 0


def _cmd_si_snr(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    est = read_wav(args.estimate).samples[args.channel]
    ref = read_wav(args.reference).samples[args.channel]
    n = min(est.size, ref.size)
    print(f"{si_snr(est[:n], ref[:n]):.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcfront", description=__doc__)
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--theta", type=float, default=None, help="pre-masking angle, degrees")
    parser.add_argument("--resolution", type=float, default=None, help="DOA grid step, degrees")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate meeting sessions")
    p.add_argument("--out", required=True)
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--speakers", type=int, default=3)
    p.add_argument("--segments", type=int, default=6)
    p.add_argument("--seg-duration", type=float, default=3.0)
    p.add_argument("--rt60", type=float, default=None)
    p.add_argument("--snr-min", type=float, default=-5.0)
    p.add_argument("--snr-max", type=float, default=10.0)
    p.add_argument("--refs", action="store_true", help="write clean reference sidecars")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("overlap", help="mix overlapped speech into a session")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratio-min", type=float, default=0.01)
    p.add_argument("--ratio-max", type=float, default=1.0)
    p.set_defaults(func=_cmd_overlap)

    p = sub.add_parser("localize", help="estimate source azimuth")
    p.add_argument("wav")
    p.add_argument("--csv", help="write the azimuth,score curve")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser("masks-oracle", help="ideal ratio masks from references")
    p.add_argument("--clean", required=True)
    p.add_argument("--interference")
    p.add_argument("--mix")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_masks_oracle)

    p = sub.add_parser("beamform", help="mask-based MVDR enhancement")
    p.add_argument("wav")
    p.add_argument("--masks", required=True, help="TFM1 mask file")
    p.add_argument("--out", required=True)
    p.add_argument("--target-doa", type=float, default=None)
    p.add_argument("--competitor-doas", default="", help="comma-separated degrees")
    p.add_argument("--export-weights", help="write weights as complex64 raster")
    p.set_defaults(func=_cmd_beamform)

    p = sub.add_parser("features", help="log-mel -> superframe -> GMVN features")
    p.add_argument("wav")
    p.add_argument("--out", required=True)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--stats", help="GMV1 stats file to apply")
    p.add_argument("--save-stats", help="write the stats used")
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("session", help="run the full session pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--masks", default="oracle", help='"oracle" or a directory of TFM1 files')
    p.add_argument("--gmvn-stats")
    p.add_argument("--embeddings", help="directory of <speaker>.emb sidecars")
    p.set_defaults(func=_cmd_session)

    p = sub.add_parser("si-snr", help="scale-invariant SNR between two WAVs")
    p.add_argument("estimate")
    p.add_argument("reference")
    p.add_argument("--channel", type=int, default=0)
    p.set_defaults(func=_cmd_si_snr)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _build_config(args)
        return args.func(args, cfg)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
