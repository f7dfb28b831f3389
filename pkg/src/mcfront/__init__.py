"""Multichannel speech front-end toolkit.

Mask-based MVDR beamforming with location/speaker bias features,
grid-search sound source localization, ASR feature transformation, and
meeting simulation with overlapped-speech generation.
"""

from .beamformer import (
    BeamformerWeights,
    PsdPair,
    apply_beamformer,
    estimate_psd,
    mvdr_weights,
    select_reference,
)
from .features import (
    GmvnStats,
    compute_gmvn_stats,
    frame2superframe,
    gmvn,
    load_gmvn_stats,
    log_mel,
    mel_filterbank,
    save_gmvn_stats,
)
from .masks import TwoHeadMask, average_masks, load_masks, oracle_irm, save_masks
from .rasterfile import load_embedding, load_raster, save_embedding, save_raster
from .roomsim import (
    PlacementError,
    RoomConfig,
    SimSegment,
    SimulationResult,
    SourceSegment,
    array_rirs,
    diffuse_noise,
    image_rir,
    mix_overlap,
    sample_room,
    simulate_session,
    speech_like,
)
from .session import (
    BiasInfo,
    PipelineConfig,
    SegmentInfo,
    SessionMetadata,
    estimate_session_bias,
    process_segment,
    read_manifest,
    run_session,
    si_snr,
    write_manifest,
)
from .spatial import (
    AngleFeature,
    ArrayGeometry,
    IpdFeature,
    SpeakerEmbedding,
    SteeringField,
    angle_feature,
    angular_distance,
    assemble_mask_input,
    compute_ipd,
    pre_mask,
    steering_vector,
)
from .ssl import DoaEstimate, localize
from .stft import MultichannelPcm, MultichannelSpectrogram, StftConfig, istft, stft
from .wavio import read_wav, write_wav

__version__ = "0.1.0"
