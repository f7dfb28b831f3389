import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcfront import MultichannelPcm, MultichannelSpectrogram, StftConfig, istft, stft
from mcfront.stft import analysis_window


def direct_dft_frames(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Oracle: frame + window + explicit DFT matrix, no np.fft involved."""
    size, hop = cfg.fft_size, cfg.hop
    pad = size // 2 if cfg.center_padding else 0
    padded = np.pad(x, pad)
    if len(padded) < size:
        padded = np.pad(padded, (0, size - len(padded)))
    num_frames = 1 + (len(padded) - size) // hop
    window = analysis_window(cfg)
    n = np.arange(size)
    k = np.arange(cfg.num_bins)
    dft = np.exp(-2j * np.pi * np.outer(k, n) / size)
    out = np.empty((num_frames, cfg.num_bins), dtype=complex)
    for t in range(num_frames):
        out[t] = dft @ (window * padded[t * hop : t * hop + size])
    return out


def test_zero_signal_gives_zero_spectrogram(cfg):
    pcm = MultichannelPcm(np.zeros((1, 4000)), 16000)
    spec = stft(pcm, cfg)
    assert np.all(spec.data == 0)


def test_pure_tone_concentrates_at_bin_32(cfg):
    t = np.arange(16000) / 16000
    pcm = MultichannelPcm(np.sin(2 * np.pi * 1000 * t)[None], 16000)
    spec = stft(pcm, cfg)
    energy = np.abs(spec.data[0]) ** 2
    # 1000 / 16000 * 512 = 32; interior frames only (edges see the zero pad)
    interior = energy[2:-2]
    assert np.argmax(interior.sum(axis=0)) == 32
    assert interior.sum(axis=0)[32] > 100 * np.delete(interior.sum(axis=0), [31, 32, 33]).max()


def test_stft_matches_direct_dft_oracle(cfg):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((7, 16000))
    spec = stft(MultichannelPcm(x, 16000), cfg)
    scale = np.abs(spec.data).max()
    for m in range(7):
        oracle = direct_dft_frames(x[m], cfg)
        assert np.abs(spec.data[m] - oracle).max() <= 1e-8 * scale


def test_framewise_parseval(cfg):
    rng = np.random.default_rng(3)
    x = rng.standard_normal(3200)
    spec = stft(MultichannelPcm(x[None], 16000), cfg).data[0]
    size = cfg.fft_size
    pad = size // 2
    padded = np.pad(x, pad)
    window = analysis_window(cfg)
    for t in range(spec.shape[0]):
        seg = padded[t * cfg.hop : t * cfg.hop + size] * window
        time_energy = np.sum(seg**2)
        mags = np.abs(spec[t]) ** 2
        spec_energy = (mags[0] + 2 * mags[1:-1].sum() + mags[-1]) / size
        assert spec_energy == pytest.approx(time_energy, rel=1e-6, abs=1e-12)


def test_nyquist_and_dc_bins_are_real(cfg):
    rng = np.random.default_rng(5)
    spec = stft(MultichannelPcm(rng.standard_normal((2, 2000)), 16000), cfg)
    assert np.abs(spec.data[..., 0].imag).max() == 0
    assert np.abs(spec.data[..., -1].imag).max() == 0


def test_round_trip_reconstruction(cfg):
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 12345))
    pcm = MultichannelPcm(x, 16000)
    back = istft(stft(pcm, cfg), length=pcm.num_samples)
    err = np.abs(back.samples - x).max()
    assert err <= 1e-6 * np.abs(x).max()


def test_round_trip_off_grid_length(cfg):
    # lengths not multiples of the hop still reconstruct over the default span
    rng = np.random.default_rng(12)
    x = rng.standard_normal((1, 8001))
    back = istft(stft(MultichannelPcm(x, 16000), cfg))
    n = back.num_samples
    assert np.abs(back.samples[0] - x[0, :n]).max() <= 1e-6 * np.abs(x).max()


def test_zero_spectrogram_inverts_to_silence(cfg):
    spec = MultichannelSpectrogram(np.zeros((1, 10, cfg.num_bins)), cfg)
    out = istft(spec)
    assert np.all(out.samples == 0)


def test_single_frame_inverse_matches_direct_idft():
    cfg = StftConfig(window="rect", center_padding=False)
    rng = np.random.default_rng(2)
    half = rng.standard_normal(cfg.num_bins) + 1j * rng.standard_normal(cfg.num_bins)
    half[0] = half[0].real
    half[-1] = half[-1].real
    out = istft(MultichannelSpectrogram(half[None, None, :], cfg), length=cfg.fft_size)
    # oracle: explicit inverse DFT of the mirrored full spectrum
    full = np.concatenate([half, np.conj(half[-2:0:-1])])
    n = np.arange(cfg.fft_size)
    idft = np.exp(2j * np.pi * np.outer(n, np.arange(cfg.fft_size)) / cfg.fft_size)
    oracle = (idft @ full).real / cfg.fft_size
    assert np.abs(out.samples[0] - oracle).max() <= 1e-10 * np.abs(oracle).max()


def test_single_frame_hann_impulse():
    cfg = StftConfig(center_padding=False)
    window = analysis_window(cfg)
    mid = cfg.fft_size // 2
    spec_row = np.fft.rfft(np.eye(cfg.fft_size)[mid] * window)
    out = istft(MultichannelSpectrogram(spec_row[None, None, :], cfg), length=cfg.fft_size)
    expected = np.zeros(cfg.fft_size)
    expected[mid] = 1.0
    assert np.abs(out.samples[0] - expected).max() <= 1e-9


@settings(max_examples=20, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    a=st.floats(-5, 5, allow_nan=False),
    b=st.floats(-5, 5, allow_nan=False),
)
def test_linearity(seed, a, b):
    cfg = StftConfig()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3000))
    y = rng.standard_normal((2, 3000))
    sx = stft(MultichannelPcm(x, 16000), cfg).data
    sy = stft(MultichannelPcm(y, 16000), cfg).data
    combined = stft(MultichannelPcm(a * x + b * y, 16000), cfg).data
    scale = max(np.abs(combined).max(), 1.0)
    assert np.abs(combined - (a * sx + b * sy)).max() <= 1e-10 * scale


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), length=st.integers(400, 9000))
def test_round_trip_property(seed, length):
    cfg = StftConfig()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, length))
    back = istft(stft(MultichannelPcm(x, 16000), cfg), length=length)
    assert np.abs(back.samples - x).max() <= 1e-6 * np.abs(x).max()


def test_sample_rate_mismatch_rejected(cfg):
    pcm = MultichannelPcm(np.ones((1, 100)), 8000)
    with pytest.raises(ValueError, match="sample-rate mismatch"):
        stft(pcm, cfg)


def test_empty_input_rejected():
    with pytest.raises(ValueError, match="empty"):
        MultichannelPcm(np.zeros((1, 0)), 16000)


def test_nola_violation_rejected():
    cfg = StftConfig(hop=512)  # hann with no overlap leaves zero-coverage samples
    spec = stft(MultichannelPcm(np.random.default_rng(0).standard_normal((1, 4096)), 16000), cfg)
    with pytest.raises(ValueError, match="reconstruction identity"):
        istft(spec)


def test_config_validation():
    with pytest.raises(ValueError, match="power of two"):
        StftConfig(fft_size=500)
    with pytest.raises(ValueError, match="hop"):
        StftConfig(hop=0)
    with pytest.raises(ValueError, match="hop"):
        StftConfig(hop=1024)
    with pytest.raises(ValueError, match="window"):
        StftConfig(window="kaiser")
    assert StftConfig().num_bins == 257
