"""Mask-driven PSD estimation and time-invariant MVDR beamforming.

The MVDR weights follow the reference-vector formulation
    w(f) = PhiN(f)^-1 PhiS(f) / Tr(PhiN(f)^-1 PhiS(f)) . u
with u a one-hot reference-channel selector, applied as o = w^H x.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .masks import TwoHeadMask
from .stft import MultichannelSpectrogram

__all__ = [
    "PsdPair",
    "BeamformerWeights",
    "estimate_psd",
    "mvdr_weights",
    "apply_beamformer",
    "select_reference",
]


@dataclass(frozen=True)
class PsdPair:
    """Speech/noise spatial PSD matrices, each of shape (F, M, M), Hermitian."""

    phi_s: np.ndarray
    phi_n: np.ndarray

    def __post_init__(self) -> None:
        if self.phi_s.shape != self.phi_n.shape:
            raise ValueError(f"PSD shapes differ: {self.phi_s.shape} vs {self.phi_n.shape}")
        if self.phi_s.ndim != 3 or self.phi_s.shape[1] != self.phi_s.shape[2]:
            raise ValueError(f"PSDs must be (F, M, M), got {self.phi_s.shape}")

    @property
    def num_bins(self) -> int:
        return self.phi_s.shape[0]

    @property
    def num_channels(self) -> int:
        return self.phi_s.shape[1]

    def validate(self, herm_tol: float = 1e-10, psd_tol: float = 1e-8) -> None:
        """Check Hermitian symmetry and positive semidefiniteness."""
        for name, phi in (("phi_s", self.phi_s), ("phi_n", self.phi_n)):
            herm_err = np.abs(phi - phi.conj().transpose(0, 2, 1)).max()
            scale = max(np.abs(phi).max(), 1e-300)
            if herm_err > herm_tol * scale:
                raise ValueError(f"{name} is not Hermitian within {herm_tol} (err {herm_err})")
            eigvals = np.linalg.eigvalsh(0.5 * (phi + phi.conj().transpose(0, 2, 1)))
            traces = np.trace(phi, axis1=1, axis2=2).real
            if np.any(eigvals[:, 0] < -psd_tol * np.maximum(traces, 1e-300)[:, None]):
                raise ValueError(f"{name} has negative eigenvalues beyond tolerance")


@dataclass(frozen=True)
class BeamformerWeights:
    """Per-frequency complex weights (F, M) and the one-hot reference u (M,).

    fallback flags frequencies where the MVDR solve was abandoned and the
    weight fell back to the pass-through selector u.
    """

    w: np.ndarray
    reference: np.ndarray
    fallback: np.ndarray

    @property
    def num_bins(self) -> int:
        return self.w.shape[0]

    @property
    def num_channels(self) -> int:
        return self.w.shape[1]


def _as_onehot(u: int | np.ndarray, num_channels: int) -> np.ndarray:
    if np.isscalar(u):
        idx = int(u)
        if not 0 <= idx < num_channels:
            raise ValueError(f"reference channel {idx} out of range [0, {num_channels})")
        onehot = np.zeros(num_channels)
        onehot[idx] = 1.0
        return onehot
    arr = np.asarray(u, dtype=np.float64)
    if arr.shape != (num_channels,) or not np.isclose(arr.sum(), 1.0) or np.any(arr < 0):
        raise ValueError("reference selector must be a one-hot vector over channels")
    return arr


def estimate_psd(
    spec: MultichannelSpectrogram,
    mask: TwoHeadMask,
    normalize: bool = False,
) -> PsdPair:
    """Accumulate masked spatial covariances per frequency.

    PhiV(f) = sum_t M_v(t, f) x(t, f) x(t, f)^H for each head v. The mask
    must be channel-averaged (single mask per head shared by all channels).
    With normalize=True each sum is divided by the mask's frame total.

    Arguments:
        spec: observation, (M, T, F)
        mask: averaged TwoHeadMask with heads of shape (1, T, F)

    Returns:
        PsdPair with matrices of shape (F, M, M)
    """
    if mask.speech.shape[0] != 1:
        raise ValueError("estimate_psd needs a channel-averaged mask; call average_masks first")
    M, T, F = spec.data.shape
    if mask.speech.shape[1:] != (T, F):
        raise ValueError(f"mask shape {mask.speech.shape[1:]} does not match spec {(T, F)}")
    if not np.all(np.isfinite(spec.data)):
        raise ValueError("spectrogram contains NaN/inf")
    x = spec.data  # (M, T, F)
    mats = []
    for head in (mask.speech[0], mask.noise[0]):
        phi = np.einsum("tf,mtf,ntf->fmn", head.astype(np.float64), x, x.conj())
        if normalize:
            phi /= np.maximum(head.sum(axis=0), 1e-300)[:, None, None]
        mats.append(phi)
    return PsdPair(phi_s=mats[0], phi_n=mats[1])


def mvdr_weights(
    psd: PsdPair,
    u: int | np.ndarray = 0,
    diag_load: float = 1e-6,
) -> BeamformerWeights:
    """MVDR weights from a speech/noise PSD pair.

    The noise PSD is diagonally loaded with diag_load * trace / M before a
    Hermitian solve of PhiN^-1 PhiS (column-by-column, no explicit inverse).
    Frequencies where the solve fails or the trace vanishes fall back to the
    pass-through weight u and are flagged.

    Arguments:
        psd: PSD pair, (F, M, M)
        u: reference channel index or one-hot vector
        diag_load: loading relative to mean diagonal of PhiN

    Returns:
        BeamformerWeights with w of shape (F, M)
    """
    F, M = psd.num_bins, psd.num_channels
    onehot = _as_onehot(u, M)
    w = np.empty((F, M), dtype=np.complex128)
    fallback = np.zeros(F, dtype=bool)
    eye = np.eye(M)
    for f in range(F):
        phi_n = psd.phi_n[f]
        phi_s = psd.phi_s[f]
        trace_n = np.trace(phi_n).real
        if not np.isfinite(trace_n) or trace_n <= 0:
            w[f] = onehot
            fallback[f] = True
            continue
        loaded = phi_n + (diag_load * trace_n / M) * eye
        try:
            c, low = scipy.linalg.cho_factor(loaded, check_finite=False)
            ratio = scipy.linalg.cho_solve((c, low), phi_s, check_finite=False)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            w[f] = onehot
            fallback[f] = True
            continue
        denom = np.trace(ratio)
        if not np.isfinite(denom) or abs(denom) < 1e-300:
            w[f] = onehot
            fallback[f] = True
            continue
        w[f] = (ratio / denom) @ onehot
        if not np.all(np.isfinite(w[f])):
            w[f] = onehot
            fallback[f] = True
    return BeamformerWeights(w=w, reference=onehot, fallback=fallback)


def select_reference(psd: PsdPair, diag_load: float = 1e-6) -> int:
    """Pick the channel maximizing posterior SNR of the pass-through MVDR weight."""
    M = psd.num_channels
    snrs = []
    for m in range(M):
        wts = mvdr_weights(psd, u=m, diag_load=diag_load).w
        pow_s = np.einsum("fa,fab,fb->", wts.conj(), psd.phi_s, wts).real
        pow_n = np.einsum("fa,fab,fb->", wts.conj(), psd.phi_n, wts).real
        snrs.append(pow_s / max(pow_n, 1e-300))
    return int(np.argmax(snrs))


def apply_beamformer(
    spec: MultichannelSpectrogram,
    weights: BeamformerWeights,
) -> MultichannelSpectrogram:
    """Apply o(t, f) = w(f)^H x(t, f); returns a single-channel spectrogram."""
    M, T, F = spec.data.shape
    if weights.w.shape != (F, M):
        raise ValueError(f"weights shape {weights.w.shape} does not match spec ({F}, {M})")
    out = np.einsum("fm,mtf->tf", weights.w.conj(), spec.data)
    return MultichannelSpectrogram(out[None], spec.config)
