"""Two-head time-frequency masks: oracle generation, averaging, TFM1 files.

The TFM1 file is the sole contract external mask estimators must meet:

    magic "TFM1" | u32 LE M, T, F | u8 averaged flag
    | speech head, float32 LE, row-major (m, t, f)
    | noise head, same layout
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .stft import MultichannelSpectrogram

__all__ = [
    "TwoHeadMask",
    "MaskFileError",
    "oracle_irm",
    "average_masks",
    "save_masks",
    "load_masks",
]

MAGIC = b"TFM1"
_MAX_DIM = 2**31
_RANGE_SLACK = 1e-6


class MaskFileError(ValueError):
    """Raised for malformed TFM1 files."""


@dataclass(frozen=True)
class TwoHeadMask:
    """Paired speech/noise masks in [0, 1], each of shape (M, T, F)."""

    speech: np.ndarray
    noise: np.ndarray
    averaged: bool = False

    def __post_init__(self) -> None:
        speech = np.asarray(self.speech)
        noise = np.asarray(self.noise)
        if speech.ndim != 3 or speech.shape != noise.shape:
            raise ValueError(
                f"mask heads must share a (M, T, F) shape, got {speech.shape} vs {noise.shape}"
            )
        if self.averaged and speech.shape[0] != 1:
            raise ValueError("averaged mask must have a single channel")
        for name, head in (("speech", speech), ("noise", noise)):
            if head.size and (head.min() < 0.0 or head.max() > 1.0):
                raise ValueError(f"{name} mask values outside [0, 1]")
        object.__setattr__(self, "speech", speech)
        object.__setattr__(self, "noise", noise)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.speech.shape


def oracle_irm(
    clean: MultichannelSpectrogram,
    interference: MultichannelSpectrogram,
    exponent: float = 1.0,
    eps: float = 1e-10,
) -> TwoHeadMask:
    """Ideal ratio mask from reference decomposition of a mixture.

    speech = |S|^p / (|S|^p + |N|^p + eps) and the complementary noise head;
    p defaults to 1 (magnitude ratio). Stands in for an external estimator
    when clean/interference references exist.
    """
    if clean.data.shape != interference.data.shape:
        raise ValueError(
            f"clean/interference shapes differ: {clean.data.shape} vs {interference.data.shape}"
        )
    s = np.abs(clean.data) ** exponent
    n = np.abs(interference.data) ** exponent
    denom = s + n + eps
    return TwoHeadMask(speech=s / denom, noise=n / denom, averaged=False)


def average_masks(mask: TwoHeadMask) -> TwoHeadMask:
    """Arithmetic mean of each head over channels, shape (1, T, F)."""
    if mask.averaged:
        raise ValueError("mask is already channel-averaged")
    return TwoHeadMask(
        speech=mask.speech.mean(axis=0, keepdims=True),
        noise=mask.noise.mean(axis=0, keepdims=True),
        averaged=True,
    )


def save_masks(mask: TwoHeadMask, path: str | Path) -> None:
    """Write a TFM1 mask file (heads stored as float32)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m, t, f = mask.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", m, t, f))
        fh.write(struct.pack("<B", 1 if mask.averaged else 0))
        fh.write(np.ascontiguousarray(mask.speech, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(mask.noise, dtype="<f4").tobytes())


def _read_exact(fh, count: int, section: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise MaskFileError(f"truncated TFM1 file: incomplete {section}")
    return buf


def load_masks(path: str | Path) -> TwoHeadMask:
    """Read a TFM1 mask file, validating structure and value range."""
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise MaskFileError(f"bad magic in {path}, expected TFM1")
        m, t, f = struct.unpack("<III", _read_exact(fh, 12, "header dimensions"))
        if min(m, t, f) < 1 or max(m, t, f) >= _MAX_DIM or m * t * f >= _MAX_DIM:
            raise MaskFileError(f"implausible dimensions ({m}, {t}, {f}) in {path}")
        (flag,) = struct.unpack("<B", _read_exact(fh, 1, "averaged flag"))
        if flag not in (0, 1):
            raise MaskFileError(f"averaged flag must be 0 or 1, got {flag}")
        count = m * t * f
        heads = []
        for section in ("speech head", "noise head"):
            raw = _read_exact(fh, 4 * count, section)
            head = np.frombuffer(raw, dtype="<f4").reshape(m, t, f)
            if not np.all(np.isfinite(head)):
                raise MaskFileError(f"non-finite values in {section} of {path}")
            lo, hi = float(head.min()), float(head.max())
            if lo < -_RANGE_SLACK or hi > 1.0 + _RANGE_SLACK:
                raise MaskFileError(
                    f"{section} values outside [0, 1] beyond {_RANGE_SLACK} in {path}"
                    f" (range [{lo}, {hi}])"
                )
            heads.append(np.clip(head, 0.0, 1.0))
        if fh.read(1):
            raise MaskFileError(f"trailing bytes after noise head in {path}")
    return TwoHeadMask(speech=heads[0], noise=heads[1], averaged=bool(flag))
