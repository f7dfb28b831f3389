"""Multichannel WAV I/O (RIFF, PCM 16-bit and IEEE float 32-bit).

Channel order is file order; sample rates are preserved. Internally audio
is float64 in [-1, 1]; PCM16 files are scaled by 1/32768 on read.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .stft import MultichannelPcm

__all__ = ["read_wav", "write_wav"]


def read_wav(path: str | Path) -> MultichannelPcm:
    """Read a WAV file into (M, S) float64."""
    rate, data = wavfile.read(str(path))
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    return MultichannelPcm(samples.T, rate)


def write_wav(path: str | Path, pcm: MultichannelPcm, encoding: str = "float32") -> None:
    """Write (M, S) audio as an interleaved WAV file.

    encoding: "float32" (IEEE float) or "pcm16" (16-bit integer, clipped).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = pcm.samples.T
    if encoding == "float32":
        wavfile.write(str(path), pcm.sample_rate, data.astype(np.float32))
    elif encoding == "pcm16":
        clipped = np.clip(data, -1.0, 32767.0 / 32768.0)
        wavfile.write(str(path), pcm.sample_rate, np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise ValueError(f"unknown encoding {encoding!r}, expected 'float32' or 'pcm16'")
