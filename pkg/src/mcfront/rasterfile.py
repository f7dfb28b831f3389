"""Binary raster tensor files and the speaker-embedding sidecar.

RAS1 layout (little-endian):

    magic "RAS1" | u8 dtype code | u8 ndim | u32 shape[ndim] | payload

dtype codes: 1 = float32, 2 = float64, 3 = complex64, 4 = complex128.
Payload is row-major. Used for feature tensors and exported beamformer
weights.

The embedding sidecar is headerless: exactly 128 float32 LE values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .spatial import EMBEDDING_DIM, SpeakerEmbedding

__all__ = ["save_raster", "load_raster", "save_embedding", "load_embedding"]

RASTER_MAGIC = b"RAS1"
_DTYPE_CODES = {1: "<f4", 2: "<f8", 3: "<c8", 4: "<c16"}
_CODE_FOR_KIND = {("f", 4): 1, ("f", 8): 2, ("c", 8): 3, ("c", 16): 4}


def save_raster(arr: np.ndarray, path: str | Path) -> None:
    """Write an array as a RAS1 file; dtype must be float32/64 or complex64/128."""
    arr = np.asarray(arr)
    key = (arr.dtype.kind, arr.dtype.itemsize)
    if key not in _CODE_FOR_KIND:
        raise ValueError(f"unsupported raster dtype {arr.dtype}")
    if arr.ndim > 255:
        raise ValueError("too many dimensions for raster format")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<BB", _CODE_FOR_KIND[key], arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr).astype(_DTYPE_CODES[_CODE_FOR_KIND[key]]).tobytes())


def load_raster(path: str | Path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != RASTER_MAGIC:
            raise ValueError(f"bad magic in {path}, expected RAS1")
        code, ndim = struct.unpack("<BB", fh.read(2))
        if code not in _DTYPE_CODES:
            raise ValueError(f"unknown raster dtype code {code} in {path}")
        shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        dtype = np.dtype(_DTYPE_CODES[code])
        payload = fh.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise ValueError(f"truncated raster payload in {path}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


def save_embedding(emb: SpeakerEmbedding, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(emb.vector, dtype="<f4").tobytes())


def load_embedding(path: str | Path, source_id: str = "") -> SpeakerEmbedding:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) != 4 * EMBEDDING_DIM:
        raise ValueError(
            f"embedding sidecar {path} must hold exactly {EMBEDDING_DIM} float32 values, "
            f"got {len(raw)} bytes"
        )
    return SpeakerEmbedding(np.frombuffer(raw, dtype="<f4").copy(), source_id or path.stem)
