"""Portable float tensor files ("PFT1") plus a raw PGM exporter.

Layout: ``b"PFT1"``, u32-LE ndim, ndim u32-LE dims, then prod(dims)
little-endian IEEE-754 float32 values in row-major order.  Readers are
strict: wrong magic, short payloads, and trailing bytes are all rejected.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import PFTFormatError, ShapeError

MAGIC = b"PFT1"


def write_pft(path, values) -> None:
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float32))
    if arr.ndim < 1:
        raise ShapeError("PFT tensors need at least one dimension")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_pft(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise PFTFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 8:
        raise PFTFormatError(f"{path}: truncated header")
    (ndim,) = struct.unpack_from("<I", blob, 4)
    if ndim < 1:
        raise PFTFormatError(f"{path}: ndim must be positive")
    header_end = 8 + 4 * ndim
    if len(blob) < header_end:
        raise PFTFormatError(f"{path}: truncated dim list")
    dims = struct.unpack_from(f"<{ndim}I", blob, 8)
    if any(d == 0 for d in dims):
        raise PFTFormatError(f"{path}: zero dimension in {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    expected = header_end + 4 * count
    if len(blob) != expected:
        raise PFTFormatError(
            f"{path}: payload is {len(blob) - header_end} bytes, expected {4 * count}")
    data = np.frombuffer(blob, dtype="<f4", offset=header_end, count=count)
    return data.reshape(dims).astype(np.float32)


def write_pgm(path, values) -> None:
    """Write a single [0,1] map as binary PGM (P5, maxval 255)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError("PGM export expects a 2-D map")
    quantized = np.round(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)
    h, w = quantized.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantized.tobytes(order="C"))
