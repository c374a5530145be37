"""Portable float map (PFM) decoding and encoding.

Header: "Pf" (one channel) or "PF" (three), then width and height, then a scale
whose sign gives the byte order (negative = little-endian). Rows are stored
bottom to top.
"""
import re
from pathlib import Path

import numpy as np

from ..errors import PFMError

_HEADER = re.compile(rb"^(P[fF])\s+(\d+)\s+(\d+)\s+([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s")


def decode_pfm(data: bytes) -> np.ndarray:
    """PFM bytes -> float64 grid, (H, W) for "Pf" or (H, W, 3) for "PF", top row first."""
    match = _HEADER.match(data)
    if match is None:
        raise PFMError("malformed PFM header")
    kind, width, height, scale = match.groups()
    width, height, scale = int(width), int(height), float(scale)
    if width == 0 or height == 0:
        raise PFMError("PFM dimensions must be positive")
    if scale == 0:
        raise PFMError("PFM scale must be non-zero")
    channels = 3 if kind == b"PF" else 1
    count = width * height * channels
    payload = data[match.end():]
    if len(payload) < 4 * count:
        raise PFMError(f"truncated PFM payload: expected {4 * count} bytes, got {len(payload)}")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    grid = np.frombuffer(payload, dtype=dtype, count=count)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(grid.reshape(shape)).astype(np.float64)


def encode_pfm(grid) -> bytes:
    """Float grid -> little-endian PFM bytes (values stored as float32)."""
    a = np.asarray(grid)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    if a.ndim == 2:
        kind = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        kind = b"PF"
    else:
        raise PFMError(f"cannot encode an array of shape {a.shape} as PFM")
    height, width = a.shape[:2]
    header = kind + b"\n" + f"{width} {height}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(np.flipud(a), dtype="<f4").tobytes()
    return header + body


def read_pfm(path: Path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())


def write_pfm(grid, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pfm(grid))
    return path
