"""Writer for the DSFT tensor container consumed by the spectral pipelines.

Layout: magic "DSFT", version u32 LE = 1, then C, h, w, patch_size as u32 LE,
8 reserved zero bytes, then C*h*w float32 LE values row-major [c][y][x].
"""

import struct
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<4sIIIII8x")


def write_dsft(data: np.ndarray, patch_size: int, path) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3:
        raise ValueError(f"tensor must be (C, h, w), got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("tensor contains non-finite values")
    c, h, w = data.shape
    with open(Path(path), "wb") as fh:
        fh.write(_HEADER.pack(b"DSFT", 1, c, h, w, patch_size))
        fh.write(data.tobytes(order="C"))
