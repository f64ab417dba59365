"""PFMAP1 on-disk format writer.

Layout (little-endian): magic "PFMAP1", then Hp, Wp, D as u32, then
Hp*Wp*D float32 values row-major. Features are stored as f32 regardless
of the model's compute precision.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PFMAP1"


def write_pfmap(grid: np.ndarray, path: str | Path) -> None:
    grid = np.asarray(grid)
    if grid.ndim != 3:
        raise ValueError(f"feature grid must be Hp x Wp x D, got shape {grid.shape}")
    hp, wp, d = grid.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", hp, wp, d))
        f.write(np.ascontiguousarray(grid, dtype="<f4").tobytes())


def read_header(path: str | Path) -> tuple[int, int, int]:
    with open(path, "rb") as f:
        head = f.read(len(MAGIC) + 12)
    if len(head) < len(MAGIC) + 12 or head[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a PFMAP1 file")
    return struct.unpack_from("<III", head, len(MAGIC))
