"""Plain-text (P2) PGM reading and writing for frame and feature dumps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DimensionError


def write_pgm(path, field: np.ndarray, maxval: int = 255) -> None:
    """Write a 2-D array with values in [0, 1] as a plain PGM file."""
    arr = np.asarray(field, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"PGM frames must be 2-D, got shape {arr.shape}")
    levels = np.rint(np.clip(arr, 0.0, 1.0) * maxval).astype(np.int64)
    h, w = levels.shape
    lines = [f"P2", f"{w} {h}", str(maxval)]
    lines.extend(" ".join(str(v) for v in row) for row in levels)
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    """Read a plain PGM back into a float array scaled to [0, 1]."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            tokens.extend(stripped.split())
    if not tokens or tokens[0] != "P2":
        raise DimensionError(f"{path} is not a plain (P2) PGM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    values = np.array(tokens[4:4 + w * h], dtype=np.float64)
    if values.size != w * h:
        raise DimensionError(f"{path} holds {values.size} samples, header says {w * h}")
    return values.reshape(h, w) / maxval
