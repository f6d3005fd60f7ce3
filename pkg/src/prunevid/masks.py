"""Binary token-retention masks and their P2 (ASCII) PGM serialization.

One mask volume per pruning stage: slice t, pixel (h, w) is 1 iff token
(t, h, w) survived that pruning. ASCII PGM keeps the files diffable and
byte-stable across runs.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def retention_mask(positions: np.ndarray, grid: tuple[int, int, int]) -> np.ndarray:
    """(T', H', W') uint8 volume with ones at the kept positions."""
    tp, hp, wp = grid
    mask = np.zeros((tp, hp, wp), dtype=np.uint8)
    p = np.asarray(positions, dtype=np.int64)
    if p.size:
        mask[p[:, 0], p[:, 1], p[:, 2]] = 1
    return mask


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ContractError(f"PGM image must be 2-D, got {image.shape}")
    h, w = image.shape
    maxval = max(1, int(image.max()) if image.size else 1)
    lines = [f"P2", f"{w} {h}", f"{maxval}"]
    for row in image:
        lines.append(" ".join(str(int(v)) for v in row))
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as f:
        tokens = f.read().split()
    if not tokens or tokens[0] != "P2":
        raise ContractError(f"{path}: not an ASCII PGM")
    w, h, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4 : 4 + w * h]], dtype=np.int64)
    if data.size != w * h:
        raise ContractError(f"{path}: truncated PGM payload")
    return data.reshape(h, w)
