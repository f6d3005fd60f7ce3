"""Video clips, cube tokenization and token bookkeeping.

A clip of shape (T, H, W, 3) is carved into non-overlapping cubes of
2 x 16 x 16 pixels, each projected to one token, giving a token grid of
shape (T/2, H/16, W/16). Tokens keep their (t, h, w) grid position for the
whole pipeline so that pruned sets can later be scattered back into a dense
feature map.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

CUBE_FRAMES = 2
CUBE_PATCH = 16
CHANNELS = 3
CUBE_VOLUME = CUBE_FRAMES * CUBE_PATCH * CUBE_PATCH * CHANNELS

_CLIP_HEADER = struct.Struct("<4I")  # T, H, W, C as little-endian uint32


@dataclass(frozen=True)
class VideoClip:
    """Raw video volume, (T, H, W, C) float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise DimensionError(f"clip must be (T,H,W,C), got shape {arr.shape}")
        t, h, w, c = arr.shape
        if c != CHANNELS:
            raise ConfigError(f"clip must have {CHANNELS} channels, got {c}")
        if t % CUBE_FRAMES != 0:
            raise ConfigError(f"frame count {t} not divisible by {CUBE_FRAMES}")
        if h % CUBE_PATCH != 0 or w % CUBE_PATCH != 0:
            raise ConfigError(
                f"spatial size {h}x{w} not divisible by {CUBE_PATCH}"
            )
        object.__setattr__(self, "data", arr)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def grid(self) -> tuple[int, int, int]:
        return (
            self.frames // CUBE_FRAMES,
            self.height // CUBE_PATCH,
            self.width // CUBE_PATCH,
        )


def default_keyframe_tubelet(n_tubelets: int) -> int:
    """Tubelet index holding the clip's middle frame: floor(T'/2)."""
    return n_tubelets // 2


@dataclass(frozen=True)
class TokenSet:
    """A sparse, canonically ordered collection of tokens.

    ``values`` is (M, d); ``positions`` is (M, 3) int64 rows of (t, h, w)
    grid coordinates, unique and sorted in row-major order at all times.
    ``keyframe_t`` is the tubelet index whose tokens are never pruned under
    the default strategy.
    """

    values: np.ndarray
    positions: np.ndarray
    grid: tuple[int, int, int]
    keyframe_t: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        positions = np.asarray(self.positions, dtype=np.int64)
        if values.ndim != 2:
            raise DimensionError(f"values must be 2-D, got {values.shape}")
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise DimensionError(f"positions must be (M,3), got {positions.shape}")
        if values.shape[0] != positions.shape[0]:
            raise DimensionError(
                f"{values.shape[0]} values vs {positions.shape[0]} positions"
            )
        tp, hp, wp = self.grid
        if positions.shape[0] > tp * hp * wp:
            raise ContractError("more tokens than grid cells")
        if positions.shape[0]:
            if positions.min() < 0:
                raise ContractError("negative grid position")
            if (
                positions[:, 0].max() >= tp
                or positions[:, 1].max() >= hp
                or positions[:, 2].max() >= wp
            ):
                raise ContractError("token position outside grid")
            flat = (positions[:, 0] * hp + positions[:, 1]) * wp + positions[:, 2]
            if not (np.diff(flat) > 0).all():
                raise ContractError(
                    "positions must be unique and sorted in row-major order"
                )
        if not 0 <= self.keyframe_t < tp:
            raise ConfigError(
                f"keyframe tubelet {self.keyframe_t} outside [0, {tp})"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "positions", positions)

    @property
    def count(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def with_values(self, values: np.ndarray) -> "TokenSet":
        """Same tokens, new value matrix."""
        return replace(self, values=values)

    def take(self, ids: np.ndarray) -> "TokenSet":
        """Subset by ascending token indices; canonical order is preserved."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and not (np.diff(ids) > 0).all():
            raise ContractError("take: indices must be strictly ascending")
        return replace(
            self, values=self.values[ids], positions=self.positions[ids]
        )


def cube_embed(
    clip: VideoClip,
    weights: np.ndarray,
    bias: np.ndarray,
    keyframe_t: int | None = None,
) -> TokenSet:
    """Project every 2x16x16 cube of the clip to one token.

    The cube is flattened in (frame, row, col, channel) order and mapped by
    a single affine projection shared across the grid, so the embedding is
    linear in the clip for zero bias.
    """
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[0] != CUBE_VOLUME:
        raise DimensionError(
            f"embed weights must be ({CUBE_VOLUME}, d), got {weights.shape}"
        )
    dim = weights.shape[1]
    if bias.shape != (dim,):
        raise DimensionError(f"embed bias must have shape ({dim},)")

    tp, hp, wp = clip.grid
    # (T', 2, H', 16, W', 16, C) -> (T', H', W', cube) without copying twice.
    cubes = clip.data.reshape(tp, CUBE_FRAMES, hp, CUBE_PATCH, wp, CUBE_PATCH, CHANNELS)
    cubes = cubes.transpose(0, 2, 4, 1, 3, 5, 6).reshape(tp * hp * wp, CUBE_VOLUME)
    values = cubes @ weights + bias

    ts, hs, ws = np.meshgrid(
        np.arange(tp), np.arange(hp), np.arange(wp), indexing="ij"
    )
    positions = np.stack(
        [ts.ravel(), hs.ravel(), ws.ravel()], axis=1
    ).astype(np.int64)

    if keyframe_t is None:
        keyframe_t = default_keyframe_tubelet(tp)
    return TokenSet(values, positions, (tp, hp, wp), keyframe_t)


def keyframe_token_ids(ts: TokenSet) -> np.ndarray:
    """Indices of the tokens whose tubelet is the keyframe tubelet."""
    return np.flatnonzero(ts.positions[:, 0] == ts.keyframe_t)


@dataclass(frozen=True)
class PositionalTable:
    """Additive positional encoding, one d-vector per grid cell.

    Sinusoidal and factorized over the three axes: the channel range is
    split into three contiguous chunks, each carrying a standard 1-D
    sin/cos encoding of one coordinate. Deterministic in (grid, dim).
    """

    grid: tuple[int, int, int]
    dim: int
    table: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.dim < 6 or self.dim % 2 != 0:
            raise ConfigError("positional table needs an even dim >= 6")
        if self.table is None:
            object.__setattr__(self, "table", _build_table(self.grid, self.dim))

    def lookup(self, positions: np.ndarray) -> np.ndarray:
        p = np.asarray(positions, dtype=np.int64)
        return self.table[p[:, 0], p[:, 1], p[:, 2]]


def _axis_encoding(length: int, dim: int) -> np.ndarray:
    """Standard sin/cos encoding of integer coordinates 0..length-1."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(dim // 2, dtype=np.float64)[None, :]
    freq = 1.0 / np.power(10000.0, 2.0 * idx / dim)
    enc = np.empty((length, dim), dtype=np.float64)
    enc[:, 0::2] = np.sin(pos * freq)
    enc[:, 1::2] = np.cos(pos * freq)
    return enc


def _build_table(grid: tuple[int, int, int], dim: int) -> np.ndarray:
    tp, hp, wp = grid
    d_t = (dim // 3) // 2 * 2
    d_h = d_t
    d_w = dim - d_t - d_h
    enc_t = _axis_encoding(tp, d_t)
    enc_h = _axis_encoding(hp, d_h)
    enc_w = _axis_encoding(wp, d_w)
    table = np.zeros((tp, hp, wp, dim), dtype=np.float64)
    table[..., :d_t] = enc_t[:, None, None, :]
    table[..., d_t : d_t + d_h] = enc_h[None, :, None, :]
    table[..., d_t + d_h :] = enc_w[None, None, :, :]
    return table


def add_positional(ts: TokenSet, table: PositionalTable) -> TokenSet:
    """Add each token's positional vector to its value row."""
    if table.grid != ts.grid or table.dim != ts.dim:
        raise DimensionError(
            f"positional table {table.grid}/{table.dim} does not match "
            f"token set {ts.grid}/{ts.dim}"
        )
    return ts.with_values(ts.values + table.lookup(ts.positions))


def synthetic_clip(seed: int, frames: int, height: int, width: int) -> VideoClip:
    """Standard-normal clip from a seed; the CLI's default input."""
    rng = np.random.default_rng([seed, 4])
    return VideoClip(rng.standard_normal((frames, height, width, CHANNELS)))


def write_clip(path, clip: VideoClip) -> None:
    """Binary clip file: uint32 (T,H,W,C) header then float64 data, both
    little-endian, data in (t, h, w, c) row-major order."""
    with open(path, "wb") as f:
        f.write(_CLIP_HEADER.pack(clip.frames, clip.height, clip.width, CHANNELS))
        f.write(clip.data.astype("<f8").tobytes())


def read_clip(path) -> VideoClip:
    # Truncation is an unreadable-file condition (OSError), not a contract
    # violation: the CLI maps it to its I/O exit code.
    with open(path, "rb") as f:
        header = f.read(_CLIP_HEADER.size)
        if len(header) != _CLIP_HEADER.size:
            raise OSError(f"clip file {path}: truncated header")
        t, h, w, c = _CLIP_HEADER.unpack(header)
        if c != CHANNELS:
            raise ConfigError(f"clip file {path}: expected {CHANNELS} channels")
        payload = np.fromfile(f, dtype="<f8", count=t * h * w * c)
    if payload.size != t * h * w * c:
        raise OSError(f"clip file {path}: truncated payload")
    return VideoClip(payload.astype(np.float64).reshape(t, h, w, c))
