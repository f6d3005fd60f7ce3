"""Seeded synthetic weights and the binary weight-blob format.

No pretrained checkpoints are loaded anywhere: projection weights and biases
are drawn uniformly from [-0.02, 0.02] under a named sub-seed so that every
run is reproducible from a single integer. Layer-norm parameters start at
scale 1, shift 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numerics import LayerParams
from .tokenizer import CUBE_VOLUME

WEIGHT_SCALE = 0.02

# Sub-seed tags so the embed / encoder / decoder / head draws are
# independent streams of one run seed.
_TAG_EMBED = 0
_TAG_ENCODER = 1
_TAG_DECODER = 2
_TAG_HEAD = 3

_BLOB_MAGIC = b"PVW1"
_BLOB_HEADER = struct.Struct("<4sIII")  # magic, depth, dim, heads


def _uniform(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return rng.uniform(-WEIGHT_SCALE, WEIGHT_SCALE, size=shape)


def embed_params(seed: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Cube-embedding projection (CUBE_VOLUME x dim) and bias."""
    rng = np.random.default_rng([seed, _TAG_EMBED])
    return _uniform(rng, CUBE_VOLUME, dim), _uniform(rng, dim)


def _layer_params(rng: np.random.Generator, dim: int, heads: int) -> LayerParams:
    return LayerParams(
        w_qkv=_uniform(rng, dim, 3 * dim),
        b_qkv=_uniform(rng, 3 * dim),
        w_out=_uniform(rng, dim, dim),
        b_out=_uniform(rng, dim),
        w_fc1=_uniform(rng, dim, 4 * dim),
        b_fc1=_uniform(rng, 4 * dim),
        w_fc2=_uniform(rng, 4 * dim, dim),
        b_fc2=_uniform(rng, dim),
        ln1_scale=np.ones(dim),
        ln1_shift=np.zeros(dim),
        ln2_scale=np.ones(dim),
        ln2_shift=np.zeros(dim),
        heads=heads,
    )


def encoder_params(seed: int, depth: int, dim: int, heads: int) -> list[LayerParams]:
    rng = np.random.default_rng([seed, _TAG_ENCODER])
    return [_layer_params(rng, dim, heads) for _ in range(depth)]


@dataclass(frozen=True)
class DecoderParams:
    """Shared input projection (in_dim -> dim) plus the decoder layer stack."""

    proj_w: np.ndarray
    proj_b: np.ndarray
    layers: tuple[LayerParams, ...]

    def __post_init__(self):
        if self.proj_w.ndim != 2 or self.proj_b.shape != (self.proj_w.shape[1],):
            raise ConfigError("decoder projection shapes inconsistent")
        for lp in self.layers:
            if lp.dim != self.proj_w.shape[1]:
                raise ConfigError("decoder layer width != projection width")

    @property
    def in_dim(self) -> int:
        return int(self.proj_w.shape[0])

    @property
    def dim(self) -> int:
        return int(self.proj_w.shape[1])


def decoder_params(
    seed: int, in_dim: int, dim: int, depth: int, heads: int
) -> DecoderParams:
    rng = np.random.default_rng([seed, _TAG_DECODER])
    proj_w = _uniform(rng, in_dim, dim)
    proj_b = _uniform(rng, dim)
    layers = tuple(_layer_params(rng, dim, heads) for _ in range(depth))
    return DecoderParams(proj_w, proj_b, layers)


def head_params(seed: int, dim: int, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Classification head: (dim x num_classes) weights and bias."""
    rng = np.random.default_rng([seed, _TAG_HEAD])
    return _uniform(rng, dim, num_classes), _uniform(rng, num_classes)


# Per-layer field order of the weight blob; fixed, row-major float64 LE.
_BLOB_FIELDS = (
    "ln1_scale",
    "ln1_shift",
    "w_qkv",
    "b_qkv",
    "w_out",
    "b_out",
    "ln2_scale",
    "ln2_shift",
    "w_fc1",
    "b_fc1",
    "w_fc2",
    "b_fc2",
)


def save_encoder_blob(path, params: list[LayerParams]) -> None:
    """Write encoder weights as: header (magic, depth, dim, heads) followed
    by each layer's arrays in _BLOB_FIELDS order."""
    if not params:
        raise ConfigError("cannot save an empty layer stack")
    dim, heads = params[0].dim, params[0].heads
    with open(path, "wb") as f:
        f.write(_BLOB_HEADER.pack(_BLOB_MAGIC, len(params), dim, heads))
        for lp in params:
            for name in _BLOB_FIELDS:
                f.write(np.ascontiguousarray(getattr(lp, name), dtype="<f8").tobytes())


def load_encoder_blob(path) -> list[LayerParams]:
    # File corruption surfaces as OSError so the CLI exits with its I/O code.
    with open(path, "rb") as f:
        header = f.read(_BLOB_HEADER.size)
        if len(header) != _BLOB_HEADER.size:
            raise OSError(f"weight blob {path}: truncated header")
        magic, depth, dim, heads = _BLOB_HEADER.unpack(header)
        if magic != _BLOB_MAGIC:
            raise OSError(f"weight blob {path}: bad magic {magic!r}")
        shapes = {
            "ln1_scale": (dim,),
            "ln1_shift": (dim,),
            "w_qkv": (dim, 3 * dim),
            "b_qkv": (3 * dim,),
            "w_out": (dim, dim),
            "b_out": (dim,),
            "ln2_scale": (dim,),
            "ln2_shift": (dim,),
            "w_fc1": (dim, 4 * dim),
            "b_fc1": (4 * dim,),
            "w_fc2": (4 * dim, dim),
            "b_fc2": (dim,),
        }
        layers = []
        for _ in range(depth):
            fields = {}
            for name in _BLOB_FIELDS:
                shape = shapes[name]
                count = int(np.prod(shape))
                arr = np.fromfile(f, dtype="<f8", count=count)
                if arr.size != count:
                    raise OSError(f"weight blob {path}: truncated payload")
                fields[name] = arr.astype(np.float64).reshape(shape)
            layers.append(LayerParams(heads=heads, **fields))
    return layers
