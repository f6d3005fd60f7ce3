"""Dense linear-algebra and transformer kernels.

Everything here is a pure function over float64 numpy arrays: no framework,
no autodiff, no hidden state. For a fixed build the accumulation order is
fixed, so results are bit-reproducible and oracle comparisons can use tight
tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError

# A Matrix is a 2-D float64 ndarray. AttentionStats is the post-softmax
# attention of one layer averaged over heads: an N x N row-stochastic matrix.
Matrix = np.ndarray
AttentionStats = np.ndarray

LAYER_NORM_EPS = 1e-6

_GELU_C = math.sqrt(2.0 / math.pi)


def as_matrix(x, name: str = "matrix") -> Matrix:
    """Coerce to a 2-D float64 array, rejecting other ranks."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def require_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.isfinite(arr).all():
        raise ContractError(f"{name} contains non-finite entries")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions differ ({a.shape} x {b.shape})"
        )
    out = a @ b
    require_finite(out, "matmul output")
    return out


def softmax_rows(m: Matrix) -> Matrix:
    """Row-wise softmax with max subtraction for overflow safety."""
    m = as_matrix(m)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm(
    m: Matrix,
    scale: np.ndarray,
    shift: np.ndarray,
    eps: float = LAYER_NORM_EPS,
) -> Matrix:
    """Per-row normalization to zero mean / unit variance, then affine."""
    m = as_matrix(m)
    scale = np.asarray(scale, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    if scale.shape != (m.shape[1],) or shift.shape != (m.shape[1],):
        raise DimensionError(
            f"layer_norm: scale/shift must have shape ({m.shape[1]},)"
        )
    mean = m.mean(axis=1, keepdims=True)
    var = m.var(axis=1, keepdims=True)
    normed = (m - mean) / np.sqrt(var + eps)
    out = normed * scale + shift
    require_finite(out, "layer_norm output")
    return out


def gelu(m: np.ndarray) -> np.ndarray:
    """GELU, tanh approximation."""
    m = np.asarray(m, dtype=np.float64)
    return 0.5 * m * (1.0 + np.tanh(_GELU_C * (m + 0.044715 * m**3)))


def linear(m: Matrix, w: Matrix, b: np.ndarray) -> Matrix:
    """Affine map: m @ w + b."""
    m = as_matrix(m, "input")
    w = as_matrix(w, "weight")
    b = np.asarray(b, dtype=np.float64)
    if m.shape[1] != w.shape[0]:
        raise DimensionError(
            f"linear: input width {m.shape[1]} != weight rows {w.shape[0]}"
        )
    if b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias must have shape ({w.shape[1]},)")
    out = m @ w + b
    require_finite(out, "linear output")
    return out


def sigmoid(m: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    m = np.asarray(m, dtype=np.float64)
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    em = np.exp(m[~pos])
    out[~pos] = em / (1.0 + em)
    return out


@dataclass(frozen=True)
class LayerParams:
    """Weights of one pre-norm transformer layer.

    Attention projections are packed as w_qkv with column blocks [Q | K | V],
    each ``dim`` wide, and heads slice those blocks contiguously. The FFN
    hidden width is fixed at 4 x dim.
    """

    w_qkv: np.ndarray
    b_qkv: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    w_fc1: np.ndarray
    b_fc1: np.ndarray
    w_fc2: np.ndarray
    b_fc2: np.ndarray
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray
    heads: int

    def __post_init__(self):
        d = self.dim
        expected = {
            "w_qkv": (d, 3 * d),
            "b_qkv": (3 * d,),
            "w_out": (d, d),
            "b_out": (d,),
            "w_fc1": (d, 4 * d),
            "b_fc1": (4 * d,),
            "w_fc2": (4 * d, d),
            "b_fc2": (d,),
            "ln1_scale": (d,),
            "ln1_shift": (d,),
            "ln2_scale": (d,),
            "ln2_shift": (d,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionError(f"LayerParams.{name}: expected {shape}, got {got}")
        if self.heads < 1 or d % self.heads != 0:
            raise ConfigError(
                f"model dim {d} not divisible by head count {self.heads}"
            )

    @property
    def dim(self) -> int:
        return int(self.w_qkv.shape[0])


def mhsa(tokens: Matrix, params: LayerParams) -> tuple[Matrix, AttentionStats]:
    """Multi-head self-attention over the token rows.

    Returns the attention output (before any residual) and the post-softmax
    attention matrix averaged over heads. The averaged matrix is an N x N
    row-stochastic map used by the pruning stage as a token-importance
    signal; no positional information enters here, so the whole operation is
    permutation-equivariant in the token rows.
    """
    x = as_matrix(tokens, "tokens")
    d = params.dim
    if x.shape[1] != d:
        raise DimensionError(f"mhsa: token width {x.shape[1]} != model dim {d}")
    n = x.shape[0]
    if n < 1:
        raise DimensionError("mhsa: need at least one token")

    qkv = x @ params.w_qkv + params.b_qkv
    q, k, v = qkv[:, :d], qkv[:, d : 2 * d], qkv[:, 2 * d :]

    d_head = d // params.heads
    inv_sqrt = 1.0 / math.sqrt(d_head)
    out = np.empty((n, d), dtype=np.float64)
    attn_sum = np.zeros((n, n), dtype=np.float64)
    for h in range(params.heads):
        cols = slice(h * d_head, (h + 1) * d_head)
        scores = (q[:, cols] @ k[:, cols].T) * inv_sqrt
        attn = softmax_rows(scores)
        attn_sum += attn
        out[:, cols] = attn @ v[:, cols]

    result = out @ params.w_out + params.b_out
    require_finite(result, "mhsa output")
    return result, attn_sum / params.heads


def ffn(tokens: Matrix, params: LayerParams) -> Matrix:
    """Position-wise feed-forward block: linear, GELU, linear."""
    hidden = gelu(linear(tokens, params.w_fc1, params.b_fc1))
    return linear(hidden, params.w_fc2, params.b_fc2)
