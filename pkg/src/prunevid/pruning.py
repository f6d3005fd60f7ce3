"""Keyframe-centric token pruning.

Token importance is read off the encoder layer's own head-averaged
attention: the score of token j is the weighted column mean over query rows,
with keyframe rows optionally up-weighted so that tokens correlated with the
keyframe survive preferentially. The keyframe's own tokens are never ranked
under the default strategy; they survive structurally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, FeasibilityError
from .tokenizer import TokenSet, keyframe_token_ids

ROW_SUM_TOL = 1e-6

STRATEGIES = ("keyframe_gap", "unified_gap", "random")

# Test hook for the oracle suite's negative control: when flipped, ties are
# broken toward the higher original index instead of the lower one.
_TIE_BREAK_LOWEST_FIRST = True


@dataclass(frozen=True)
class PruneConfig:
    """Per-pruning parameters.

    keep_rate is the fraction of tokens surviving a pruning; keyframe_weight
    scales keyframe query rows when averaging attention columns into scores;
    strategy picks between attention-guided selection with a protected
    keyframe (default), attention-guided selection over all tokens, and
    seeded random selection.
    """

    keep_rate: float
    keyframe_weight: float = 1.0
    strategy: str = "keyframe_gap"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.keep_rate <= 1.0:
            raise ConfigError(f"keep rate must be in (0, 1], got {self.keep_rate}")
        if self.keyframe_weight < 1.0:
            raise ConfigError(
                f"keyframe weight must be >= 1, got {self.keyframe_weight}"
            )
        if self.strategy not in STRATEGIES:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}"
            )


@dataclass(frozen=True)
class ImportanceScores:
    """Scores for the prunable tokens, aligned with ``ids`` into the
    current token set."""

    ids: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if ids.shape != values.shape or ids.ndim != 1:
            raise ContractError("ids and values must be equal-length vectors")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", values)


def kept_count(n_tokens: int, keep_rate: float) -> int:
    """Tokens surviving one pruning: floor(N * keep_rate)."""
    return int(np.floor(n_tokens * keep_rate))


def weighted_column_means(
    attn: np.ndarray, keyframe_ids: np.ndarray, keyframe_weight: float
) -> np.ndarray:
    """Column means of the attention matrix with keyframe query rows scaled
    by keyframe_weight. Returns one score per column (every token).

    Summed over all columns the result is (w*N1 + N2)/N for row-stochastic
    input, which the tests use as a normalization check.
    """
    attn = np.asarray(attn, dtype=np.float64)
    n = attn.shape[0]
    if attn.ndim != 2 or attn.shape[1] != n:
        raise ContractError(f"attention must be square, got {attn.shape}")
    row_weights = np.ones(n, dtype=np.float64)
    row_weights[np.asarray(keyframe_ids, dtype=np.int64)] = keyframe_weight
    # Reduce with sum(axis=0) rather than a BLAS matvec: the BLAS kernel may
    # accumulate different column blocks in different orders, which breaks
    # exact score ties between identical columns.
    return (attn * row_weights[:, None]).sum(axis=0) / n


def importance_scores(
    attn: np.ndarray, keyframe_ids: np.ndarray, keyframe_weight: float = 1.0
) -> ImportanceScores:
    """Importance of every non-keyframe token under keyframe-weighted
    column averaging.

    With keyframe_weight == 1 this degenerates to the plain column mean of
    the attention matrix. The input must be row-stochastic (post-softmax).
    """
    attn = np.asarray(attn, dtype=np.float64)
    n = attn.shape[0]
    if attn.ndim != 2 or attn.shape[1] != n:
        raise ContractError(f"attention must be square, got {attn.shape}")
    keyframe_ids = np.asarray(keyframe_ids, dtype=np.int64)
    if keyframe_ids.size and (
        keyframe_ids.min() < 0 or keyframe_ids.max() >= n
    ):
        raise ContractError("keyframe ids outside [0, N)")
    row_sums = attn.sum(axis=1)
    worst = np.abs(row_sums - 1.0).max() if n else 0.0
    if worst > ROW_SUM_TOL:
        raise ContractError(
            f"attention rows must sum to 1 (max deviation {worst:.3e})"
        )

    scores = weighted_column_means(attn, keyframe_ids, keyframe_weight)
    mask = np.ones(n, dtype=bool)
    mask[keyframe_ids] = False
    nonkey = np.flatnonzero(mask)
    return ImportanceScores(nonkey, scores[nonkey])


def _top_k_ids(ids: np.ndarray, values: np.ndarray, k: int) -> np.ndarray:
    """The k highest-scoring ids, ties broken toward the lower original
    index, returned sorted ascending."""
    if _TIE_BREAK_LOWEST_FIRST:
        order = np.lexsort((ids, -values))
    else:
        order = np.lexsort((-ids, -values))
    return np.sort(ids[order[:k]])


def select_tokens(
    scores: ImportanceScores, n_tokens: int, n_keyframe: int, keep_rate: float
) -> np.ndarray:
    """Choose the non-keyframe tokens that survive one pruning.

    Keeps the floor(N * keep_rate) - N1 highest-scoring candidates; the
    keyframe's N1 tokens survive unconditionally and are not ranked here.
    """
    keep_total = kept_count(n_tokens, keep_rate)
    if keep_total <= n_keyframe:
        raise FeasibilityError(n_tokens, n_keyframe, keep_rate)
    k = keep_total - n_keyframe
    if k > scores.ids.size:
        raise ContractError(
            f"cannot keep {k} of {scores.ids.size} non-keyframe tokens"
        )
    return _top_k_ids(scores.ids, scores.values, k)


def select_tokens_unified(
    all_scores: np.ndarray, n_tokens: int, keep_rate: float
) -> np.ndarray:
    """Ablation variant: rank every token, keyframe included, and keep the
    floor(N * keep_rate) best."""
    all_scores = np.asarray(all_scores, dtype=np.float64)
    if all_scores.shape != (n_tokens,):
        raise ContractError("need one score per token")
    k = kept_count(n_tokens, keep_rate)
    if k < 1:
        raise FeasibilityError(n_tokens, 0, keep_rate)
    return _top_k_ids(np.arange(n_tokens, dtype=np.int64), all_scores, k)


def random_select(ts: TokenSet, keep_rate: float, seed: int) -> np.ndarray:
    """Seeded uniform sample (without replacement) of surviving non-keyframe
    tokens; same count law as the attention-guided path."""
    kf = keyframe_token_ids(ts)
    n, n1 = ts.count, kf.size
    keep_total = kept_count(n, keep_rate)
    if keep_total <= n1:
        raise FeasibilityError(n, n1, keep_rate)
    mask = np.ones(n, dtype=bool)
    mask[kf] = False
    nonkey = np.flatnonzero(mask)
    rng = np.random.default_rng([seed, 7])
    chosen = rng.choice(nonkey, size=keep_total - n1, replace=False)
    return np.sort(chosen)


def apply_prune(ts: TokenSet, kept_nonkey: np.ndarray) -> TokenSet:
    """Materialize the pruned token set: keyframe tokens plus the kept
    non-keyframe tokens, restored to canonical row-major order."""
    kept_nonkey = np.asarray(kept_nonkey, dtype=np.int64)
    kf = keyframe_token_ids(ts)
    if np.intersect1d(kept_nonkey, kf).size:
        raise ContractError("kept non-keyframe ids overlap the keyframe")
    if kept_nonkey.size and (
        kept_nonkey.min() < 0 or kept_nonkey.max() >= ts.count
    ):
        raise ContractError("kept ids outside the token set")
    if np.unique(kept_nonkey).size != kept_nonkey.size:
        raise ContractError("kept ids contain duplicates")
    keep = np.sort(np.concatenate([kf, kept_nonkey]))
    return ts.take(keep)
