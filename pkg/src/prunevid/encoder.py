"""Pre-norm transformer encoder with scheduled mid-layer token pruning.

Each layer runs x <- x + MHSA(LN(x)); when a pruning is scheduled for the
layer, the survivor set is chosen from that same layer's head-averaged
attention and the token set shrinks before the FFN sub-block, so the FFN
only processes surviving tokens. Keyframe feature taps are exported at stage
boundaries for the (external) localization consumer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FeasibilityError
from .numerics import AttentionStats, LayerParams, ffn, layer_norm, mhsa
from .pruning import (
    PruneConfig,
    apply_prune,
    importance_scores,
    kept_count,
    random_select,
    select_tokens,
    select_tokens_unified,
    weighted_column_means,
)
from .tokenizer import TokenSet, keyframe_token_ids

# Explicit pruning schedules for the two reference depths; the arithmetic
# fallback below approximates "start at one third, repeat every quarter".
_EXPLICIT_SCHEDULES = {12: [4, 7, 10], 24: [7, 13, 19]}


def default_schedule(depth: int) -> list[int]:
    """Default 1-based pruning layer indices for a given encoder depth."""
    if depth < 4:
        raise ConfigError(f"no pruning schedule for depth {depth} < 4")
    if depth in _EXPLICIT_SCHEDULES:
        return list(_EXPLICIT_SCHEDULES[depth])
    start = math.ceil(depth / 3)
    step = int(depth / 4 + 0.5)
    layers = [start, start + step, start + 2 * step]
    return [p for p in layers if p <= depth]


def default_stage_boundaries(depth: int, prune_layers: list[int]) -> list[int]:
    """Keyframe-tap layers: the layer before each pruning, plus the last."""
    ends = sorted({p - 1 for p in prune_layers if p > 1} | {depth})
    return ends


@dataclass(frozen=True)
class EncoderConfig:
    depth: int
    dim: int
    heads: int
    prune_layers: tuple[int, ...] = ()
    keep_rate: float = 1.0
    keyframe_weight: float = 1.0
    stage_boundaries: tuple[int, ...] | None = None
    strategy: str = "keyframe_gap"
    prune_seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("encoder depth must be >= 1")
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads != 0:
            raise ConfigError(
                f"model dim {self.dim} not divisible by head count {self.heads}"
            )
        prune_layers = tuple(int(p) for p in self.prune_layers)
        if any(
            b <= a for a, b in zip(prune_layers, prune_layers[1:])
        ):
            raise ConfigError("prune layers must be strictly increasing")
        if prune_layers and (prune_layers[0] < 1 or prune_layers[-1] > self.depth):
            raise ConfigError(
                f"prune layers {prune_layers} outside [1, {self.depth}]"
            )
        # Feasibility of keep_rate against the actual token count is a
        # runtime property, checked per pruning in run_encoder.
        PruneConfig(self.keep_rate, self.keyframe_weight, self.strategy)
        object.__setattr__(self, "prune_layers", prune_layers)
        if self.stage_boundaries is None:
            object.__setattr__(
                self,
                "stage_boundaries",
                tuple(default_stage_boundaries(self.depth, list(prune_layers))),
            )
        else:
            bounds = tuple(int(b) for b in self.stage_boundaries)
            if any(b < 1 or b > self.depth for b in bounds):
                raise ConfigError(f"stage boundaries {bounds} outside [1, depth]")
            object.__setattr__(self, "stage_boundaries", bounds)

    def prune_config(self) -> PruneConfig:
        return PruneConfig(
            self.keep_rate, self.keyframe_weight, self.strategy, self.prune_seed
        )


@dataclass(frozen=True)
class PruneRecord:
    """What one pruning did: where, what survived, and the scores it saw.

    kept_ids index into the token set as it stood entering the pruning;
    score_ids/score_values cover the ranked candidates (non-keyframe tokens
    under the default strategy, all tokens under unified_gap).
    """

    layer: int
    tokens_before: int
    tokens_after: int
    kept_ids: np.ndarray
    kept_positions: np.ndarray
    score_ids: np.ndarray
    score_values: np.ndarray


@dataclass
class EncoderOutput:
    tokens: TokenSet
    keyframe_taps: list[np.ndarray] = field(default_factory=list)
    prune_trace: list[PruneRecord] = field(default_factory=list)


def _prune_token_set(
    ts: TokenSet, attn_mean: AttentionStats, prune: PruneConfig, layer: int
) -> tuple[TokenSet, PruneRecord]:
    kf = keyframe_token_ids(ts)
    n, n1 = ts.count, int(kf.size)

    if prune.strategy == "unified_gap":
        all_scores = weighted_column_means(attn_mean, kf, prune.keyframe_weight)
        kept = select_tokens_unified(all_scores, n, prune.keep_rate)
        new_ts = ts.take(kept)
        score_ids = np.arange(n, dtype=np.int64)
        score_values = all_scores
    else:
        scores = importance_scores(attn_mean, kf, prune.keyframe_weight)
        if prune.strategy == "random":
            # Seeded per layer so repeated runs are reproducible; the
            # attention-based scores are still recorded for inspection.
            kept_nonkey = random_select(ts, prune.keep_rate, prune.seed + layer)
        else:
            kept_nonkey = select_tokens(scores, n, n1, prune.keep_rate)
        new_ts = apply_prune(ts, kept_nonkey)
        kept = np.sort(np.concatenate([kf, kept_nonkey]))
        score_ids = scores.ids
        score_values = scores.values

    record = PruneRecord(
        layer=layer,
        tokens_before=n,
        tokens_after=new_ts.count,
        kept_ids=kept,
        kept_positions=new_ts.positions.copy(),
        score_ids=score_ids,
        score_values=score_values,
    )
    return new_ts, record


def encoder_layer(
    ts: TokenSet,
    params: LayerParams,
    prune: PruneConfig | None = None,
    layer: int = 0,
) -> tuple[TokenSet, AttentionStats, PruneRecord | None]:
    """One pre-norm layer, optionally pruning between attention and FFN.

    Returns the (possibly smaller) token set, this layer's head-averaged
    attention over the pre-prune tokens, and the prune record when a
    pruning ran.
    """
    attn_out, attn_mean = mhsa(
        layer_norm(ts.values, params.ln1_scale, params.ln1_shift), params
    )
    ts = ts.with_values(ts.values + attn_out)

    record = None
    if prune is not None:
        ts, record = _prune_token_set(ts, attn_mean, prune, layer)

    hidden = layer_norm(ts.values, params.ln2_scale, params.ln2_shift)
    ts = ts.with_values(ts.values + ffn(hidden, params))
    return ts, attn_mean, record


def run_encoder(
    ts: TokenSet, cfg: EncoderConfig, params: list[LayerParams]
) -> EncoderOutput:
    """Apply the full layer stack with the configured pruning schedule.

    Keyframe taps are gathered after each stage-boundary layer completes.
    Every scheduled pruning is feasibility-checked against the live token
    count; infeasible schedules raise with N, N1 and the keep rate named.
    """
    if len(params) != cfg.depth:
        raise ConfigError(
            f"{len(params)} layer params for depth {cfg.depth}"
        )
    for lp in params:
        if lp.dim != cfg.dim or lp.heads != cfg.heads:
            raise ConfigError("layer params do not match encoder config")

    prune_at = set(cfg.prune_layers)
    prune_cfg = cfg.prune_config()
    out = EncoderOutput(tokens=ts)
    for layer in range(1, cfg.depth + 1):
        prune = prune_cfg if layer in prune_at else None
        ts, _, record = encoder_layer(ts, params[layer - 1], prune, layer)
        if record is not None:
            out.prune_trace.append(record)
        if layer in cfg.stage_boundaries:
            out.keyframe_taps.append(ts.values[keyframe_token_ids(ts)].copy())
    out.tokens = ts
    return out


def planned_token_counts(
    n_tokens: int,
    n_keyframe: int,
    depth: int,
    prune_layers: tuple[int, ...],
    keep_rate: float,
) -> list[tuple[int, int]]:
    """Per-layer (tokens entering, tokens leaving) under the floor count law.

    This is the arithmetic mirror of run_encoder's pruning bookkeeping; the
    cost model and the CLI's up-front feasibility validation both use it.
    """
    if not 0.0 < keep_rate <= 1.0:
        raise ConfigError(f"keep rate must be in (0, 1], got {keep_rate}")
    prune_at = set(prune_layers)
    counts = []
    n = n_tokens
    for layer in range(1, depth + 1):
        before = n
        if layer in prune_at:
            keep = kept_count(n, keep_rate)
            if keep <= n_keyframe:
                raise FeasibilityError(n, n_keyframe, keep_rate)
            n = keep
        counts.append((before, n))
    return counts
