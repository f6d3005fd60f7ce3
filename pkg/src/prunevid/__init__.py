"""Keyframe-centric token pruning for video transformers.

Inference-only pipeline: cube tokenization, a pre-norm encoder that prunes
non-keyframe tokens mid-layer from its own attention maps, sparse-token
restoration with extended 3D RoI pooling and a context-refinement decoder,
plus an analytic MAC-based cost model and a seeded oracle suite.
"""

from .costmodel import CostConfig, FlopsReport, flops_attention_layer, flops_linear, flops_total
from .encoder import EncoderConfig, EncoderOutput, default_schedule, run_encoder
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FeasibilityError,
    PrunevidError,
)
from .pruning import (
    ImportanceScores,
    PruneConfig,
    apply_prune,
    importance_scores,
    random_select,
    select_tokens,
)
from .refine import (
    DecoderConfig,
    FeatureGrid,
    RoiSpec,
    classify,
    extend_box,
    roi_align_3d,
    run_decoder,
    scatter_to_grid,
)
from .tokenizer import PositionalTable, TokenSet, VideoClip, add_positional, cube_embed, keyframe_token_ids

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "CostConfig",
    "DecoderConfig",
    "DimensionError",
    "EncoderConfig",
    "EncoderOutput",
    "FeasibilityError",
    "FeatureGrid",
    "FlopsReport",
    "ImportanceScores",
    "PositionalTable",
    "PruneConfig",
    "PrunevidError",
    "RoiSpec",
    "TokenSet",
    "VideoClip",
    "add_positional",
    "apply_prune",
    "classify",
    "cube_embed",
    "default_schedule",
    "extend_box",
    "flops_attention_layer",
    "flops_linear",
    "flops_total",
    "importance_scores",
    "keyframe_token_ids",
    "random_select",
    "roi_align_3d",
    "run_decoder",
    "run_encoder",
    "scatter_to_grid",
    "select_tokens",
]
