"""Analytic inference-cost model in multiply-accumulate counts.

MACs are counted exactly (Python ints) for the cube embedding, every
attention and FFN sub-block at its live token count, the context decoder
over (queries + surviving tokens) at decoder width, and a constant charge
for the external box-localization branch. One MAC is reported as one FLOP
unit; GFLOPs = MACs * 1e-9.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .encoder import planned_token_counts
from .errors import ConfigError
from .tokenizer import CUBE_PATCH, CUBE_FRAMES, CUBE_VOLUME

LOC_BRANCH_GFLOPS = 13.5

CONVENTION = (
    "1 MAC = 1 FLOP unit; counts qkv/output projections (4*N*d^2), "
    "attention score and mix products (2*N^2*d), FFN (8*N*d^2), cube "
    "embedding, and decoder layers over (queries + final tokens) at decoder "
    "width; within a pruning layer attention is charged at the pre-prune "
    "count and the FFN at the post-prune count; omits layer norm, softmax, "
    "GELU, biases, the decoder input projection and the classification head "
    "(sub-0.5% effects); resolution r is modeled as a square r x r input."
)

CSV_HEADER = (
    "rho",
    "resolution",
    "encoder_gflops",
    "decoder_gflops",
    "loc_gflops",
    "total_gflops",
)

ENCODER_COMPONENTS = ("embed", "attn", "ffn")


def flops_linear(tokens: int, d_in: int, d_out: int) -> int:
    """MACs of a dense layer applied to ``tokens`` rows."""
    return int(tokens) * int(d_in) * int(d_out)


def flops_attention_layer(n_tokens: int, dim: int) -> int:
    """MACs of one attention sub-block: projections plus score/mix products."""
    n, d = int(n_tokens), int(dim)
    return 4 * n * d * d + 2 * n * n * d


def flops_ffn_layer(n_tokens: int, dim: int) -> int:
    """MACs of one FFN sub-block at hidden width 4*dim."""
    n, d = int(n_tokens), int(dim)
    return 8 * n * d * d


@dataclass(frozen=True)
class CostConfig:
    """Everything the cost model needs about one operating point."""

    depth: int
    dim: int
    heads: int
    dec_dim: int
    dec_depth: int
    frames: int
    height: int
    width: int
    keep_rate: float
    prune_layers: tuple[int, ...]
    n_queries: int = 100
    loc_gflops: float = LOC_BRANCH_GFLOPS

    def __post_init__(self):
        if self.frames % CUBE_FRAMES or self.height % CUBE_PATCH or self.width % CUBE_PATCH:
            raise ConfigError(
                f"input {self.frames}x{self.height}x{self.width} not divisible "
                f"by the {CUBE_FRAMES}x{CUBE_PATCH}x{CUBE_PATCH} cube"
            )
        if not 0.0 < self.keep_rate <= 1.0:
            raise ConfigError(f"keep rate must be in (0, 1], got {self.keep_rate}")
        object.__setattr__(
            self, "prune_layers", tuple(int(p) for p in self.prune_layers)
        )

    @property
    def grid(self) -> tuple[int, int, int]:
        return (
            self.frames // CUBE_FRAMES,
            self.height // CUBE_PATCH,
            self.width // CUBE_PATCH,
        )

    @property
    def n_tokens(self) -> int:
        tp, hp, wp = self.grid
        return tp * hp * wp

    @property
    def n_keyframe(self) -> int:
        _, hp, wp = self.grid
        return hp * wp


@dataclass(frozen=True)
class FlopsEntry:
    layer: int  # 0 for the embedding, encoder/decoder layers are 1-based
    component: str
    tokens: int
    macs: int


@dataclass(frozen=True)
class FlopsReport:
    entries: tuple[FlopsEntry, ...]
    convention: str = CONVENTION
    meta: dict = field(default_factory=dict)

    def component_macs(self, *components: str) -> int:
        return sum(e.macs for e in self.entries if e.component in components)

    @property
    def total_macs(self) -> int:
        return sum(e.macs for e in self.entries)

    @property
    def total_gflops(self) -> float:
        return self.total_macs * 1e-9

    @property
    def encoder_gflops(self) -> float:
        return self.component_macs(*ENCODER_COMPONENTS) * 1e-9

    @property
    def decoder_gflops(self) -> float:
        return self.component_macs("decoder") * 1e-9

    @property
    def loc_gflops(self) -> float:
        return self.component_macs("loc") * 1e-9

    def encoder_token_counts(self) -> list[tuple[int, int]]:
        """Per encoder layer (attention tokens, ffn tokens)."""
        attn = {e.layer: e.tokens for e in self.entries if e.component == "attn"}
        ffn_ = {e.layer: e.tokens for e in self.entries if e.component == "ffn"}
        return [(attn[i], ffn_[i]) for i in sorted(attn)]

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "meta": dict(self.meta),
            "entries": [
                {
                    "layer": e.layer,
                    "component": e.component,
                    "tokens": e.tokens,
                    "macs": e.macs,
                }
                for e in self.entries
            ],
            "component_gflops": {
                c: self.component_macs(c) * 1e-9
                for c in ("embed", "attn", "ffn", "decoder", "loc")
            },
            "encoder_gflops": self.encoder_gflops,
            "decoder_gflops": self.decoder_gflops,
            "loc_gflops": self.loc_gflops,
            "total_gflops": self.total_gflops,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def csv_row(self) -> tuple:
        return (
            self.meta.get("rho"),
            self.meta.get("resolution"),
            round(self.encoder_gflops, 6),
            round(self.decoder_gflops, 6),
            round(self.loc_gflops, 6),
            round(self.total_gflops, 6),
        )


def flops_total(cfg: CostConfig) -> FlopsReport:
    """Itemized cost of one full forward at the configured operating point."""
    counts = planned_token_counts(
        cfg.n_tokens, cfg.n_keyframe, cfg.depth, cfg.prune_layers, cfg.keep_rate
    )
    entries = [
        FlopsEntry(0, "embed", cfg.n_tokens, flops_linear(cfg.n_tokens, CUBE_VOLUME, cfg.dim))
    ]
    for layer, (before, after) in enumerate(counts, start=1):
        entries.append(
            FlopsEntry(layer, "attn", before, flops_attention_layer(before, cfg.dim))
        )
        entries.append(
            FlopsEntry(layer, "ffn", after, flops_ffn_layer(after, cfg.dim))
        )

    m_final = counts[-1][1]
    dec_tokens = cfg.n_queries + m_final
    for layer in range(1, cfg.dec_depth + 1):
        entries.append(
            FlopsEntry(
                layer,
                "decoder",
                dec_tokens,
                flops_attention_layer(dec_tokens, cfg.dec_dim)
                + flops_ffn_layer(dec_tokens, cfg.dec_dim),
            )
        )

    entries.append(FlopsEntry(0, "loc", 0, int(round(cfg.loc_gflops * 1e9))))
    meta = {
        "rho": cfg.keep_rate,
        "resolution": cfg.height,
        "frames": cfg.frames,
        "depth": cfg.depth,
        "dim": cfg.dim,
        "prune_layers": list(cfg.prune_layers),
        "final_tokens": m_final,
    }
    return FlopsReport(tuple(entries), meta=meta)


def sweep_csv(reports: list[FlopsReport]) -> str:
    """One CSV row per report, in the given order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for report in reports:
        writer.writerow(report.csv_row())
    return buf.getvalue()
