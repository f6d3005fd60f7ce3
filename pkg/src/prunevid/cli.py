"""Command-line entry point.

Subcommands:
  run     end-to-end forward on a synthetic (or file-provided) clip; writes
          the prune trace, per-stage retention masks (ASCII PGM + JSON
          positions), per-actor class scores and report figures.
  flops   analytic GFLOPs sweep over keep rates and resolutions; writes CSV,
          itemized JSON and a figure.
  bench   seeded wall-clock microbenchmark of the encoder forward across
          keep rates.
  oracle  seeded equivalence suite comparing the production pipeline with
          the independent reference implementations.

Exit codes: 0 success, 2 configuration or feasibility error, 3 oracle
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import gc
import json
import statistics
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import figures, masks, oracles, pruning
from .costmodel import CostConfig, flops_total, sweep_csv
from .encoder import (
    EncoderConfig,
    default_schedule,
    planned_token_counts,
    run_encoder,
)
from .errors import ConfigError, PrunevidError
from .refine import (
    DecoderConfig,
    RoiSpec,
    classify,
    roi_align_3d,
    run_decoder,
    scatter_to_grid,
)
from .tokenizer import (
    PositionalTable,
    add_positional,
    cube_embed,
    read_clip,
    synthetic_clip,
)
from .weights import (
    decoder_params,
    embed_params,
    encoder_params,
    head_params,
    load_encoder_blob,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ORACLE = 3
EXIT_IO = 4

DEFAULT_BOX = (0.25, 0.25, 0.75, 0.75)


@dataclass(frozen=True)
class ModelPreset:
    depth: int
    dim: int
    heads: int
    dec_dim: int
    dec_depth: int
    dec_heads: int
    frames: int
    resolution: int
    prune_layers: tuple[int, ...]
    # Bench clips are larger than the tiny default input so that keep rates
    # down to 0.5 stay feasible and timing differences are measurable.
    bench_frames: int
    bench_resolution: int


PRESETS = {
    "vitb": ModelPreset(12, 768, 12, 384, 6, 6, 16, 224, (4, 7, 10), 16, 112),
    "vitl": ModelPreset(24, 1024, 16, 512, 12, 8, 16, 224, (7, 13, 19), 16, 112),
    "tiny": ModelPreset(4, 32, 2, 16, 2, 2, 4, 32, (2, 3), 16, 192),
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration of one ``run`` invocation.

    Flag values override config-file values, which override preset
    defaults. The advanced model-override fields (dim/depth/heads and the
    decoder analogues) are config-file only and exist so that full-size
    token geometries can run at reduced width on a desk machine.
    """

    preset: str = "tiny"
    frames: int | None = None
    resolution: int | None = None
    rho: float = 1.0
    wkf: float = 1.0
    strategy: str = "keyframe_gap"
    prune_layers: tuple[int, ...] | None = None
    seed: int = 0
    boxes: str | None = None
    out: str = "out"
    num_classes: int = 60
    extend_x: float = 0.4
    extend_y: float = 0.2
    video: str | None = None
    encoder_weights: str | None = None
    dim: int | None = None
    depth: int | None = None
    heads: int | None = None
    dec_dim: int | None = None
    dec_depth: int | None = None
    dec_heads: int | None = None

    def resolved(self) -> "ResolvedRun":
        if self.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {self.preset!r}, expected one of {sorted(PRESETS)}"
            )
        p = PRESETS[self.preset]
        depth = self.depth or p.depth
        prune_layers = (
            tuple(self.prune_layers)
            if self.prune_layers is not None
            else (p.prune_layers if depth == p.depth else tuple(default_schedule(depth)))
        )
        return ResolvedRun(
            preset=self.preset,
            frames=self.frames or p.frames,
            resolution=self.resolution or p.resolution,
            rho=self.rho,
            wkf=self.wkf,
            strategy=self.strategy,
            prune_layers=prune_layers,
            seed=self.seed,
            boxes=self.boxes,
            out=self.out,
            num_classes=self.num_classes,
            extend_x=self.extend_x,
            extend_y=self.extend_y,
            video=self.video,
            encoder_weights=self.encoder_weights,
            depth=depth,
            dim=self.dim or p.dim,
            heads=self.heads or p.heads,
            dec_dim=self.dec_dim or p.dec_dim,
            dec_depth=self.dec_depth or p.dec_depth,
            dec_heads=self.dec_heads or p.dec_heads,
        )


@dataclass(frozen=True)
class ResolvedRun:
    preset: str
    frames: int
    resolution: int
    rho: float
    wkf: float
    strategy: str
    prune_layers: tuple[int, ...]
    seed: int
    boxes: str | None
    out: str
    num_classes: int
    extend_x: float
    extend_y: float
    video: str | None
    encoder_weights: str | None
    depth: int
    dim: int
    heads: int
    dec_dim: int
    dec_depth: int
    dec_heads: int

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            depth=self.depth,
            dim=self.dim,
            heads=self.heads,
            prune_layers=self.prune_layers,
            keep_rate=self.rho,
            keyframe_weight=self.wkf,
            strategy=self.strategy,
            prune_seed=self.seed,
        )

    def validate_feasibility(self) -> None:
        """Reject bad configurations before any compute starts."""
        if self.frames % 2 or self.resolution % 16:
            raise ConfigError(
                f"input {self.frames} frames at {self.resolution} px must have "
                "even frame count and resolution divisible by 16"
            )
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.extend_x < 0 or self.extend_y < 0:
            raise ConfigError("box extension ratios must be >= 0")
        self.encoder_config()  # validates rate, weight, strategy, schedule
        tp = self.frames // 2
        hp = self.resolution // 16
        n = tp * hp * hp
        n1 = 0 if self.strategy == "unified_gap" else hp * hp
        planned_token_counts(n, n1, self.depth, self.prune_layers, self.rho)


def _load_boxes(path: str | None) -> list[tuple[float, float, float, float]]:
    if path is None:
        return [DEFAULT_BOX]
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"boxes file {path}: expected a non-empty JSON array")
    boxes = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, (list, tuple)) or len(entry) != 4:
            raise ConfigError(f"boxes file {path}: entry {i} is not [x1,y1,x2,y2]")
        x1, y1, x2, y2 = (float(v) for v in entry)
        if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
            raise ConfigError(
                f"boxes file {path}: entry {i} must satisfy 0<=x1<x2<=1, 0<=y1<y2<=1"
            )
        boxes.append((x1, y1, x2, y2))
    return boxes


def _json_dump(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_run(cfg: RunConfig) -> int:
    rc = cfg.resolved()
    rc.validate_feasibility()
    boxes = _load_boxes(rc.boxes)

    out_dir = Path(rc.out)
    masks_dir = out_dir / "masks"
    figures_dir = out_dir / "figures"
    for d in (out_dir, masks_dir, figures_dir):
        d.mkdir(parents=True, exist_ok=True)

    print(f"run: preset={rc.preset} seed={rc.seed} rho={rc.rho} "
          f"strategy={rc.strategy} input={rc.frames}x{rc.resolution}x{rc.resolution}")

    if rc.video:
        clip = read_clip(rc.video)
    else:
        clip = synthetic_clip(rc.seed, rc.frames, rc.resolution, rc.resolution)

    w_embed, b_embed = embed_params(rc.seed, rc.dim)
    ts = cube_embed(clip, w_embed, b_embed)
    ts = add_positional(ts, PositionalTable(ts.grid, rc.dim))
    n_initial = ts.count

    if rc.encoder_weights:
        enc_params = load_encoder_blob(rc.encoder_weights)
    else:
        enc_params = encoder_params(rc.seed, rc.depth, rc.dim, rc.heads)
    enc_out = run_encoder(ts, rc.encoder_config(), enc_params)

    # Classification pathway on the surviving tokens.
    grid = scatter_to_grid(enc_out.tokens)
    roi_feats = np.stack(
        [
            roi_align_3d(grid, RoiSpec(box, rc.extend_x, rc.extend_y))
            for box in boxes
        ]
    )
    dec_cfg = DecoderConfig(
        dim=rc.dec_dim, depth=rc.dec_depth, heads=rc.dec_heads, n_queries=len(boxes)
    )
    dec_params = decoder_params(rc.seed, rc.dim, rc.dec_dim, rc.dec_depth, rc.dec_heads)
    refined = run_decoder(roi_feats, enc_out.tokens, dec_cfg, dec_params)
    head_w, head_b = head_params(rc.seed, rc.dec_dim, rc.num_classes)
    scores = classify(refined, head_w, head_b)

    # Artifacts: trace, masks (PGM + JSON positions), scores, figures.
    trace = {
        "config": asdict(rc),
        "grid": list(ts.grid),
        "keyframe_t": ts.keyframe_t,
        "initial_tokens": n_initial,
        "final_tokens": enc_out.tokens.count,
        "final_ratio": enc_out.tokens.count / n_initial,
        "prunes": [
            {
                "stage": i + 1,
                "layer": rec.layer,
                "tokens_before": rec.tokens_before,
                "tokens_after": rec.tokens_after,
                "kept_ids": rec.kept_ids.tolist(),
                "kept_positions": rec.kept_positions.tolist(),
                "score_ids": rec.score_ids.tolist(),
                "score_values": rec.score_values.tolist(),
            }
            for i, rec in enumerate(enc_out.prune_trace)
        ],
    }
    _json_dump(trace, out_dir / "trace.json")

    stage_masks = []
    positions_index = []
    for i, rec in enumerate(enc_out.prune_trace):
        volume = masks.retention_mask(rec.kept_positions, ts.grid)
        stage_masks.append((f"stage {i + 1}\nlayer {rec.layer}", volume))
        for t in range(volume.shape[0]):
            masks.write_pgm(
                masks_dir / f"stage{i + 1}_layer{rec.layer}_t{t}.pgm", volume[t]
            )
        positions_index.append(
            {
                "stage": i + 1,
                "layer": rec.layer,
                "positions": rec.kept_positions.tolist(),
            }
        )
    _json_dump(positions_index, masks_dir / "positions.json")

    _json_dump(
        {
            "num_actors": len(boxes),
            "num_classes": rc.num_classes,
            "boxes": [list(b) for b in boxes],
            "scores": scores.tolist(),
        },
        out_dir / "scores.json",
    )

    if stage_masks:
        figures.save_mask_mosaic(
            stage_masks, figures_dir / "masks.png", keyframe_t=ts.keyframe_t
        )
    hp = rc.resolution // 16
    n1 = hp * hp if rc.strategy != "unified_gap" else 0
    counts = planned_token_counts(
        n_initial, n1, rc.depth, rc.prune_layers, rc.rho
    )
    figures.save_retention_curve(counts, figures_dir / "retention.png")

    print(
        f"tokens: {n_initial} -> {enc_out.tokens.count} "
        f"({enc_out.tokens.count / n_initial:.1%}); "
        f"{len(enc_out.prune_trace)} prunings; outputs in {out_dir}"
    )
    return EXIT_OK


def _cost_config(preset: ModelPreset, rho: float, resolution: int, frames: int) -> CostConfig:
    return CostConfig(
        depth=preset.depth,
        dim=preset.dim,
        heads=preset.heads,
        dec_dim=preset.dec_dim,
        dec_depth=preset.dec_depth,
        frames=frames,
        height=resolution,
        width=resolution,
        keep_rate=rho,
        prune_layers=preset.prune_layers,
    )


def cmd_flops(
    preset_name: str,
    rhos: list[float],
    resolutions: list[int],
    frames: int | None = None,
    out: str | None = None,
) -> int:
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}")
    preset = PRESETS[preset_name]
    frames = frames or preset.frames

    reports = []
    for resolution in resolutions:
        for rho in rhos:
            reports.append(flops_total(_cost_config(preset, rho, resolution, frames)))

    csv_text = sweep_csv(reports)
    print(csv_text, end="")

    if out:
        out_dir = Path(out)
        (out_dir / "figures").mkdir(parents=True, exist_ok=True)
        (out_dir / "flops.csv").write_text(csv_text, encoding="utf-8")
        _json_dump([r.to_dict() for r in reports], out_dir / "flops.json")
        figures.save_flops_curves(
            [
                (r.meta["rho"], r.meta["resolution"], r.total_gflops)
                for r in reports
            ],
            out_dir / "figures" / "gflops.png",
        )
    return EXIT_OK


def cmd_bench(
    preset_name: str,
    rhos: list[float],
    repeats: int = 5,
    frames: int | None = None,
    resolution: int | None = None,
    seed: int = 0,
    out: str | None = None,
) -> int:
    """Median wall-clock of the encoder forward per keep rate.

    The timing scope is the encoder stack only; tokenization and weights are
    reused across keep rates so the comparison isolates the pruning effect.
    """
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    preset = PRESETS[preset_name]
    frames = frames or preset.bench_frames
    resolution = resolution or preset.bench_resolution

    clip = synthetic_clip(seed, frames, resolution, resolution)
    w_embed, b_embed = embed_params(seed, preset.dim)
    ts = cube_embed(clip, w_embed, b_embed)
    ts = add_positional(ts, PositionalTable(ts.grid, preset.dim))
    enc_params = encoder_params(seed, preset.depth, preset.dim, preset.heads)
    hp = resolution // 16
    n1 = hp * hp

    # Validate the whole grid before any timing.
    for rho in rhos:
        planned_token_counts(ts.count, n1, preset.depth, preset.prune_layers, rho)

    configs = {
        rho: EncoderConfig(
            depth=preset.depth,
            dim=preset.dim,
            heads=preset.heads,
            prune_layers=preset.prune_layers,
            keep_rate=rho,
        )
        for rho in rhos
    }
    samples: dict[float, list[float]] = {rho: [] for rho in rhos}
    final_tokens: dict[float, int] = {}

    # Measurement hygiene: one BLAS thread (pool handoffs at these matrix
    # sizes add more jitter than they save), repeats interleaved across keep
    # rates so drifting machine load biases every cell equally, and the
    # cycle collector kept out of the timed sections (array temporaries
    # free by refcount regardless).
    gc_was_enabled = gc.isenabled()
    with threadpool_limits(limits=1):
        for rho in rhos:  # warmup
            final_tokens[rho] = run_encoder(ts, configs[rho], enc_params).tokens.count
        gc.collect()
        gc.disable()
        try:
            for _ in range(repeats):
                for rho in rhos:
                    t0 = time.perf_counter()
                    run_encoder(ts, configs[rho], enc_params)
                    samples[rho].append(time.perf_counter() - t0)
        finally:
            if gc_was_enabled:
                gc.enable()

    cells = [
        {
            "rho": rho,
            "median_seconds": statistics.median(samples[rho]),
            "times_seconds": samples[rho],
            "initial_tokens": ts.count,
            "final_tokens": final_tokens[rho],
        }
        for rho in rhos
    ]

    report = {
        "preset": preset_name,
        "frames": frames,
        "resolution": resolution,
        "repeats": repeats,
        "seed": seed,
        "scope": "encoder_forward, single BLAS thread",
        "low_confidence": repeats < 2,
        "cells": cells,
    }
    print(
        f"bench: preset={preset_name} seed={seed} input={frames}x{resolution}x"
        f"{resolution} repeats={repeats}"
    )
    for cell in cells:
        flag = "  (low confidence)" if report["low_confidence"] else ""
        print(
            f"rho={cell['rho']:<4} tokens {cell['initial_tokens']} -> "
            f"{cell['final_tokens']:<6} median {cell['median_seconds'] * 1e3:8.2f} ms{flag}"
        )

    if out:
        out_dir = Path(out)
        (out_dir / "figures").mkdir(parents=True, exist_ok=True)
        _json_dump(report, out_dir / "bench.json")
        figures.save_bench_curve(cells, out_dir / "figures" / "bench.png")
    return EXIT_OK


def cmd_oracle(n_seeds: int, corrupt_tie_break: bool = False, out: str | None = None) -> int:
    if n_seeds < 0:
        raise ConfigError("seed count must be >= 0")
    if n_seeds == 0:
        print("oracle: 0 seeds requested -- vacuous pass (warning: nothing checked)")
        return EXIT_OK

    previous = pruning._TIE_BREAK_LOWEST_FIRST
    if corrupt_tie_break:
        pruning._TIE_BREAK_LOWEST_FIRST = False
    try:
        result = oracles.run_oracle_suite(n_seeds)
    finally:
        pruning._TIE_BREAK_LOWEST_FIRST = previous

    print(
        f"oracle: {n_seeds} seeds x {len(result.checks)} checks, "
        f"max deviation {result.max_deviation:.3e}"
    )
    if out:
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _json_dump(
            {
                "seeds": n_seeds,
                "checks": list(result.checks),
                "max_deviation": result.max_deviation,
                "failures": [
                    {
                        "seed": f.seed,
                        "check": f.check,
                        "deviation": f.deviation,
                        "detail": f.detail,
                    }
                    for f in result.failures
                ],
            },
            out_dir / "oracle.json",
        )
    if result.failures:
        first = result.failures[0]
        print(
            f"oracle FAILED: first failure at seed {first.seed} "
            f"({first.check}), deviation {first.deviation:.3e} {first.detail}",
            file=sys.stderr,
        )
        return EXIT_ORACLE
    print("oracle: all checks passed")
    return EXIT_OK


def _parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _run_config_from_args(args) -> RunConfig:
    file_values = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            file_values = json.load(f)
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {args.config}: expected a JSON object")
        unknown = set(file_values) - {f for f in RunConfig.__dataclass_fields__}
        if unknown:
            raise ConfigError(
                f"config file {args.config}: unknown fields {sorted(unknown)}"
            )
        if "prune_layers" in file_values and file_values["prune_layers"] is not None:
            file_values["prune_layers"] = tuple(file_values["prune_layers"])

    cfg = RunConfig(**file_values)

    overrides = {}
    for flag, field_name in (
        ("preset", "preset"),
        ("rho", "rho"),
        ("wkf", "wkf"),
        ("strategy", "strategy"),
        ("seed", "seed"),
        ("boxes", "boxes"),
        ("out", "out"),
        ("resolution", "resolution"),
        ("frames", "frames"),
        ("prune_layers", "prune_layers"),
        ("video", "video"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    if "prune_layers" in overrides:
        overrides["prune_layers"] = tuple(overrides["prune_layers"])
    return replace(cfg, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prunevid",
        description="Keyframe-centric token pruning pipeline, cost model and oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="end-to-end forward with artifacts on disk")
    run_p.add_argument("--config", help="JSON file with RunConfig fields")
    run_p.add_argument("--preset", choices=sorted(PRESETS))
    run_p.add_argument("--rho", type=float, help="token keep rate in (0, 1]")
    run_p.add_argument("--wkf", type=float, help="keyframe query weight >= 1")
    run_p.add_argument("--strategy", choices=pruning.STRATEGIES)
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--boxes", help="JSON file: array of [x1,y1,x2,y2] in [0,1]")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--resolution", type=int, help="square input side in pixels")
    run_p.add_argument("--frames", type=int, help="clip length in frames")
    run_p.add_argument(
        "--prune-layers",
        dest="prune_layers",
        type=_parse_int_list,
        help="comma-separated 1-based pruning layer indices",
    )
    run_p.add_argument("--video", help="binary clip file instead of a synthetic clip")

    flops_p = sub.add_parser("flops", help="analytic GFLOPs sweep")
    flops_p.add_argument("--preset", choices=sorted(PRESETS), default="vitb")
    flops_p.add_argument(
        "--rho", type=_parse_float_list, default=[1.0, 0.9, 0.8, 0.7, 0.6],
        help="comma-separated keep rates",
    )
    flops_p.add_argument(
        "--resolution", type=_parse_int_list, default=[224],
        help="comma-separated square resolutions",
    )
    flops_p.add_argument("--frames", type=int)
    flops_p.add_argument("--out", help="directory for flops.csv / flops.json / figure")

    bench_p = sub.add_parser("bench", help="wall-clock microbenchmark")
    bench_p.add_argument("--preset", choices=sorted(PRESETS), default="tiny")
    bench_p.add_argument(
        "--rho", type=_parse_float_list, default=[1.0, 0.7, 0.5],
        help="comma-separated keep rates",
    )
    bench_p.add_argument("--repeats", type=int, default=5)
    bench_p.add_argument("--frames", type=int)
    bench_p.add_argument("--resolution", type=int)
    bench_p.add_argument("--seed", type=int, default=0)
    bench_p.add_argument("--out", help="directory for bench.json and figure")

    oracle_p = sub.add_parser("oracle", help="seeded equivalence suite")
    oracle_p.add_argument("--seeds", type=int, default=100)
    oracle_p.add_argument("--out", help="directory for oracle.json")
    oracle_p.add_argument(
        "--corrupt-tie-break",
        action="store_true",
        help="test hook: swap the selection tie-break order (negative control)",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_run_config_from_args(args))
        if args.command == "flops":
            return cmd_flops(
                args.preset, args.rho, args.resolution, args.frames, args.out
            )
        if args.command == "bench":
            return cmd_bench(
                args.preset,
                args.rho,
                repeats=args.repeats,
                frames=args.frames,
                resolution=args.resolution,
                seed=args.seed,
                out=args.out,
            )
        if args.command == "oracle":
            return cmd_oracle(args.seeds, args.corrupt_tie_break, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except PrunevidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"i/o error: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
