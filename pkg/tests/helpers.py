"""Shared randomized property checks.

Each check takes a numpy Generator, builds one random instance and asserts
the property on it. The hypothesis suite drives these with drawn seeds and
the acceptance suite drives them with plain seeded loops, so the property
logic lives in exactly one place.
"""

from __future__ import annotations

import math

import numpy as np

from prunevid.encoder import EncoderConfig, run_encoder
from prunevid.numerics import softmax_rows
from prunevid.oracles import _draw_config
from prunevid.pruning import (
    ImportanceScores,
    importance_scores,
    select_tokens,
    weighted_column_means,
)
from prunevid.refine import (
    DecoderConfig,
    FeatureGrid,
    RoiSpec,
    gather_from_grid,
    roi_align_3d,
    run_decoder,
    scatter_to_grid,
)
from prunevid.tokenizer import TokenSet, keyframe_token_ids
from prunevid.weights import decoder_params


def random_attention(rng: np.random.Generator, n: int) -> np.ndarray:
    logits = rng.standard_normal((n, n)) * rng.uniform(0.5, 3.0)
    return softmax_rows(logits)


def random_sparse_tokens(
    rng: np.random.Generator, dim: int = 8, min_tokens: int = 1
) -> TokenSet:
    grids = [(2, 2, 2), (2, 3, 3), (4, 2, 2), (4, 3, 3), (8, 2, 2)]
    grid = grids[rng.integers(len(grids))]
    tp, hp, wp = grid
    total = tp * hp * wp
    m = int(rng.integers(min_tokens, total + 1))
    chosen = np.sort(rng.choice(np.arange(total), size=m, replace=False))
    tt, hh, ww = np.meshgrid(np.arange(tp), np.arange(hp), np.arange(wp), indexing="ij")
    all_pos = np.stack([tt.ravel(), hh.ravel(), ww.ravel()], axis=1)
    return TokenSet(
        rng.standard_normal((m, dim)), all_pos[chosen], grid, keyframe_t=tp // 2
    )


def check_keyframe_preservation(rng: np.random.Generator) -> None:
    """Every pruning keeps exactly the keyframe token block, always."""
    seed = int(rng.integers(0, 2**31))
    ts, cfg, params = _draw_config(seed)
    n1 = keyframe_token_ids(ts).size
    out = run_encoder(ts, cfg, params)
    assert out.prune_trace, "drawn config must prune at least once"
    for rec in out.prune_trace:
        kept_keyframe = (rec.kept_positions[:, 0] == ts.keyframe_t).sum()
        assert kept_keyframe == n1
    for tap in out.keyframe_taps:
        assert tap.shape[0] == n1


def check_keep_all_identity(rng: np.random.Generator) -> None:
    """keep rate 1.0 with a schedule is bitwise identical to no schedule."""
    seed = int(rng.integers(0, 2**31))
    ts, cfg, params = _draw_config(seed)
    scheduled = EncoderConfig(
        depth=cfg.depth,
        dim=cfg.dim,
        heads=cfg.heads,
        prune_layers=cfg.prune_layers,
        keep_rate=1.0,
    )
    unscheduled = EncoderConfig(
        depth=cfg.depth, dim=cfg.dim, heads=cfg.heads, prune_layers=(), keep_rate=1.0
    )
    a = run_encoder(ts, scheduled, params)
    b = run_encoder(ts, unscheduled, params)
    assert np.array_equal(a.tokens.values, b.tokens.values)
    assert np.array_equal(a.tokens.positions, b.tokens.positions)
    for rec in a.prune_trace:
        assert rec.tokens_after == rec.tokens_before


def check_count_law(rng: np.random.Generator) -> None:
    """After each pruning, M_new = floor(M_old * keep_rate), monotonically."""
    seed = int(rng.integers(0, 2**31))
    ts, cfg, params = _draw_config(seed)
    out = run_encoder(ts, cfg, params)
    m = ts.count
    for rec in out.prune_trace:
        assert rec.tokens_before <= m
        assert rec.tokens_after == int(math.floor(rec.tokens_before * cfg.keep_rate))
        assert rec.tokens_after <= rec.tokens_before
        m = rec.tokens_after
    assert out.tokens.count == m


def check_softmax_row_stochastic(rng: np.random.Generator) -> None:
    n, m = int(rng.integers(1, 12)), int(rng.integers(1, 12))
    scale = float(rng.choice([1.0, 10.0, 1000.0]))
    mat = rng.standard_normal((n, m)) * scale
    out = softmax_rows(mat)
    assert (out >= 0).all()
    assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-9


def check_weighted_mass(rng: np.random.Generator) -> None:
    """Summed over all columns, weighted column means equal (w*N1 + N2)/N."""
    n = int(rng.integers(2, 16))
    n1 = int(rng.integers(1, n))
    attn = random_attention(rng, n)
    kf = np.sort(rng.choice(np.arange(n), size=n1, replace=False))
    w = float(rng.uniform(1.0, 8.0))
    scores = weighted_column_means(attn, kf, w)
    expected = (w * n1 + (n - n1)) / n
    assert abs(scores.sum() - expected) <= 1e-9


def check_gap_degenerate(rng: np.random.Generator) -> None:
    """Weight 1 reduces the importance scores to the plain column mean."""
    n = int(rng.integers(3, 16))
    n1 = int(rng.integers(1, n - 1))
    attn = random_attention(rng, n)
    kf = np.sort(rng.choice(np.arange(n), size=n1, replace=False))
    got = importance_scores(attn, kf, 1.0)
    plain = attn.mean(axis=0)
    assert np.abs(got.values - plain[got.ids]).max() <= 1e-12


def check_tie_break_stability(rng: np.random.Generator) -> None:
    """Selection is deterministic, permutation-stable and prefers the lower
    index among exact ties."""
    n2 = int(rng.integers(3, 10))
    pool = np.array([0.125, 0.25, 0.5])
    ids = np.arange(2, 2 + n2)
    values = rng.choice(pool, size=n2)
    n = n2 + 2
    n1 = 2
    keep_rate = float(rng.uniform((n1 + 1.01) / n, 1.0))
    scores = ImportanceScores(ids, values)
    first = select_tokens(scores, n, n1, keep_rate)
    again = select_tokens(scores, n, n1, keep_rate)
    assert np.array_equal(first, again)

    perm = rng.permutation(n2)
    shuffled = ImportanceScores(ids[perm], values[perm])
    assert np.array_equal(select_tokens(shuffled, n, n1, keep_rate), first)

    # Among exact ties, the survivor set is the lexicographically smallest.
    k = first.size
    order = sorted(zip(ids, values), key=lambda t: (-t[1], t[0]))
    assert sorted(i for i, _ in order[:k]) == first.tolist()


def check_scatter_roundtrip(rng: np.random.Generator) -> None:
    ts = random_sparse_tokens(rng)
    grid = scatter_to_grid(ts)
    assert np.array_equal(gather_from_grid(grid, ts.positions), ts.values)
    assert int(grid.occupancy.sum()) == ts.count
    assert not grid.values[~grid.occupancy].any()


def check_roialign_constant_and_linear(rng: np.random.Generator) -> None:
    tp, hp, wp, d = 2, int(rng.integers(2, 6)), int(rng.integers(2, 6)), 4
    occupancy = np.ones((tp, hp, wp), dtype=bool)
    x1, y1 = rng.uniform(0.0, 0.6, size=2)
    x2 = rng.uniform(x1 + 0.2, 1.0)
    y2 = rng.uniform(y1 + 0.2, 1.0)
    roi = RoiSpec(
        (x1, y1, x2, y2),
        extend_x=float(rng.choice([0.0, 0.4])),
        extend_y=float(rng.choice([0.0, 0.2])),
        bins=int(rng.integers(1, 4)),
        samples=int(rng.integers(1, 3)),
    )

    c = float(rng.uniform(-3, 3))
    constant = FeatureGrid(np.full((tp, hp, wp, d), c), occupancy)
    assert np.abs(roi_align_3d(constant, roi) - c).max() <= 1e-12

    g1 = rng.standard_normal((tp, hp, wp, d))
    g2 = rng.standard_normal((tp, hp, wp, d))
    a = float(rng.uniform(-2, 2))
    lhs = roi_align_3d(FeatureGrid(a * g1 + g2, occupancy), roi)
    rhs = a * roi_align_3d(FeatureGrid(g1, occupancy), roi) + roi_align_3d(
        FeatureGrid(g2, occupancy), roi
    )
    assert np.abs(lhs - rhs).max() <= 1e-12


def check_decoder_context_permutation(rng: np.random.Generator) -> None:
    d_in, d_dec = 8, 8
    n = int(rng.integers(1, 4))
    ctx = random_sparse_tokens(rng, dim=d_in)
    cfg = DecoderConfig(dim=d_dec, depth=2, heads=2, n_queries=n)
    params = decoder_params(int(rng.integers(0, 2**31)), d_in, d_dec, 2, 2)
    roi = rng.standard_normal((n, d_in))
    base = run_decoder(roi, ctx, cfg, params)

    perm = rng.permutation(ctx.count)
    shuffled = TokenSet.__new__(TokenSet)
    object.__setattr__(shuffled, "values", ctx.values[perm])
    object.__setattr__(shuffled, "positions", ctx.positions[perm])
    object.__setattr__(shuffled, "grid", ctx.grid)
    object.__setattr__(shuffled, "keyframe_t", ctx.keyframe_t)
    permuted = run_decoder(roi, shuffled, cfg, params)
    scale = max(1.0, np.abs(base).max())
    assert np.abs(permuted - base).max() / scale <= 1e-9


PROPERTY_CHECKS = (
    ("keyframe_preservation", check_keyframe_preservation),
    ("keep_all_identity", check_keep_all_identity),
    ("count_law", check_count_law),
    ("softmax_row_stochastic", check_softmax_row_stochastic),
    ("weighted_mass", check_weighted_mass),
    ("gap_degenerate", check_gap_degenerate),
    ("tie_break_stability", check_tie_break_stability),
    ("scatter_roundtrip", check_scatter_roundtrip),
    ("roialign_constant_linear", check_roialign_constant_and_linear),
    ("decoder_context_permutation", check_decoder_context_permutation),
)
