import numpy as np
import pytest

from prunevid.encoder import (
    EncoderConfig,
    default_schedule,
    default_stage_boundaries,
    encoder_layer,
    planned_token_counts,
    run_encoder,
)
from prunevid.errors import ConfigError, FeasibilityError
from prunevid.oracles import _draw_config, naive_encoder_forward, relative_deviation
from prunevid.pruning import PruneConfig
from prunevid.tokenizer import TokenSet, keyframe_token_ids
from prunevid.weights import encoder_params


def full_grid_tokens(grid, dim, seed=0, keyframe_t=None):
    rng = np.random.default_rng(seed)
    tp, hp, wp = grid
    tt, hh, ww = np.meshgrid(np.arange(tp), np.arange(hp), np.arange(wp), indexing="ij")
    positions = np.stack([tt.ravel(), hh.ravel(), ww.ravel()], axis=1)
    values = rng.standard_normal((tp * hp * wp, dim))
    if keyframe_t is None:
        keyframe_t = tp // 2
    return TokenSet(values, positions, grid, keyframe_t)


class TestDefaultSchedule:
    def test_depth_12(self):
        assert default_schedule(12) == [4, 7, 10]

    def test_depth_24(self):
        assert default_schedule(24) == [7, 13, 19]

    def test_depth_8_fallback(self):
        assert default_schedule(8) == [3, 5, 7]

    def test_too_shallow(self):
        with pytest.raises(ConfigError):
            default_schedule(3)

    def test_clipped_to_depth(self):
        assert all(p <= 5 for p in default_schedule(5))


class TestStageBoundaries:
    def test_depth_12(self):
        assert default_stage_boundaries(12, [4, 7, 10]) == [3, 6, 9, 12]

    def test_depth_24(self):
        assert default_stage_boundaries(24, [7, 13, 19]) == [6, 12, 18, 24]


class TestEncoderLayer:
    def test_keep_all_identical_to_unscheduled(self):
        ts = full_grid_tokens((2, 2, 2), 8)
        params = encoder_params(0, 1, 8, 2)[0]
        plain, _, _ = encoder_layer(ts, params, prune=None)
        scheduled, _, record = encoder_layer(ts, params, PruneConfig(1.0), layer=1)
        assert record is not None
        assert record.tokens_before == record.tokens_after == 8
        assert np.array_equal(plain.values, scheduled.values)
        assert np.array_equal(plain.positions, scheduled.positions)

    def test_half_rate_keeps_keyframe_plus_top1(self):
        # N=6 with a 2-token keyframe at rho=0.5 keeps floor(3)=3 tokens.
        ts = full_grid_tokens((3, 1, 2), 8, keyframe_t=1)
        params = encoder_params(1, 1, 8, 2)[0]
        out, _, record = encoder_layer(ts, params, PruneConfig(0.5), layer=1)
        assert out.count == 3
        assert (out.positions[:, 0] == 1).sum() == 2
        assert record.kept_ids.size == 3

    def test_infeasible_raises_with_details(self):
        ts = full_grid_tokens((2, 2, 2), 8)  # N=8, N1=4
        params = encoder_params(0, 1, 8, 2)[0]
        with pytest.raises(FeasibilityError) as exc:
            encoder_layer(ts, params, PruneConfig(0.5), layer=1)
        msg = str(exc.value)
        assert "8" in msg and "4" in msg and "0.5" in msg


class TestRunEncoder:
    def test_vitb_geometry_counts(self):
        # Full token geometry at reduced width: 1568 -> 1097 -> 767 -> 536.
        ts = full_grid_tokens((8, 14, 14), 8)
        cfg = EncoderConfig(depth=12, dim=8, heads=2, prune_layers=(4, 7, 10), keep_rate=0.7)
        out = run_encoder(ts, cfg, encoder_params(0, 12, 8, 2))
        assert [r.tokens_after for r in out.prune_trace] == [1097, 767, 536]
        assert out.tokens.count == 536
        assert out.tokens.count / ts.count == pytest.approx(0.342, abs=0.002)

    def test_keep_all_any_schedule_is_identity(self):
        ts = full_grid_tokens((4, 2, 2), 8)
        params = encoder_params(2, 4, 8, 2)
        scheduled = EncoderConfig(depth=4, dim=8, heads=2, prune_layers=(2, 3), keep_rate=1.0)
        free = EncoderConfig(depth=4, dim=8, heads=2)
        a = run_encoder(ts, scheduled, params)
        b = run_encoder(ts, free, params)
        assert np.array_equal(a.tokens.values, b.tokens.values)
        assert a.tokens.count == ts.count

    def test_deep_schedule_trace(self):
        # 24 layers pruning at 7/13/19, checked through the trace.
        ts = full_grid_tokens((4, 4, 4), 8)
        cfg = EncoderConfig(depth=24, dim=8, heads=2, prune_layers=(7, 13, 19), keep_rate=0.7)
        out = run_encoder(ts, cfg, encoder_params(3, 24, 8, 2))
        assert [r.layer for r in out.prune_trace] == [7, 13, 19]
        assert [r.tokens_after for r in out.prune_trace] == [44, 30, 21]

    def test_taps_have_keyframe_rows(self):
        ts = full_grid_tokens((8, 2, 2), 8)
        cfg = EncoderConfig(depth=4, dim=8, heads=2, prune_layers=(2, 3), keep_rate=0.7)
        out = run_encoder(ts, cfg, encoder_params(4, 4, 8, 2))
        assert cfg.stage_boundaries == (1, 2, 4)
        assert len(out.keyframe_taps) == 3
        for tap in out.keyframe_taps:
            assert tap.shape == (4, 8)

    def test_trace_positions_match_token_sets(self):
        ts = full_grid_tokens((8, 2, 2), 8)
        cfg = EncoderConfig(depth=4, dim=8, heads=2, prune_layers=(2, 4), keep_rate=0.7)
        out = run_encoder(ts, cfg, encoder_params(5, 4, 8, 2))
        assert np.array_equal(out.prune_trace[-1].kept_positions, out.tokens.positions)
        counts = planned_token_counts(32, 4, 4, (2, 4), 0.7)
        assert [c[1] for c in counts] == [32, 22, 22, 15]

    def test_monotone_token_count(self):
        ts = full_grid_tokens((8, 2, 2), 8)
        cfg = EncoderConfig(depth=6, dim=8, heads=2, prune_layers=(2, 4, 6), keep_rate=0.9)
        out = run_encoder(ts, cfg, encoder_params(6, 6, 8, 2))
        befores = [r.tokens_before for r in out.prune_trace]
        afters = [r.tokens_after for r in out.prune_trace]
        for b, a in zip(befores, afters):
            assert a <= b
        assert all(afters[i] >= befores[i + 1] for i in range(len(afters) - 1))

    def test_unified_strategy_can_drop_keyframe(self):
        ts = full_grid_tokens((2, 3, 3), 8)  # N=18, N1=9
        cfg = EncoderConfig(
            depth=3, dim=8, heads=2, prune_layers=(2,), keep_rate=0.5,
            strategy="unified_gap",
        )
        out = run_encoder(ts, cfg, encoder_params(7, 3, 8, 2))
        assert out.tokens.count == 9
        # Unified ranking does not protect the keyframe block.
        assert keyframe_token_ids(out.tokens).size <= 9

    def test_random_strategy_obeys_count_law(self):
        ts = full_grid_tokens((8, 2, 2), 8)
        cfg = EncoderConfig(
            depth=4, dim=8, heads=2, prune_layers=(2, 3), keep_rate=0.7,
            strategy="random", prune_seed=5,
        )
        out = run_encoder(ts, cfg, encoder_params(8, 4, 8, 2))
        assert [r.tokens_after for r in out.prune_trace] == [22, 15]
        repeat = run_encoder(ts, cfg, encoder_params(8, 4, 8, 2))
        assert np.array_equal(out.tokens.positions, repeat.tokens.positions)

    def test_param_count_mismatch(self):
        ts = full_grid_tokens((2, 2, 2), 8)
        cfg = EncoderConfig(depth=3, dim=8, heads=2)
        with pytest.raises(ConfigError):
            run_encoder(ts, cfg, encoder_params(0, 2, 8, 2))


class TestOracleEquivalence:
    def test_small_seeds_match_naive_rebuild(self):
        for seed in range(5):
            ts, cfg, params = _draw_config(seed)
            out = run_encoder(ts, cfg, params)
            ref_values, ref_positions, ref_trace = naive_encoder_forward(ts, cfg, params)
            assert relative_deviation(out.tokens.values, ref_values) <= 1e-9
            assert np.array_equal(out.tokens.positions, ref_positions)
            assert [r.layer for r in out.prune_trace] == [t["layer"] for t in ref_trace]
            for rec, ref in zip(out.prune_trace, ref_trace):
                assert rec.kept_ids.tolist() == ref["kept_ids"]


class TestPlannedCounts:
    def test_matches_floor_recursion(self):
        counts = planned_token_counts(1568, 196, 12, (4, 7, 10), 0.7)
        assert counts[3] == (1568, 1097)
        assert counts[6] == (1097, 767)
        assert counts[9] == (767, 536)
        assert counts[-1] == (536, 536)

    def test_infeasible(self):
        with pytest.raises(FeasibilityError):
            planned_token_counts(8, 4, 4, (2, 3), 0.5)


class TestEncoderConfig:
    def test_prune_layers_strictly_increasing(self):
        with pytest.raises(ConfigError):
            EncoderConfig(depth=6, dim=8, heads=2, prune_layers=(3, 3))

    def test_prune_layers_in_range(self):
        with pytest.raises(ConfigError):
            EncoderConfig(depth=6, dim=8, heads=2, prune_layers=(3, 9))

    def test_head_divisibility(self):
        with pytest.raises(ConfigError):
            EncoderConfig(depth=6, dim=9, heads=2)
