import numpy as np
import pytest

from prunevid.encoder import EncoderConfig, run_encoder
from prunevid.errors import ConfigError, ContractError
from prunevid.numerics import sigmoid
from prunevid.oracles import naive_bilinear
from prunevid.refine import (
    DecoderConfig,
    FeatureGrid,
    RoiSpec,
    classify,
    extend_box,
    gather_from_grid,
    roi_align_3d,
    run_decoder,
    scatter_to_grid,
)
from prunevid.tokenizer import TokenSet
from prunevid.weights import decoder_params, encoder_params, head_params


def full_grid_tokens(grid, dim, seed=0):
    rng = np.random.default_rng(seed)
    tp, hp, wp = grid
    tt, hh, ww = np.meshgrid(np.arange(tp), np.arange(hp), np.arange(wp), indexing="ij")
    positions = np.stack([tt.ravel(), hh.ravel(), ww.ravel()], axis=1)
    return TokenSet(rng.standard_normal((tp * hp * wp, dim)), positions, grid, tp // 2)


def sparse_tokens(grid, dim, keep_ids, seed=0):
    full = full_grid_tokens(grid, dim, seed)
    return full.take(np.asarray(keep_ids, dtype=np.int64))


class TestScatter:
    def test_full_round_trip(self):
        ts = full_grid_tokens((2, 2, 2), 4)
        grid = scatter_to_grid(ts)
        assert grid.occupancy.all()
        assert np.array_equal(gather_from_grid(grid, ts.positions), ts.values)

    def test_single_token(self):
        ts = TokenSet(np.full((1, 4), 2.5), np.array([[0, 0, 0]]), (2, 2, 2), 0)
        grid = scatter_to_grid(ts)
        assert grid.values[0, 0, 0, 0] == 2.5
        assert int(grid.occupancy.sum()) == 1
        assert np.count_nonzero(grid.values) == 4

    def test_pruned_round_trip_and_conservation(self):
        ts = sparse_tokens((4, 2, 2), 4, [0, 2, 5, 8, 9, 13], seed=0)
        grid = scatter_to_grid(ts)
        assert np.array_equal(gather_from_grid(grid, ts.positions), ts.values)
        assert grid.values.sum() == pytest.approx(ts.values.sum(), rel=1e-12)
        assert int(grid.occupancy.sum()) == ts.count
        assert not grid.values[~grid.occupancy].any()

    def test_rejects_duplicates(self):
        ts = TokenSet(np.zeros((1, 4)), np.array([[0, 0, 0]]), (2, 2, 2), 0)
        bad = TokenSet.__new__(TokenSet)
        object.__setattr__(bad, "values", np.zeros((2, 4)))
        object.__setattr__(bad, "positions", np.array([[0, 0, 0], [0, 0, 0]]))
        object.__setattr__(bad, "grid", (2, 2, 2))
        object.__setattr__(bad, "keyframe_t", 0)
        with pytest.raises(ContractError):
            scatter_to_grid(bad)
        scatter_to_grid(ts)  # the valid one still works


class TestExtendBox:
    def test_identity(self):
        box = (0.3, 0.4, 0.5, 0.6)
        assert extend_box(box, 0.0, 0.0) == pytest.approx(box, abs=1e-15)

    def test_reference_ratios(self):
        got = extend_box((0.3, 0.4, 0.5, 0.6), 0.4, 0.2)
        assert got == pytest.approx((0.26, 0.38, 0.54, 0.62), abs=1e-12)
        area_ratio = ((got[2] - got[0]) * (got[3] - got[1])) / (0.2 * 0.2)
        assert area_ratio == pytest.approx(1.68, abs=1e-12)

    def test_clamped_at_border(self):
        got = extend_box((0.0, 0.0, 0.4, 0.3), 2.0, 2.0)
        x1, y1, x2, y2 = got
        assert 0.0 <= x1 < x2 <= 1.0
        assert 0.0 <= y1 < y2 <= 1.0

    def test_degenerate_box(self):
        with pytest.raises(ContractError):
            extend_box((0.5, 0.2, 0.5, 0.8), 0.1, 0.1)


class TestRoiAlign:
    def test_constant_grid(self):
        grid = FeatureGrid(np.full((3, 4, 4, 5), 1.25), np.ones((3, 4, 4), dtype=bool))
        out = roi_align_3d(grid, RoiSpec((0.1, 0.2, 0.8, 0.9), 0.4, 0.2))
        assert np.allclose(out, 1.25, atol=1e-12)

    def test_single_cell_box(self):
        rng = np.random.default_rng(0)
        values = rng.standard_normal((1, 3, 3, 4))
        grid = FeatureGrid(values, np.ones((1, 3, 3), dtype=bool))
        third = 1.0 / 3.0
        out = roi_align_3d(grid, RoiSpec((third, third, 2 * third, 2 * third), bins=1, samples=1))
        assert np.allclose(out, values[0, 1, 1], atol=1e-12)

    def test_whole_frame_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        values = rng.standard_normal((1, 4, 5, 3))
        grid = FeatureGrid(values, np.ones((1, 4, 5), dtype=bool))
        out = roi_align_3d(grid, RoiSpec((0.0, 0.0, 1.0, 1.0), bins=1, samples=1))
        want = naive_bilinear(values[0], 4 / 2.0, 5 / 2.0)
        assert np.allclose(out, want, atol=1e-12)

    def test_temporal_average(self):
        values = np.zeros((2, 2, 2, 1))
        values[0] = 1.0
        values[1] = 3.0
        grid = FeatureGrid(values, np.ones((2, 2, 2), dtype=bool))
        out = roi_align_3d(grid, RoiSpec((0.25, 0.25, 0.75, 0.75), bins=1, samples=1))
        assert out[0] == pytest.approx(2.0, abs=1e-12)


class TestDecoder:
    def test_empty_context(self):
        cfg = DecoderConfig(dim=8, depth=2, heads=2, n_queries=3)
        params = decoder_params(0, 8, 8, 2, 2)
        ctx = TokenSet(np.zeros((0, 8)), np.zeros((0, 3), dtype=np.int64), (2, 2, 2), 0)
        roi = np.random.default_rng(0).standard_normal((3, 8))
        out = run_decoder(roi, ctx, cfg, params)
        assert out.shape == (3, 8)
        assert np.isfinite(out).all()

    def test_reference_shape(self):
        # 100 queries against 536 surviving tokens at decoder width 384.
        rng = np.random.default_rng(2)
        cfg = DecoderConfig(dim=384, depth=6, heads=6, n_queries=100)
        params = decoder_params(0, 768, 384, 6, 6)
        ctx = TokenSet.__new__(TokenSet)
        tt, hh, ww = np.meshgrid(np.arange(8), np.arange(14), np.arange(14), indexing="ij")
        all_pos = np.stack([tt.ravel(), hh.ravel(), ww.ravel()], axis=1)
        keep = np.sort(rng.choice(np.arange(1568), size=536, replace=False))
        object.__setattr__(ctx, "values", rng.standard_normal((536, 768)))
        object.__setattr__(ctx, "positions", all_pos[keep])
        object.__setattr__(ctx, "grid", (8, 14, 14))
        object.__setattr__(ctx, "keyframe_t", 4)
        out = run_decoder(rng.standard_normal((100, 768)), ctx, cfg, params)
        assert out.shape == (100, 384)

    def test_width_mismatch(self):
        cfg = DecoderConfig(dim=8, depth=1, heads=2, n_queries=2)
        params = decoder_params(0, 8, 8, 1, 2)
        ctx = TokenSet(np.zeros((0, 8)), np.zeros((0, 3), dtype=np.int64), (2, 2, 2), 0)
        with pytest.raises(ConfigError):
            run_decoder(np.zeros((2, 16)), ctx, cfg, params)


class TestClassify:
    def test_zero_weights_give_half(self):
        out = classify(np.ones((3, 4)), np.zeros((4, 5)), np.zeros(5))
        assert np.array_equal(out, np.full((3, 5), 0.5))

    def test_large_logit_saturates(self):
        out = classify(np.ones((1, 1)), np.zeros((1, 1)), np.array([100.0]))
        assert out[0, 0] == pytest.approx(1.0, abs=1e-9)

    def test_matches_affine_sigmoid_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 6))
        w = rng.standard_normal((6, 5))
        b = rng.standard_normal(5)
        got = classify(x, w, b)
        want = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        assert np.abs(got - want).max() <= 1e-12
        assert ((got > 0) & (got < 1)).all()

    def test_sigmoid_stable_for_large_negatives(self):
        out = sigmoid(np.array([-1000.0]))
        assert out[0] == 0.0 or out[0] > 0  # no overflow warnings / nan
        assert np.isfinite(out).all()


class TestKeepAllPathwayEquality:
    def test_scores_identical_with_and_without_pruning_machinery(self):
        ts = full_grid_tokens((4, 2, 2), 8, seed=4)
        params = encoder_params(9, 4, 8, 2)
        scheduled = EncoderConfig(depth=4, dim=8, heads=2, prune_layers=(2, 3), keep_rate=1.0)
        free = EncoderConfig(depth=4, dim=8, heads=2)
        dec_cfg = DecoderConfig(dim=8, depth=2, heads=2, n_queries=1)
        dec_params = decoder_params(9, 8, 8, 2, 2)
        head_w, head_b = head_params(9, 8, 6)
        roi = RoiSpec((0.2, 0.2, 0.8, 0.8), 0.4, 0.2)

        outputs = []
        for cfg in (scheduled, free):
            enc_out = run_encoder(ts, cfg, params)
            grid = scatter_to_grid(enc_out.tokens)
            feats = roi_align_3d(grid, roi)[None, :]
            refined = run_decoder(feats, enc_out.tokens, dec_cfg, dec_params)
            outputs.append(classify(refined, head_w, head_b))
        assert np.array_equal(outputs[0], outputs[1])
