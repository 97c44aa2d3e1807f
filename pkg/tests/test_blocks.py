"""Block-level tests: self-proliferation, attention, and the bottleneck."""

import numpy as np
import pytest

from spanet import tensor as T
from spanet.blocks import (
    build_attention_block,
    build_sp_block,
    build_spa_block,
    primary_channels,
)
from spanet.errors import ConfigError, DimensionError

from fdcheck import check_gradients

GRAD_TOL = 1e-4


class TestSPBlock:
    def test_channel_split_and_weight_count(self):
        blk = build_sp_block(4, 16, 0.5, rng=np.random.default_rng(0))
        assert blk.c_primary == 8 and blk.c_cheap == 8
        n_weights = sum(t.data.size for _, t in blk.parameters())
        assert n_weights == 4 * 8 + 8 * 9  # 104

        x = T.constant(np.random.default_rng(1).normal(size=(2, 4, 5, 5)).astype(np.float32))
        out = blk.forward(x)
        assert out.shape == (2, 16, 5, 5)

    def test_zero_input_zero_output(self):
        blk = build_sp_block(3, 8, 0.5, rng=np.random.default_rng(2))
        out = blk.forward(T.constant(np.zeros((1, 3, 4, 4), dtype=np.float32)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_dirac_cheap_duplicates_primary(self):
        blk = build_sp_block(3, 8, 0.5, rng=np.random.default_rng(3))
        blk.cheap.data[:] = 0.0
        blk.cheap.data[:, 1, 1] = 1.0
        x = T.constant(np.random.default_rng(4).normal(size=(1, 3, 6, 6)).astype(np.float32))
        out = blk.forward(x).data
        p = blk.c_primary
        np.testing.assert_allclose(out[:, p : 2 * p], out[:, :p], atol=1e-6)

    def test_spatial_size_preserved(self):
        blk = build_sp_block(2, 6, 0.5, rng=np.random.default_rng(5))
        out = blk.forward(T.constant(np.zeros((1, 2, 7, 9), dtype=np.float32)))
        assert out.shape == (1, 6, 7, 9)

    def test_channel_mismatch(self):
        blk = build_sp_block(3, 8, 0.5, rng=np.random.default_rng(6))
        with pytest.raises(DimensionError):
            blk.forward(T.constant(np.zeros((1, 4, 5, 5))))

    def test_high_ratio_reuses_primary_maps(self):
        blk = build_sp_block(8, 16, 0.83, rng=np.random.default_rng(7))
        assert blk.c_primary == max(1, round(0.17 * 16))
        assert blk.cheap_sources.max() < blk.c_primary

    def test_degenerate_ratio_rejected(self):
        with pytest.raises(ConfigError):
            primary_channels(16, 0.95)
        with pytest.raises(ConfigError):
            primary_channels(16, 1.0)

    def test_param_count_strictly_decreasing_in_ratio(self):
        counts = []
        for r in [0.06, 0.13, 0.25, 0.50, 0.63, 0.83]:
            blk = build_sp_block(64, 128, r, rng=np.random.default_rng(8))
            counts.append(sum(t.data.size for _, t in blk.parameters()))
        assert all(a > b for a, b in zip(counts, counts[1:])), counts

    def test_gradients(self):
        rng = np.random.default_rng(9)
        blk = build_sp_block(3, 6, 0.5, rng=rng, dtype=np.float64)
        x = rng.normal(size=(2, 3, 4, 4))
        proj = rng.normal(size=(2, 6, 4, 4))

        def build(ts):
            blk.primary, blk.cheap = ts[0], ts[1]
            return T.sum_all(T.mul(blk.forward(ts[2]), ts[3]))

        err = check_gradients(build, [blk.primary.data, blk.cheap.data, x, proj])
        assert err < GRAD_TOL


class TestAttentionBlock:
    def test_w2_zero_is_exact_identity(self):
        blk = build_attention_block(6, reduction=2, rng=np.random.default_rng(10))
        blk.w2.data[:] = 0.0
        x = np.random.default_rng(11).normal(size=(2, 6, 5, 5)).astype(np.float32)
        out = blk.forward(T.constant(x))
        assert np.array_equal(out.data, x)

    def test_single_position_degenerate(self):
        blk = build_attention_block(4, reduction=2, rng=np.random.default_rng(12))
        x = np.random.default_rng(13).normal(size=(3, 4, 1, 1)).astype(np.float64)
        for p in blk.parameters():
            p[1].data = p[1].data.astype(np.float64)
        out = blk.forward(T.constant(x)).data

        # manual evaluation: softmax weight over one position is 1, so the
        # context is that position's channel vector
        ctx = x[:, :, 0, 0]
        t = ctx @ blk.w1.data
        mu = t.mean(axis=1, keepdims=True)
        var = ((t - mu) ** 2).mean(axis=1, keepdims=True)
        tn = (t - mu) / np.sqrt(var + blk.ln.eps)
        t2 = np.maximum(tn * blk.ln.gain.data + blk.ln.bias.data, 0) @ blk.w2.data
        np.testing.assert_allclose(out[:, :, 0, 0], ctx + t2, rtol=1e-6)

    def test_uniform_logits_give_spatial_mean_context(self):
        blk = build_attention_block(5, reduction=2, rng=np.random.default_rng(14))
        blk.wg.data[:] = 0.0
        x = np.random.default_rng(15).normal(size=(2, 5, 4, 6))
        logits = T.reshape(T.conv2d(T.constant(x), blk.wg), (2, 24))
        ctx = T.position_weighted_sum(T.constant(x), T.softmax(logits)).data
        np.testing.assert_allclose(ctx, x.mean(axis=(2, 3)), atol=1e-6)

    def test_pooling_weights_sum_to_one(self):
        blk = build_attention_block(3, rng=np.random.default_rng(16))
        x = T.constant(np.random.default_rng(17).normal(size=(4, 3, 7, 7)).astype(np.float32))
        w = blk.pooling_weights(x)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)
        assert (w > 0).all()

    def test_channel_mismatch(self):
        blk = build_attention_block(3, rng=np.random.default_rng(18))
        with pytest.raises(DimensionError):
            blk.forward(T.constant(np.zeros((1, 4, 3, 3))))

    def test_gradients(self):
        rng = np.random.default_rng(19)
        blk = build_attention_block(4, reduction=2, rng=rng, dtype=np.float64)
        x = rng.normal(size=(2, 4, 3, 3))
        proj = rng.normal(size=(2, 4, 3, 3))
        names = [n for n, _ in blk.parameters()]
        arrays = [t.data for _, t in blk.parameters()] + [x, proj]

        def build(ts):
            blk.wg, blk.w1, blk.w2 = ts[0], ts[1], ts[2]
            blk.ln.gain, blk.ln.bias = ts[3], ts[4]
            return T.sum_all(T.mul(blk.forward(ts[5]), ts[6]))

        assert names == ["wg", "w1", "w2", "ln.gain", "ln.bias"]
        err = check_gradients(build, arrays)
        assert err < GRAD_TOL


class TestSPABlock:
    def test_residual_passthrough_with_zeroed_convs(self):
        blk = build_spa_block(6, 6, 12, stride=1, rng=np.random.default_rng(20))
        assert blk.use_residual
        blk.expand.primary.data[:] = 0.0
        blk.expand.cheap.data[:] = 0.0
        blk.compress.primary.data[:] = 0.0
        blk.compress.cheap.data[:] = 0.0
        x = np.random.default_rng(21).normal(size=(2, 6, 5, 5)).astype(np.float32)
        out = blk.forward(T.constant(x))
        np.testing.assert_array_equal(out.data, x)

    def test_stride2_halves_resolution(self):
        blk = build_spa_block(4, 8, 16, stride=2, rng=np.random.default_rng(22))
        assert not blk.use_residual
        out = blk.forward(T.constant(np.zeros((1, 4, 32, 32), dtype=np.float32)))
        assert out.shape == (1, 8, 16, 16)

    def test_residual_rule(self):
        assert build_spa_block(4, 4, 8, 1, rng=np.random.default_rng(23)).use_residual
        assert not build_spa_block(4, 8, 8, 1, rng=np.random.default_rng(24)).use_residual
        assert not build_spa_block(4, 4, 8, 2, rng=np.random.default_rng(25)).use_residual

    def test_residual_block_preserves_shape(self):
        blk = build_spa_block(5, 5, 10, 1, rng=np.random.default_rng(26))
        x = np.random.default_rng(27).normal(size=(3, 5, 9, 7)).astype(np.float32)
        assert blk.forward(T.constant(x)).shape == x.shape

    def test_full_block_gradients(self):
        rng = np.random.default_rng(28)
        blk = build_spa_block(3, 3, 6, stride=1, reduction=2, rng=rng, dtype=np.float64)
        params = blk.parameters()
        x = rng.normal(size=(2, 3, 4, 4))
        proj = rng.normal(size=(2, 3, 4, 4))
        arrays = [t.data for _, t in params] + [x, proj]

        # rebind the block's parameter tensors to the check's tensors
        def build(ts):
            (blk.expand.primary, blk.expand.cheap,
             blk.ln1.gain, blk.ln1.bias,
             blk.ln2.gain, blk.ln2.bias,
             blk.compress.primary, blk.compress.cheap,
             blk.ln3.gain, blk.ln3.bias,
             blk.dw,
             blk.attention.wg, blk.attention.w1, blk.attention.w2,
             blk.attention.ln.gain, blk.attention.ln.bias) = ts[: len(params)]
            out = blk.forward(ts[len(params)])
            return T.sum_all(T.mul(out, ts[len(params) + 1]))

        names = [n for n, _ in params]
        assert names == [
            "expand.primary", "expand.cheap",
            "ln1.gain", "ln1.bias",
            "ln2.gain", "ln2.bias",
            "compress.primary", "compress.cheap",
            "ln3.gain", "ln3.bias",
            "dw",
            "attention.wg", "attention.w1", "attention.w2",
            "attention.ln.gain", "attention.ln.bias",
        ]
        err = check_gradients(build, arrays, max_coords=8)
        assert err < GRAD_TOL
