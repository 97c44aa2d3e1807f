"""Network assembly, forward behavior, and the checkpoint format."""

import numpy as np
import pytest

from spanet import tensor as T
from spanet.checkpoint import load_arrays, load_into_network, save_arrays, save_network
from spanet.errors import ConfigError, DimensionError, FormatError
from spanet.network import (
    NetworkConfig,
    FULL_ROWS,
    StageRow,
    build_network,
    full_config,
    toy_config,
)

from oracles import conv2d_loops, depthwise_loops, layer_norm_plain, softmax_plain


def micro_config(num_classes=3):
    """A very small network for oracle comparisons and fast tests."""
    return NetworkConfig(
        input_size=(3, 16, 16),
        rows=(StageRow(8, 12, 1), StageRow(10, 16, 2)),
        num_classes=num_classes,
        stem_channels=6,
        head_width_1=12,
        head_width_2=16,
        ratio=0.5,
        attention_reduction=4,
    )


class TestBuild:
    def test_toy_shapes(self):
        net = build_network(toy_config(), seed=0)
        x = T.constant(np.zeros((2, 3, 64, 64), dtype=np.float32))
        logits, emb = net.forward(x, train_mode=False)
        assert logits.shape == (2, 4)
        assert emb.shape == (2, 128)

    def test_same_seed_bit_identical(self):
        a = build_network(toy_config(), seed=7)
        b = build_network(toy_config(), seed=7)
        for (na, ta), (nb, tb) in zip(a.parameters(), b.parameters()):
            assert na == nb
            assert np.array_equal(ta.data, tb.data), na

    def test_different_seed_differs(self):
        a = build_network(micro_config(), seed=1)
        b = build_network(micro_config(), seed=2)
        assert not np.array_equal(a.stem.data, b.stem.data)

    def test_invalid_stride_schedule(self):
        cfg = NetworkConfig(
            input_size=(3, 8, 8),
            rows=(StageRow(8, 16, 2), StageRow(8, 16, 2), StageRow(8, 16, 2)),
            num_classes=2,
        )
        with pytest.raises(ConfigError):
            build_network(cfg)

    def test_zero_final_fc_gives_zero_logits(self):
        net = build_network(micro_config(), seed=3)
        net.fc_w.data[:] = 0.0
        net.fc_b.data[:] = 0.0
        x = T.constant(np.random.default_rng(4).normal(size=(2, 3, 16, 16)).astype(np.float32))
        logits, _ = net.forward(x, train_mode=False)
        np.testing.assert_array_equal(logits.data, 0.0)

    def test_input_size_mismatch(self):
        net = build_network(micro_config(), seed=5)
        with pytest.raises(DimensionError):
            net.forward(T.constant(np.zeros((1, 3, 8, 8), dtype=np.float32)))


class TestForward:
    def test_duplicated_sample_duplicates_logits(self):
        net = build_network(micro_config(), seed=6)
        rng = np.random.default_rng(7)
        x = rng.normal(size=(3, 3, 16, 16)).astype(np.float32)
        batch = np.concatenate([x, x[1:2]], axis=0)
        logits, _ = net.forward(T.constant(batch), train_mode=False)
        np.testing.assert_array_equal(logits.data[3], logits.data[1])

    def test_batch_permutation_equivariance(self):
        net = build_network(micro_config(), seed=8)
        rng = np.random.default_rng(9)
        x = rng.normal(size=(4, 3, 16, 16)).astype(np.float32)
        perm = np.array([2, 0, 3, 1])
        a, _ = net.forward(T.constant(x), train_mode=False)
        b, _ = net.forward(T.constant(x[perm]), train_mode=False)
        np.testing.assert_array_equal(a.data[perm], b.data)

    def test_forward_deterministic(self):
        net = build_network(micro_config(), seed=10)
        x = T.constant(np.random.default_rng(11).normal(size=(2, 3, 16, 16)).astype(np.float32))
        a, _ = net.forward(x, train_mode=False)
        b, _ = net.forward(x, train_mode=False)
        assert np.array_equal(a.data, b.data)

    def test_matches_straight_line_oracle(self):
        """Re-run the whole layer sequence in plain numpy, no graph machinery."""
        net = build_network(micro_config(), seed=12, dtype=np.float64)
        weights = {n: t.data for n, t in net.parameters()}
        rng = np.random.default_rng(13)
        x = rng.normal(size=(2, 3, 16, 16))

        def sp_plain(h, prim_w, cheap_w):
            prim = conv2d_loops(h, prim_w, 1, "same")
            p = prim_w.shape[0]
            sources = np.arange(cheap_w.shape[0]) % p
            cheap = depthwise_loops(prim[:, sources], cheap_w, 1, "same")
            return np.concatenate([prim, cheap], axis=1)

        def attention_plain(h, wg, w1, w2, g, b):
            N, C, H, W = h.shape
            logits = conv2d_loops(h, wg, 1, "same").reshape(N, H * W)
            wts = softmax_plain(logits)
            ctx = np.einsum("ncp,np->nc", h.reshape(N, C, H * W), wts)
            t = np.maximum(layer_norm_plain(ctx @ w1, g, b), 0) @ w2
            return h + t[:, :, None, None]

        h = conv2d_loops(x, weights["stem.kernel"], 2, "same")
        h = np.maximum(layer_norm_plain(h, weights["stem.ln.gain"], weights["stem.ln.bias"]), 0)
        for i, row in enumerate(net.config.rows):
            pre = f"block{i:02d}."
            inp = h
            h = sp_plain(h, weights[pre + "expand.primary"], weights[pre + "expand.cheap"])
            h = np.maximum(layer_norm_plain(h, weights[pre + "ln1.gain"], weights[pre + "ln1.bias"]), 0)
            h = depthwise_loops(h, weights[pre + "dw"], row.stride, "same")
            h = np.maximum(layer_norm_plain(h, weights[pre + "ln2.gain"], weights[pre + "ln2.bias"]), 0)
            h = attention_plain(
                h,
                weights[pre + "attention.wg"],
                weights[pre + "attention.w1"],
                weights[pre + "attention.w2"],
                weights[pre + "attention.ln.gain"],
                weights[pre + "attention.ln.bias"],
            )
            h = sp_plain(h, weights[pre + "compress.primary"], weights[pre + "compress.cheap"])
            h = layer_norm_plain(h, weights[pre + "ln3.gain"], weights[pre + "ln3.bias"])
            if row.stride == 1 and inp.shape[1] == h.shape[1]:
                h = h + inp
        h = conv2d_loops(h, weights["head1.kernel"], 1, "same")
        h = np.maximum(layer_norm_plain(h, weights["head1.ln.gain"], weights["head1.ln.bias"]), 0)
        pooled = h.mean(axis=(2, 3))
        emb = np.maximum(pooled @ weights["head2.weight"] + weights["head2.bias"], 0)
        want_logits = emb @ weights["fc.weight"] + weights["fc.bias"]

        got_logits, got_emb = net.forward(T.constant(x), train_mode=False)
        np.testing.assert_allclose(got_emb.data, emb, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(got_logits.data, want_logits, rtol=1e-6, atol=1e-9)


class TestFullPreset:
    def test_sixteen_blocks_match_stage_table(self):
        cfg = full_config()
        assert len(cfg.rows) == 16
        expected = [
            (16, 16), (24, 48), (24, 72), (48, 72), (48, 120), (48, 120),
            (96, 240), (96, 200), (96, 184), (96, 184), (144, 480), (144, 672),
            (192, 672), (192, 960), (192, 960), (192, 960),
        ]
        assert [(r.out_channels, r.expansion) for r in cfg.rows] == expected
        assert all(r.attention for r in cfg.rows)

    def test_resolution_schedule(self):
        cfg = full_config()
        trace = cfg.resolution_trace()
        distinct = []
        for hw in trace:
            if not distinct or distinct[-1] != hw[0]:
                distinct.append(hw[0])
        assert distinct == [256, 128, 64, 32, 16]
        assert trace[-1] == (16, 16)

    def test_parameter_count_bracket(self):
        net = build_network(full_config(), seed=0)
        total = sum(t.data.size for _, t in net.parameters())
        assert 2_000_000 <= total <= 3_500_000, total
        assert len(net.blocks) == 16

    def test_full_resolution_forward(self):
        net = build_network(full_config(), seed=0)
        x = T.constant(np.random.default_rng(1).normal(size=(1, 3, 512, 512)).astype(np.float32))
        logits, emb = net.forward(x, train_mode=False)
        assert logits.shape == (1, 11)
        assert emb.shape == (1, 1280)
        assert np.isfinite(logits.data).all()


class TestCheckpoint:
    def test_wire_format_header(self, tmp_path):
        p = tmp_path / "one.spa1"
        save_arrays(p, [("w", np.arange(6, dtype=np.float32).reshape(2, 3))])
        blob = p.read_bytes()
        assert blob[:4] == b"SPA1"
        assert blob[4] == 1  # version byte
        assert blob[5:9] == (1).to_bytes(4, "little")  # record count
        assert blob[9:11] == (1).to_bytes(2, "little")  # name length
        assert blob[11:12] == b"w"
        assert blob[12] == 2  # rank
        assert blob[13:17] == (2).to_bytes(4, "little")
        assert blob[17:21] == (3).to_bytes(4, "little")
        assert np.frombuffer(blob[21:], dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]

    def test_round_trip_bitwise(self, tmp_path):
        net = build_network(micro_config(), seed=14)
        path = tmp_path / "model.spa1"
        save_network(path, net)
        arrays = load_arrays(path)
        for name, tensor in net.parameters():
            assert np.array_equal(arrays[name], tensor.data), name

        other = build_network(micro_config(), seed=99)
        load_into_network(path, other)
        for (n1, t1), (n2, t2) in zip(net.parameters(), other.parameters()):
            assert np.array_equal(t1.data, t2.data), n1

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.spa1"
        p.write_bytes(b"NOPE" + b"\x01" + b"\x00" * 16)
        with pytest.raises(FormatError):
            load_arrays(p)

    def test_truncated(self, tmp_path):
        net = build_network(micro_config(), seed=15)
        p = tmp_path / "model.spa1"
        save_network(p, net)
        blob = p.read_bytes()
        p.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(FormatError):
            load_arrays(p)

    def test_garbage(self, tmp_path):
        p = tmp_path / "junk.spa1"
        p.write_bytes(bytes(range(256)) * 10)
        with pytest.raises(FormatError):
            load_arrays(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "model.spa1"
        save_arrays(p, [("w", np.ones((2, 2), dtype=np.float32))])
        p.write_bytes(p.read_bytes() + b"zz")
        with pytest.raises(FormatError):
            load_arrays(p)

    def test_wrong_shape_rejected_on_load(self, tmp_path):
        net = build_network(micro_config(), seed=16)
        p = tmp_path / "model.spa1"
        items = [(n, t.data) for n, t in net.parameters()]
        items[0] = (items[0][0], np.zeros((1, 1, 1, 1), dtype=np.float32))
        save_arrays(p, items)
        with pytest.raises(ConfigError):
            load_into_network(p, net)
