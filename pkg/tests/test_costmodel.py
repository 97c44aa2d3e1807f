"""Cost-model tests: formula spot checks, the halving claim, ratio ordering,
and exact agreement with brute-force traversal of a built network."""

import numpy as np
import pytest

from spanet.costmodel import (
    attention_cost,
    conv_cost,
    cost_report,
    count_flops,
    count_params,
    depthwise_cost,
    gc_block_cost,
    nl_block_cost,
    ratio_sweep,
    se_block_cost,
    snl_block_cost,
    sp_block_cost,
)
from spanet.errors import ConfigError
from spanet.network import NetworkConfig, StageRow, build_network, full_config, toy_config

TABLE_RATIOS = (0.06, 0.13, 0.25, 0.50, 0.63, 0.83)


class TestPrimitives:
    def test_conv_1x1_16_to_16(self):
        params, _ = conv_cost(16, 16, 1, 1)
        assert params == 256

    def test_conv_flops_formula(self):
        # 1x1 conv, 3 -> 8 channels on a 4x4 map: 2 * 3 * 8 * 16 = 768
        _, flops = conv_cost(3, 8, 1, 16)
        assert flops == 768

    def test_sp_block_params(self):
        params, _ = sp_block_cost(4, 16, 0.5, 1)
        assert params == 104  # 4*8 primary + 8*9 cheap

    def test_depthwise(self):
        params, flops = depthwise_cost(32, 3, 100)
        assert params == 32 * 9
        assert flops == 2 * 9 * 100 * 32

    def test_counts_are_ints(self):
        rep = cost_report(toy_config())
        assert all(isinstance(e.params, int) and isinstance(e.flops, int) for e in rep.per_layer)
        assert rep.total_params == sum(e.params for e in rep.per_layer)
        assert rep.total_flops == sum(e.flops for e in rep.per_layer)


class TestHalvingClaim:
    @pytest.mark.parametrize("c", [128, 256, 512])
    def test_sp_vs_standard_1x1(self, c):
        _, sp = sp_block_cost(c, c, 0.5, 7 * 7)
        _, std = conv_cost(c, c, 1, 7 * 7)
        assert sp / std <= 0.55

    def test_ratio_value_at_128(self):
        _, sp = sp_block_cost(128, 128, 0.5, 1)
        _, std = conv_cost(128, 128, 1, 1)
        assert sp / std == pytest.approx((128 * 64 + 9 * 64) / (128 * 128))
        assert sp / std == pytest.approx(0.535, abs=1e-3)

    @pytest.mark.parametrize("c_in", [64, 128, 256])
    @pytest.mark.parametrize("r", [0.25, 0.5, 0.83])
    def test_asymptotic_ratio(self, c_in, r):
        # ratio tends to (1 - r) + 9 r / C_in as the output width grows
        # (cheap maps are an r fraction and cost 9/C_in of a primary column)
        c_out = 4096
        from spanet.blocks import primary_channels

        p = primary_channels(c_out, r)
        _, sp = sp_block_cost(c_in, c_out, r, 1)
        _, std = conv_cost(c_in, c_out, 1, 1)
        eff_r = 1 - p / c_out
        want = (1 - eff_r) + 9 * eff_r / c_in
        assert sp / std == pytest.approx(want, rel=1e-9)
        assert sp / std == pytest.approx((1 - r) + 9 * r / c_in, rel=0.02)


class TestNetworkAccounting:
    def test_matches_brute_force_traversal(self):
        cfg = toy_config()
        net = build_network(cfg, seed=0)
        brute = sum(t.data.size for _, t in net.parameters())
        assert count_params(cfg).total_params == brute
        assert count_params(net).total_params == brute

    def test_matches_brute_force_various_shapes(self):
        cfg = NetworkConfig(
            input_size=(1, 48, 48),
            rows=(StageRow(8, 24, 1), StageRow(12, 30, 2, attention=False), StageRow(12, 36, 1)),
            num_classes=7,
            stem_channels=10,
            head_width_1=20,
            head_width_2=24,
            ratio=0.25,
            attention_reduction=4,
        )
        net = build_network(cfg, seed=1)
        brute = sum(t.data.size for _, t in net.parameters())
        assert count_params(cfg).total_params == brute

    def test_full_sweep_strictly_decreasing(self):
        rows = ratio_sweep(full_config())
        params = [p for _, p, _ in rows]
        assert len(params) == 6
        assert all(a > b for a, b in zip(params, params[1:])), params

    def test_full_r05_bracket(self):
        total = count_params(full_config()).total_params
        assert 2_000_000 <= total <= 3_500_000

    def test_flops_linear_in_resolution(self):
        cfg = toy_config()
        base = count_flops(cfg, resolution=(64, 64)).total_flops
        # fixed per-position work plus tiny resolution-independent head terms
        big = count_flops(cfg, resolution=(128, 128)).total_flops
        assert big / base == pytest.approx(4.0, rel=0.02)

    def test_single_pixel_resolution_guard(self):
        rep = count_flops(toy_config(), resolution=(1, 1))
        assert rep.total_flops > 0
        with pytest.raises(ConfigError):
            count_flops(toy_config(), resolution=(0, 4))

    def test_report_render(self):
        rep = cost_report(toy_config())
        text = rep.to_text()
        csv = rep.to_csv()
        assert "total" in text and "assumptions" in text
        assert csv.splitlines()[0] == "layer,params,flops"
        assert csv.splitlines()[-1] == f"total,{rep.total_params},{rep.total_flops}"

    def test_conv_only_flops_excludes_norm_entries(self):
        rep = cost_report(toy_config())
        norm = sum(e.flops for e in rep.per_layer if e.name.endswith(".norm_act"))
        assert rep.conv_flops() + norm == rep.total_flops
        assert norm > 0


class TestBaselineFormulas:
    def test_all_positive_and_ordered(self):
        c, hw = 256, 14 * 14
        se_p, se_f = se_block_cost(c, hw)
        nl_p, nl_f = nl_block_cost(c, hw)
        snl_p, snl_f = snl_block_cost(c, hw)
        gc_p, gc_f = gc_block_cost(c, hw)
        for v in (se_p, se_f, nl_p, nl_f, snl_p, snl_f, gc_p, gc_f):
            assert v > 0
        # the pairwise map makes non-local far costlier than the context blocks
        assert nl_f > 10 * gc_f
        assert nl_f > 10 * se_f

    def test_attention_cheaper_than_nl(self):
        c, hw = 128, 28 * 28
        _, att_f, _, att_e = attention_cost(c, 8, hw)
        _, nl_f = nl_block_cost(c, hw)
        assert att_f + att_e < nl_f

