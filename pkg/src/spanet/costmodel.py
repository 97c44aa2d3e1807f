"""Analytic parameter and FLOPs accounting.

Conventions (recorded in every report's `assumptions` field):
  * one multiply-accumulate = 2 FLOPs,
  * a bias add costs 1 FLOP per output element and is charged to its layer,
  * normalization/activation/softmax/residual work is charged to separate
    ".norm_act" entries (layer norm 8, ReLU 1, softmax 4, add 1 FLOP per
    element) so conv-only comparisons stay possible.

All counts are exact integers derived from the configuration alone; no
weights need to be materialized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .blocks import primary_channels
from .errors import ConfigError
from .network import Network, NetworkConfig

ASSUMPTIONS = (
    "MAC=2 FLOPs; bias adds charged to their layer; layer norm 8, ReLU 1, "
    "softmax 4, residual/broadcast add 1 FLOP per element, reported under "
    "separate .norm_act entries"
)


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    flops: int


@dataclass
class CostReport:
    per_layer: list
    assumptions: str = ASSUMPTIONS

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.per_layer)

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.per_layer)

    def conv_flops(self) -> int:
        """FLOPs excluding the .norm_act entries."""
        return sum(e.flops for e in self.per_layer if not e.name.endswith(".norm_act"))

    def to_csv(self) -> str:
        lines = ["layer,params,flops"]
        lines += [f"{e.name},{e.params},{e.flops}" for e in self.per_layer]
        lines.append(f"total,{self.total_params},{self.total_flops}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        width = max(len(e.name) for e in self.per_layer + [LayerCost("total", 0, 0)])
        lines = [f"{'layer':<{width}}  {'params':>12}  {'flops':>16}"]
        for e in self.per_layer:
            lines.append(f"{e.name:<{width}}  {e.params:>12,}  {e.flops:>16,}")
        lines.append(f"{'total':<{width}}  {self.total_params:>12,}  {self.total_flops:>16,}")
        lines.append(f"assumptions: {self.assumptions}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# primitive cost formulas
# ---------------------------------------------------------------------------


def conv_cost(c_in: int, c_out: int, k: int, out_hw: int, bias: bool = False):
    """Standard convolution: params and 2 * C_in * k^2 * H_out*W_out * C_out FLOPs."""
    params = c_in * k * k * c_out + (c_out if bias else 0)
    flops = 2 * c_in * k * k * out_hw * c_out + (c_out * out_hw if bias else 0)
    return params, flops


def depthwise_cost(channels: int, k: int, out_hw: int):
    return channels * k * k, 2 * k * k * out_hw * channels


def sp_block_cost(c_in: int, c_out: int, ratio: float, out_hw: int):
    """Self-proliferation block: 1x1 primary conv plus depthwise-3x3 cheap maps."""
    p = primary_channels(c_out, ratio)
    cheap = c_out - p
    params = c_in * p + 9 * cheap
    flops = 2 * c_in * p * out_hw + 2 * 9 * cheap * out_hw
    return params, flops


def attention_cost(channels: int, reduction: int, hw: int):
    """Matmul/conv part of the attention block; (params, flops, b, elem_flops)."""
    b = max(1, math.ceil(channels / reduction))
    params = channels + channels * b + b * channels
    flops = (
        2 * channels * hw  # pooling-logit conv
        + 2 * channels * hw  # context weighted sum
        + 2 * channels * b  # bottleneck in
        + 2 * b * channels  # bottleneck out
    )
    elem = 4 * hw + 8 * b + b + channels * hw  # softmax, ln, relu, broadcast add
    return params, flops, b, elem


# ---------------------------------------------------------------------------
# whole-network accounting
# ---------------------------------------------------------------------------


def _resolve_config(network_or_config) -> NetworkConfig:
    if isinstance(network_or_config, Network):
        return network_or_config.config
    if isinstance(network_or_config, NetworkConfig):
        return network_or_config
    raise ConfigError(f"expected Network or NetworkConfig, got {type(network_or_config)!r}")


def cost_report(network_or_config, resolution=None) -> CostReport:
    """Per-layer parameter and FLOPs table for the full network.

    `resolution` overrides the config's (H, W) input resolution; H = W = 1
    degenerates cleanly to the pure channel-mixing cost.
    """
    cfg = _resolve_config(network_or_config)
    if resolution is None:
        h, w = cfg.input_size[1], cfg.input_size[2]
    else:
        h, w = resolution
    if h < 1 or w < 1:
        raise ConfigError(f"resolution must be positive, got {(h, w)}")

    entries: list[LayerCost] = []
    c_in = cfg.input_size[0]
    sc = cfg.stem_channels
    h, w = -(-h // 2), -(-w // 2)
    p, f = conv_cost(c_in, sc, 3, h * w)
    entries.append(LayerCost("stem", p, f))
    entries.append(LayerCost("stem.norm_act", 2 * sc, 8 * sc * h * w + sc * h * w))

    prev = sc
    for i, row in enumerate(cfg.rows):
        e = row.expansion
        hw_in = h * w
        h, w = -(-h // row.stride), -(-w // row.stride)
        hw_out = h * w
        name = f"block{i:02d}"

        p_exp, f_exp = sp_block_cost(prev, e, cfg.ratio, hw_in)
        entries.append(LayerCost(f"{name}.expand", p_exp, f_exp))
        p_dw, f_dw = depthwise_cost(e, 3, hw_out)
        entries.append(LayerCost(f"{name}.dw", p_dw, f_dw))

        norm_params = 2 * e + 2 * e + 2 * row.out_channels
        elem = 9 * e * hw_in + 9 * e * hw_out  # ln1+relu, ln2+relu
        elem += 8 * row.out_channels * hw_out  # ln3, no relu
        if row.attention:
            p_att, f_att, b, att_elem = attention_cost(e, cfg.attention_reduction, hw_out)
            entries.append(LayerCost(f"{name}.attention", p_att, f_att))
            norm_params += 2 * b
            elem += att_elem
        p_cmp, f_cmp = sp_block_cost(e, row.out_channels, cfg.ratio, hw_out)
        entries.append(LayerCost(f"{name}.compress", p_cmp, f_cmp))
        if row.stride == 1 and prev == row.out_channels:
            elem += row.out_channels * hw_out  # residual add
        entries.append(LayerCost(f"{name}.norm_act", norm_params, elem))
        prev = row.out_channels

    h1, h2 = cfg.head_width_1, cfg.head_width_2
    p, f = conv_cost(prev, h1, 1, h * w)
    entries.append(LayerCost("head1", p, f))
    entries.append(LayerCost("head1.norm_act", 2 * h1, 8 * h1 * h * w + h1 * h * w))
    entries.append(LayerCost("pool.norm_act", 0, h1 * h * w + h1))
    p, f = conv_cost(h1, h2, 1, 1, bias=True)
    entries.append(LayerCost("head2", p, f))
    entries.append(LayerCost("head2.norm_act", 0, h2))
    p, f = conv_cost(h2, cfg.num_classes, 1, 1, bias=True)
    entries.append(LayerCost("fc", p, f))
    return CostReport(entries)


def count_params(network_or_config) -> CostReport:
    return cost_report(network_or_config)


def count_flops(network_or_config, resolution=None) -> CostReport:
    return cost_report(network_or_config, resolution=resolution)


def ratio_sweep(base_config: NetworkConfig, ratios=(0.06, 0.13, 0.25, 0.50, 0.63, 0.83)):
    """Total params/FLOPs for each composition ratio on a fixed architecture."""
    from dataclasses import replace

    rows = []
    for r in ratios:
        rep = cost_report(replace(base_config, ratio=r))
        rows.append((r, rep.total_params, rep.total_flops))
    return rows


# ---------------------------------------------------------------------------
# baseline attention blocks, closed-form only (no executable counterparts)
# ---------------------------------------------------------------------------


def se_block_cost(channels: int, hw: int, reduction: int = 16):
    """Squeeze-and-excitation: pool, two FCs, sigmoid, channel rescale."""
    b = max(1, channels // reduction)
    params = channels * b + b * channels
    flops = channels * hw + 2 * channels * b + 2 * b * channels + channels + channels * hw
    return params, flops


def nl_block_cost(channels: int, hw: int):
    """Non-local (embedded gaussian, bottleneck C/2): quadratic in positions."""
    b = channels // 2
    params = 3 * channels * b + b * channels
    flops = (
        3 * 2 * channels * b * hw  # query/key/value transforms
        + 2 * b * hw * hw  # pairwise attention map
        + 4 * hw * hw  # softmax over each row
        + 2 * b * hw * hw  # aggregation
        + 2 * b * channels * hw  # output transform
    )
    return params, flops


def snl_block_cost(channels: int, hw: int):
    """Simplified non-local: one global context, one C x C transform."""
    params = channels + channels * channels
    flops = 2 * channels * hw + 4 * hw + 2 * channels * hw + 2 * channels * channels
    return params, flops


def gc_block_cost(channels: int, hw: int, reduction: int = 16):
    """Global-context block: context pooling plus a bottleneck transform."""
    b = max(1, channels // reduction)
    params = channels + channels * b + b * channels + 2 * b
    flops = (
        2 * channels * hw + 4 * hw  # context mask + softmax
        + 2 * channels * hw  # weighted pooling
        + 2 * channels * b + 2 * b * channels  # bottleneck
        + 8 * b + b + channels * hw  # ln, relu, broadcast add
    )
    return params, flops
