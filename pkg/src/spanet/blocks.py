"""The three composite blocks: self-proliferation, global-context
self-attention, and the inverted-residual bottleneck combining them.

A self-proliferation block produces a fraction (1 - ratio) of its output
channels with a 1x1 convolution and synthesizes the rest by cheap depthwise
3x3 transforms of those primary maps. The attention block pools all spatial
positions into one context vector with softmax weights, refines it through a
bottleneck (linear -> layer norm -> ReLU -> linear), and adds the result back
to every position. The bottleneck block expands, transforms in the expanded
space (depthwise conv + attention), and compresses with no ReLU after the
compression stage; an identity skip applies when shapes allow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .initializers import xavier_init

PRIMARY_KERNEL = 1  # 1x1 primary convolution
CHEAP_KERNEL = 3  # depthwise 3x3 cheap operation


def primary_channels(out_channels: int, ratio: float) -> int:
    """Channels produced by the primary conv; the rest come from cheap ops."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"composition ratio must lie in (0, 1), got {ratio}")
    if ratio >= (out_channels - 1) / out_channels:
        raise ConfigError(
            f"ratio {ratio} leaves no primary maps for {out_channels} output "
            f"channels (requires ratio < {(out_channels - 1) / out_channels:.4f})"
        )
    return max(1, int(round((1.0 - ratio) * out_channels)))


@dataclass
class Norm:
    """Per-channel layer-norm affine parameters."""

    gain: T.Tensor
    bias: T.Tensor
    eps: float = 1e-5

    def forward(self, x: T.Tensor) -> T.Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)

    def parameters(self):
        return [("gain", self.gain), ("bias", self.bias)]


def build_norm(channels: int, dtype=np.float32) -> Norm:
    return Norm(
        gain=T.parameter(np.ones(channels, dtype=dtype)),
        bias=T.parameter(np.zeros(channels, dtype=dtype)),
    )


@dataclass
class SPBlock:
    """Self-proliferation: 1x1 primary conv + cheap depthwise expansion.

    cheap filter j reads primary map (j mod c_primary), so ratios above 0.5
    reuse primary maps cyclically.
    """

    in_channels: int
    out_channels: int
    ratio: float
    primary: T.Tensor  # (c_primary, in_channels, 1, 1)
    cheap: T.Tensor | None  # (c_cheap, 3, 3)
    cheap_sources: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))

    @property
    def c_primary(self) -> int:
        return self.primary.data.shape[0]

    @property
    def c_cheap(self) -> int:
        return self.out_channels - self.c_primary

    def forward(self, x: T.Tensor) -> T.Tensor:
        if x.data.shape[1] != self.in_channels:
            raise DimensionError(
                f"sp block expects {self.in_channels} input channels, "
                f"got input shape {x.data.shape}"
            )
        prim = T.conv2d(x, self.primary, stride=1, padding="same")
        if self.cheap is None:
            return prim
        src = T.gather_channels(prim, self.cheap_sources)
        cheap = T.depthwise_conv2d(src, self.cheap, stride=1, padding="same")
        return T.concat_channels([prim, cheap])

    def parameters(self):
        out = [("primary", self.primary)]
        if self.cheap is not None:
            out.append(("cheap", self.cheap))
        return out


def build_sp_block(in_channels, out_channels, ratio, rng, dtype=np.float32) -> SPBlock:
    p = primary_channels(out_channels, ratio)
    c_cheap = out_channels - p
    primary = T.parameter(
        xavier_init((p, in_channels, 1, 1), in_channels, p, rng).astype(dtype)
    )
    cheap = None
    sources = np.zeros(0, dtype=np.intp)
    if c_cheap > 0:
        k2 = CHEAP_KERNEL * CHEAP_KERNEL
        cheap = T.parameter(
            xavier_init((c_cheap, CHEAP_KERNEL, CHEAP_KERNEL), k2, k2, rng).astype(dtype)
        )
        sources = np.arange(c_cheap, dtype=np.intp) % p
    return SPBlock(in_channels, out_channels, ratio, primary, cheap, sources)


@dataclass
class AttentionBlock:
    """Global-context self-attention with a broadcast additive fusion."""

    channels: int
    reduction: int
    wg: T.Tensor  # (1, C, 1, 1) pooling-logit conv
    w1: T.Tensor  # (C, bottleneck)
    w2: T.Tensor  # (bottleneck, C)
    ln: Norm  # over the bottleneck features

    def forward(self, x: T.Tensor) -> T.Tensor:
        if x.data.shape[1] != self.channels:
            raise DimensionError(
                f"attention block expects {self.channels} channels, "
                f"got input shape {x.data.shape}"
            )
        N, C, H, W = x.data.shape
        logits = T.reshape(T.conv2d(x, self.wg, stride=1, padding="same"), (N, H * W))
        weights = T.softmax(logits)
        context = T.position_weighted_sum(x, weights)  # (N, C)
        t = T.relu(self.ln.forward(T.matmul(context, self.w1)))
        t = T.matmul(t, self.w2)
        return T.add(x, T.reshape(t, (N, C, 1, 1)))

    def pooling_weights(self, x: T.Tensor) -> np.ndarray:
        """The per-position softmax weights (for inspection/tests)."""
        N, C, H, W = x.data.shape
        with T.no_tape():
            logits = T.reshape(T.conv2d(x, self.wg, stride=1, padding="same"), (N, H * W))
            return T.softmax(logits).data

    def parameters(self):
        return (
            [("wg", self.wg), ("w1", self.w1), ("w2", self.w2)]
            + [("ln." + n, t) for n, t in self.ln.parameters()]
        )


def build_attention_block(channels, reduction=8, rng=0, dtype=np.float32) -> AttentionBlock:
    if reduction < 1:
        raise ConfigError(f"attention reduction must be >= 1, got {reduction}")
    bottleneck = max(1, math.ceil(channels / reduction))
    return AttentionBlock(
        channels=channels,
        reduction=reduction,
        wg=T.parameter(xavier_init((1, channels, 1, 1), channels, 1, rng).astype(dtype)),
        w1=T.parameter(xavier_init((channels, bottleneck), channels, bottleneck, rng).astype(dtype)),
        w2=T.parameter(xavier_init((bottleneck, channels), bottleneck, channels, rng).astype(dtype)),
        ln=build_norm(bottleneck, dtype),
    )


@dataclass
class SPABlock:
    """Inverted-residual bottleneck: expand (SP) -> depthwise + attention ->
    compress (SP, no ReLU); identity skip when stride is 1 and channels match."""

    in_channels: int
    out_channels: int
    expansion: int
    stride: int
    expand: SPBlock
    ln1: Norm
    dw: T.Tensor  # (expansion, 3, 3)
    ln2: Norm
    attention: AttentionBlock | None
    compress: SPBlock
    ln3: Norm
    use_residual: bool

    def forward(self, x: T.Tensor) -> T.Tensor:
        h = self.expand.forward(x)
        h = T.relu(self.ln1.forward(h))
        h = T.depthwise_conv2d(h, self.dw, stride=self.stride, padding="same")
        h = T.relu(self.ln2.forward(h))
        if self.attention is not None:
            h = self.attention.forward(h)
        h = self.compress.forward(h)
        h = self.ln3.forward(h)  # compression stage carries no ReLU
        if self.use_residual:
            h = T.add(h, x)
        return h

    def parameters(self):
        groups = [
            ("expand", self.expand),
            ("ln1", self.ln1),
            ("ln2", self.ln2),
            ("compress", self.compress),
            ("ln3", self.ln3),
        ]
        out = []
        for prefix, obj in groups:
            out.extend((f"{prefix}.{n}", t) for n, t in obj.parameters())
        out.append(("dw", self.dw))
        if self.attention is not None:
            out.extend((f"attention.{n}", t) for n, t in self.attention.parameters())
        return out


def build_spa_block(
    in_channels,
    out_channels,
    expansion,
    stride,
    ratio=0.5,
    reduction=8,
    attention=True,
    rng=None,
    dtype=np.float32,
) -> SPABlock:
    if stride not in (1, 2):
        raise ConfigError(f"block stride must be 1 or 2, got {stride}")
    if rng is None or not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    k2 = CHEAP_KERNEL * CHEAP_KERNEL
    return SPABlock(
        in_channels=in_channels,
        out_channels=out_channels,
        expansion=expansion,
        stride=stride,
        expand=build_sp_block(in_channels, expansion, ratio, rng, dtype),
        ln1=build_norm(expansion, dtype),
        dw=T.parameter(
            xavier_init((expansion, CHEAP_KERNEL, CHEAP_KERNEL), k2, k2, rng).astype(dtype)
        ),
        ln2=build_norm(expansion, dtype),
        attention=build_attention_block(expansion, reduction, rng, dtype) if attention else None,
        compress=build_sp_block(expansion, out_channels, ratio, rng, dtype),
        ln3=build_norm(out_channels, dtype),
        use_residual=(stride == 1 and in_channels == out_channels),
    )
