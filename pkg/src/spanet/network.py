"""Assemble the full network from a declarative stage table.

Layer sequence: 3x3 stride-2 stem (LN + ReLU) -> bottleneck blocks per the
stage rows -> 1x1 conv to `head_width_1` (LN + ReLU) -> global average pool
-> linear to `head_width_2` (ReLU, no normalization) -> fully connected
classifier. The pre-classifier vector is returned alongside the logits as
the embedding used by the circle loss; on a pooled 1x1 map the final "1x1
convs" are realized as fully connected layers, which is the same map.

Strides are derived mechanically from the stage table's input-resolution
schedule: a row that hands its successor a halved resolution gets stride 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .blocks import Norm, SPABlock, build_norm, build_spa_block
from .errors import ConfigError, DimensionError
from .initializers import xavier_init

STEM_KERNEL = 3


@dataclass(frozen=True)
class StageRow:
    out_channels: int
    expansion: int
    stride: int = 1
    attention: bool = True


# Full-size stage table: 16 bottleneck rows behind a stride-2 stem, entering
# resolutions 256/128/64/32/16 on a 512x512 input.
FULL_ROWS = (
    StageRow(16, 16, 1),
    StageRow(24, 48, 2),
    StageRow(24, 72, 1),
    StageRow(48, 72, 2),
    StageRow(48, 120, 1),
    StageRow(48, 120, 1),
    StageRow(96, 240, 2),
    StageRow(96, 200, 1),
    StageRow(96, 184, 1),
    StageRow(96, 184, 1),
    StageRow(144, 480, 1),
    StageRow(144, 672, 1),
    StageRow(192, 672, 2),
    StageRow(192, 960, 1),
    StageRow(192, 960, 1),
    StageRow(192, 960, 1),
)

TOY_ROWS = (
    StageRow(16, 32, 1),
    StageRow(24, 48, 2),
    StageRow(24, 72, 1),
    StageRow(32, 96, 2),
)


@dataclass
class NetworkConfig:
    input_size: tuple[int, int, int]  # (channels, H, W)
    rows: tuple[StageRow, ...]
    num_classes: int
    stem_channels: int = 16
    head_width_1: int = 960
    head_width_2: int = 1280
    ratio: float = 0.5
    attention_reduction: int = 8

    def validate(self):
        c, h, w = self.input_size
        if c < 1 or h < 2 or w < 2:
            raise ConfigError(f"input size {self.input_size} is too small for the stem")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if not self.rows:
            raise ConfigError("network needs at least one stage row")
        res_h, res_w = -(-h // 2), -(-w // 2)
        for i, row in enumerate(self.rows):
            if row.stride not in (1, 2):
                raise ConfigError(f"row {i}: stride must be 1 or 2, got {row.stride}")
            if row.stride == 2 and (res_h < 2 or res_w < 2):
                raise ConfigError(
                    f"row {i}: stride-2 stage cannot halve a {res_h}x{res_w} map"
                )
            res_h, res_w = -(-res_h // row.stride), -(-res_w // row.stride)

    def resolution_trace(self):
        """Input resolution of every block, plus the final feature resolution."""
        _, h, w = self.input_size
        res = (-(-h // 2), -(-w // 2))
        trace = []
        for row in self.rows:
            trace.append(res)
            res = (-(-res[0] // row.stride), -(-res[1] // row.stride))
        trace.append(res)
        return trace


def full_config(num_classes: int = 11, ratio: float = 0.5, reduction: int = 8) -> NetworkConfig:
    return NetworkConfig(
        input_size=(3, 512, 512),
        rows=FULL_ROWS,
        num_classes=num_classes,
        head_width_1=960,
        head_width_2=1280,
        ratio=ratio,
        attention_reduction=reduction,
    )


def toy_config(num_classes: int = 4, ratio: float = 0.5, reduction: int = 8,
               input_hw: tuple[int, int] = (64, 64)) -> NetworkConfig:
    return NetworkConfig(
        input_size=(3, input_hw[0], input_hw[1]),
        rows=TOY_ROWS,
        num_classes=num_classes,
        head_width_1=96,
        head_width_2=128,
        ratio=ratio,
        attention_reduction=reduction,
    )


@dataclass
class Network:
    config: NetworkConfig
    stem: T.Tensor
    stem_ln: Norm
    blocks: list[SPABlock]
    head1: T.Tensor
    head1_ln: Norm
    head2_w: T.Tensor
    head2_b: T.Tensor
    fc_w: T.Tensor
    fc_b: T.Tensor
    _params: list = field(default_factory=list, repr=False)

    def parameters(self):
        """Deterministically ordered (name, tensor) pairs of all weights."""
        if not self._params:
            items = [("stem.kernel", self.stem)]
            items += [("stem.ln." + n, t) for n, t in self.stem_ln.parameters()]
            for i, blk in enumerate(self.blocks):
                items += [(f"block{i:02d}.{n}", t) for n, t in blk.parameters()]
            items.append(("head1.kernel", self.head1))
            items += [("head1.ln." + n, t) for n, t in self.head1_ln.parameters()]
            items += [
                ("head2.weight", self.head2_w),
                ("head2.bias", self.head2_b),
                ("fc.weight", self.fc_w),
                ("fc.bias", self.fc_b),
            ]
            self._params = items
        return self._params

    def forward(self, batch: T.Tensor, train_mode: bool = True):
        """Run the network; returns (logits, embedding).

        train_mode=False skips graph recording (inference). The computation
        itself is identical in both modes.
        """
        c, h, w = self.config.input_size
        if batch.data.ndim != 4 or batch.data.shape[1:] != (c, h, w):
            raise DimensionError(
                f"network expects input (N, {c}, {h}, {w}), got {batch.data.shape}"
            )
        if train_mode:
            return self._forward(batch)
        with T.no_tape():
            return self._forward(batch)

    def _forward(self, batch):
        h = T.conv2d(batch, self.stem, stride=2, padding="same")
        h = T.relu(self.stem_ln.forward(h))
        for blk in self.blocks:
            h = blk.forward(h)
        h = T.conv2d(h, self.head1, stride=1, padding="same")
        h = T.relu(self.head1_ln.forward(h))
        h = T.global_avg_pool(h)
        n = h.data.shape[0]
        h = T.reshape(h, (n, self.config.head_width_1))
        embedding = T.relu(T.fully_connected(h, self.head2_w, self.head2_b))
        logits = T.fully_connected(embedding, self.fc_w, self.fc_b)
        return logits, embedding

    def load_arrays(self, arrays: dict):
        """Install checkpointed weights; names and shapes must match exactly."""
        params = dict(self.parameters())
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise ConfigError(
                f"checkpoint does not match network: missing={missing[:4]} extra={extra[:4]}"
            )
        for name, tensor in params.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(tensor.data.shape):
                raise ConfigError(
                    f"checkpoint array {name!r} has shape {arr.shape}, "
                    f"network expects {tensor.data.shape}"
                )
            tensor.data = arr.astype(tensor.data.dtype, copy=True)
            tensor.grad = None


def build_network(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> Network:
    """Build and Xavier-initialize the network; bit-reproducible per seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    c_in = config.input_size[0]
    sc = config.stem_channels

    stem = T.parameter(
        xavier_init((sc, c_in, STEM_KERNEL, STEM_KERNEL),
                     c_in * STEM_KERNEL**2, sc * STEM_KERNEL**2, rng).astype(dtype)
    )
    stem_ln = build_norm(sc, dtype)

    blocks = []
    prev = sc
    for row in config.rows:
        blocks.append(
            build_spa_block(
                prev,
                row.out_channels,
                row.expansion,
                row.stride,
                ratio=config.ratio,
                reduction=config.attention_reduction,
                attention=row.attention,
                rng=rng,
                dtype=dtype,
            )
        )
        prev = row.out_channels

    h1 = config.head_width_1
    h2 = config.head_width_2
    head1 = T.parameter(xavier_init((h1, prev, 1, 1), prev, h1, rng).astype(dtype))
    head1_ln = build_norm(h1, dtype)
    head2_w = T.parameter(xavier_init((h1, h2), h1, h2, rng).astype(dtype))
    head2_b = T.parameter(np.zeros(h2, dtype=dtype))
    fc_w = T.parameter(xavier_init((h2, config.num_classes), h2, config.num_classes, rng).astype(dtype))
    fc_b = T.parameter(np.zeros(config.num_classes, dtype=dtype))

    return Network(
        config=config,
        stem=stem,
        stem_ln=stem_ln,
        blocks=blocks,
        head1=head1,
        head1_ln=head1_ln,
        head2_w=head2_w,
        head2_b=head2_b,
        fc_w=fc_w,
        fc_b=fc_b,
    )
