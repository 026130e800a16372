"""Reduced-scale DenseNet and U-Net feature extractors (no batch norm)."""
from __future__ import annotations

from dataclasses import dataclass

from .engine import Conv2d, Module, SplitMix64, ops


@dataclass(frozen=True)
class DenseBackboneConfig:
    stem_channels: int = 16
    blocks: tuple = ((2, 8), (2, 8))
    transition_compression: float = 0.5

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("at least one dense block is required")
        for layers, growth in self.blocks:
            if layers < 1 or growth < 1:
                raise ValueError("dense blocks need layers >= 1 and growth_rate >= 1")
        if not 0.0 < self.transition_compression <= 1.0:
            raise ValueError("transition_compression must lie in (0, 1]")

    def out_channels(self) -> int:
        c = self.stem_channels
        for i, (layers, growth) in enumerate(self.blocks):
            c += layers * growth
            if i < len(self.blocks) - 1:
                c = int(c * self.transition_compression)
        return c

    def downsampling(self) -> int:
        return 2 ** len(self.blocks)  # stride-2 stem plus one pool per transition


@dataclass(frozen=True)
class UNetBackboneConfig:
    depth: int = 2
    base_channels: int = 8
    skip: bool = True

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.skip:
            raise ValueError("the U-Net variant requires skip connections")


@dataclass
class FeatureMap:
    tensor: object
    source: str


class DenseBackbone(Module):
    """Stride-2 stem, dense blocks of conv3x3+ReLU layers whose outputs are
    concatenated, and 1x1-conv + 2x2 average-pool transitions between blocks."""

    def __init__(self, rng: SplitMix64, in_channels: int, config: DenseBackboneConfig = DenseBackboneConfig()):
        self.config = config
        self.stem = Conv2d(rng, in_channels, config.stem_channels, 3, stride=2, padding=1)
        self.blocks, self.transitions = [], []
        c = config.stem_channels
        for i, (layers, growth) in enumerate(config.blocks):
            block = []
            for _ in range(layers):
                block.append(Conv2d(rng, c, growth, 3))
                c += growth
            self.blocks.append(_Layers(block))
            if i < len(config.blocks) - 1:
                c_out = int(c * config.transition_compression)
                self.transitions.append(Conv2d(rng, c, c_out, 1))
                c = c_out
        self.out_channels = c

    def forward(self, image) -> FeatureMap:
        image = ops.as_tensor(image)
        H, W = image.shape[-2:]
        down = self.config.downsampling()
        if H < 8 or W < 8 or H % down or W % down:
            raise ValueError(f"dense backbone needs H, W >= 8 and divisible by {down}, got {H}x{W}")
        x = ops.relu(self.stem(image))
        for i, block in enumerate(self.blocks):
            for conv in block.layers:
                x = ops.concat([x, ops.relu(conv(x))], axis=1)
            if i < len(self.transitions):
                x = ops.avg_pool2d(self.transitions[i](x), 2)
        return FeatureMap(x, "dense")


class _Layers(Module):
    def __init__(self, layers):
        self.layers = layers


class UNetBackbone(Module):
    """Encoder (conv-conv-maxpool per level), bottleneck, and decoder
    (nearest upsample + conv, concat skip, conv). Output has the input's
    spatial extents and ``base_channels`` channels."""

    def __init__(self, rng: SplitMix64, in_channels: int, config: UNetBackboneConfig = UNetBackboneConfig()):
        self.config = config
        b = config.base_channels
        self.encoder = []
        c = in_channels
        for level in range(config.depth):
            width = b * 2 ** level
            self.encoder.append(_Layers([Conv2d(rng, c, width, 3), Conv2d(rng, width, width, 3)]))
            c = width
        width = b * 2 ** config.depth
        self.bottleneck = _Layers([Conv2d(rng, c, width, 3), Conv2d(rng, width, width, 3)])
        c = width
        self.decoder = []
        for level in reversed(range(config.depth)):
            width = b * 2 ** level
            self.decoder.append(_Layers([Conv2d(rng, c, width, 3), Conv2d(rng, 2 * width, width, 3)]))
            c = width
        self.out_channels = b
        self.last_skip_shapes: list = []

    def forward(self, image) -> FeatureMap:
        image = ops.as_tensor(image)
        H, W = image.shape[-2:]
        factor = 2 ** self.config.depth
        if H % factor or W % factor:
            raise ValueError(f"U-Net input {H}x{W} must be divisible by 2^depth = {factor}")
        skips = []
        x = image
        for level in self.encoder:
            for conv in level.layers:
                x = ops.relu(conv(x))
            skips.append(x)
            x = ops.max_pool2d(x, 2)
        for conv in self.bottleneck.layers:
            x = ops.relu(conv(x))
        shapes = []
        for level, skip in zip(self.decoder, reversed(skips)):
            up, merge = level.layers
            x = ops.relu(up(ops.upsample_nearest2d(x, 2)))
            if x.shape[-2:] != skip.shape[-2:]:
                raise AssertionError(f"skip extents {skip.shape[-2:]} != decoder extents {x.shape[-2:]}")
            shapes.append((tuple(x.shape[-2:]), tuple(skip.shape[-2:])))
            x = ops.relu(merge(ops.concat([x, skip], axis=1)))
        self.last_skip_shapes = shapes
        return FeatureMap(x, "unet")


def dense_forward(image, backbone: DenseBackbone) -> FeatureMap:
    return backbone(image)


def unet_forward(image, backbone: UNetBackbone) -> FeatureMap:
    return backbone(image)
