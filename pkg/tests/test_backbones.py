import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evmfusion.backbones import (DenseBackbone, DenseBackboneConfig, UNetBackbone, UNetBackboneConfig,
                                 dense_forward, unet_forward)
from evmfusion.engine import Parameter, SplitMix64, grad_check


def channel_oracle(stem, blocks, compression):
    c = stem
    for i, (layers, growth) in enumerate(blocks):
        for _ in range(layers):
            c = c + growth
        if i != len(blocks) - 1:
            c = int(c * compression)
    return c


def test_default_dense_shape():
    net = DenseBackbone(SplitMix64(0), 3)
    fm = dense_forward(np.random.default_rng(0).uniform(size=(3, 3, 32, 32)), net)
    assert fm.source == "dense"
    assert fm.tensor.shape == (3, 32, 8, 8)
    assert net.out_channels == channel_oracle(16, [(2, 8), (2, 8)], 0.5) == 32


@settings(max_examples=20, deadline=None)
@given(stem=st.integers(1, 6),
       blocks=st.lists(st.tuples(st.integers(1, 2), st.integers(1, 4)), min_size=1, max_size=3),
       compression=st.sampled_from([0.25, 0.5, 0.75, 1.0]))
def test_dense_channels_match_oracle(stem, blocks, compression):
    cfg = DenseBackboneConfig(stem, tuple(blocks), compression)
    expected = channel_oracle(stem, blocks, compression)
    assert cfg.out_channels() == expected
    if expected < 1:
        return
    net = DenseBackbone(SplitMix64(1), 1, cfg)
    side = max(8, cfg.downsampling())
    fm = net(np.ones((1, 1, side, side)))
    assert fm.tensor.shape[1] == expected
    assert fm.tensor.shape[2] == side // cfg.downsampling()


def test_dense_rejects_small_or_indivisible():
    net = DenseBackbone(SplitMix64(0), 1)
    with pytest.raises(ValueError):
        net(np.zeros((1, 1, 4, 4)))
    with pytest.raises(ValueError):
        net(np.zeros((1, 1, 10, 12)))


def test_dense_config_invariants():
    with pytest.raises(ValueError):
        DenseBackboneConfig(blocks=((0, 4),))
    with pytest.raises(ValueError):
        DenseBackboneConfig(transition_compression=0.0)


@pytest.mark.parametrize("factory", [lambda r: DenseBackbone(r, 2), lambda r: UNetBackbone(r, 2)])
def test_zero_weights_give_zero_map(factory):
    net = factory(SplitMix64(2))
    for _, p in net.named_parameters():
        p.data[...] = 0.0
    out = net(np.random.default_rng(2).uniform(size=(2, 2, 16, 16))).tensor
    assert np.all(out.data == 0.0)


def test_unet_shape_and_skips():
    net = UNetBackbone(SplitMix64(3), 1, UNetBackboneConfig(depth=2, base_channels=8))
    fm = unet_forward(np.random.default_rng(3).uniform(size=(2, 1, 32, 32)), net)
    assert fm.source == "unet" and fm.tensor.shape == (2, 8, 32, 32)
    assert net.last_skip_shapes == [((16, 16), (16, 16)), ((32, 32), (32, 32))]


def test_unet_divisibility():
    net = UNetBackbone(SplitMix64(0), 1, UNetBackboneConfig(depth=3))
    with pytest.raises(ValueError):
        net(np.zeros((1, 1, 12, 12)))
    with pytest.raises(ValueError):
        UNetBackboneConfig(depth=0)
    with pytest.raises(ValueError):
        UNetBackboneConfig(skip=False)


def test_dense_grad_check_tiny():
    cfg = DenseBackboneConfig(stem_channels=2, blocks=((1, 2), (1, 2)), transition_compression=0.5)
    net = DenseBackbone(SplitMix64(4), 1, cfg)
    assert net.num_parameters() < 2000
    x = Parameter(np.random.default_rng(4).uniform(size=(1, 1, 8, 8)))
    w = np.random.default_rng(5).normal(size=(1, cfg.out_channels(), 2, 2))
    assert grad_check(lambda: (net(x).tensor * w).sum(), net.parameters() + [x]) < 1e-4


def test_unet_grad_check_tiny():
    net = UNetBackbone(SplitMix64(6), 1, UNetBackboneConfig(depth=1, base_channels=2))
    assert net.num_parameters() < 2000
    x = Parameter(np.random.default_rng(6).uniform(size=(1, 1, 4, 4)))
    w = np.random.default_rng(7).normal(size=(1, 2, 4, 4))
    assert grad_check(lambda: (net(x).tensor * w).sum(), net.parameters() + [x]) < 1e-4
