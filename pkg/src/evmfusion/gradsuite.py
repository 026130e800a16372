"""Finite-difference gradient checks for every trainable block at tiny sizes.

Shared by the ``gradcheck`` command and the test suite. Each case builds a
block, a fixed random projection of its output to a scalar, and the list of
tensors to probe. ``corrupt`` names a block whose output gradient is
deliberately scaled, as a negative control.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .attention import MultiHeadAttention, SpatialAttention, SqueezeExcitation, TraditionalPath
from .backbones import DenseBackbone, DenseBackboneConfig, UNetBackbone, UNetBackboneConfig
from .engine import GRUCell, Parameter, SplitMix64, grad_check, gru_cell, ops, using
from .fusion import NafBlock, NafConfig
from .vim import MambaBlock, VimConfig, scan_kernel

BLOCK_THRESHOLD = 1e-4
MODEL_THRESHOLD = 1e-3


@dataclass
class CheckResult:
    block: str
    worst: float
    threshold: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.worst < self.threshold


_WEIGHT_CACHE: dict = {}


def _weights(seed, shape):
    key = (seed, tuple(shape))
    if key not in _WEIGHT_CACHE:
        _WEIGHT_CACHE[key] = np.random.default_rng(seed).normal(size=shape)
    return _WEIGHT_CACHE[key]


def _project(seed, t):
    """Scalar loss <t, w> with a fixed random w, so every output entry matters."""
    return (t * _weights(seed, t.shape)).sum()


def _data(seed, shape, low=None):
    rng = np.random.default_rng(seed)
    return Parameter(rng.uniform(size=shape) if low == "unit" else rng.normal(size=shape))


def case_dense(wrap):
    net = DenseBackbone(SplitMix64(1), 1, DenseBackboneConfig(2, ((1, 2), (1, 2)), 0.5))
    x = _data(1, (1, 1, 8, 8), "unit")
    return lambda: _project(1, wrap(net(x).tensor)), net.parameters() + [x]


def case_unet(wrap):
    net = UNetBackbone(SplitMix64(2), 1, UNetBackboneConfig(depth=1, base_channels=2))
    x = _data(2, (1, 1, 4, 4), "unit")
    return lambda: _project(2, wrap(net(x).tensor)), net.parameters() + [x]


def case_spatial(wrap):
    sa = SpatialAttention(SplitMix64(3), 3)
    x = _data(3, (2, 3, 4, 4))
    return lambda: _project(3, wrap(sa(x)[2])), sa.parameters() + [x]


def case_mha(wrap):
    attn = MultiHeadAttention(SplitMix64(4), 4, 2)
    x = _data(4, (2, 3, 4))
    return lambda: _project(4, wrap(attn(x)[0])), attn.parameters() + [x]


def case_se(wrap):
    se = SqueezeExcitation(SplitMix64(5), 6, 2)
    x = _data(5, (3, 6))
    return lambda: _project(5, wrap(se(x)[0])), se.parameters() + [x]


def case_trad(wrap):
    path = TraditionalPath(SplitMix64(13), 6, 4, d_token=4, heads=2)
    f = _data(13, (2, 6))
    return lambda: _project(13, wrap(path(f)[0])), path.parameters() + [f]


def case_scan(wrap):
    rng = np.random.default_rng(6)
    args = [Parameter(rng.normal(size=(2, 6, 3))), Parameter(rng.uniform(0.05, 1.0, size=(2, 6, 3))),
            Parameter(-rng.uniform(0.5, 2.0, size=(3, 4))), Parameter(rng.normal(size=(2, 6, 4))),
            Parameter(rng.normal(size=(2, 6, 4))), Parameter(rng.normal(size=3))]
    return lambda: _project(6, wrap(scan_kernel(*args))), args


def case_mamba(wrap):
    block = MambaBlock(SplitMix64(7), 3, 4, 2)
    x = _data(7, (2, 5, 3))

    def loss():
        yf, _ = block(x, "forward")
        yb, _ = block(x, "backward")
        return _project(7, wrap(yf + yb))

    return loss, block.parameters() + [x]


def case_gru(wrap):
    cell = GRUCell(SplitMix64(8), 3, 4)
    x, h = _data(8, (2, 3)), _data(9, (2, 4))
    return lambda: _project(8, wrap(gru_cell(x, h, cell))), cell.parameters() + [x, h]


def case_naf(wrap):
    block = NafBlock(SplitMix64(9), 3, 4, NafConfig(k_naf=3, n_primitives=3, d_state=8, d_ctrl=4))
    V = _data(10, (2, 3, 4))
    return lambda: _project(9, wrap(block(V)[0])), block.parameters() + [V]


def tiny_model_config():
    from .pipeline.config import ModelConfig
    return ModelConfig(
        num_classes=3, d_model_fusion=8, image_size=(8, 8), seed=11, spatial_kernel=3, cma_heads=2,
        trad_d_token=4, trad_heads=2,
        dense=DenseBackboneConfig(2, ((1, 2), (1, 2)), 0.5), unet=UNetBackboneConfig(depth=1, base_channels=2),
        vim=VimConfig(patch=1, d_mamba=4, d_inner=4, d_state=2, layers=1),
        naf=NafConfig(k_naf=2, n_primitives=2, d_state=8, d_ctrl=4))


def case_model(wrap, fusion_mode: str = "full"):
    from .pipeline.model import EVMFusion, cross_entropy, raw_features
    cfg = replace(tiny_model_config(), fusion_mode=fusion_mode)
    model = EVMFusion(cfg)
    images = np.random.default_rng(12).uniform(size=(2, 1, 8, 8))
    raw = raw_features(images, cfg)
    x = Parameter(images)
    labels = np.array([0, 2])
    return lambda: cross_entropy(wrap(model(x, raw)[0]), labels), model.parameters() + [x]


CASES: dict[str, tuple[Callable, float]] = {
    "dense_backbone": (case_dense, BLOCK_THRESHOLD),
    "unet_backbone": (case_unet, BLOCK_THRESHOLD),
    "spatial_attention": (case_spatial, BLOCK_THRESHOLD),
    "mha": (case_mha, BLOCK_THRESHOLD),
    "se": (case_se, BLOCK_THRESHOLD),
    "trad_path": (case_trad, BLOCK_THRESHOLD),
    "selective_scan": (case_scan, BLOCK_THRESHOLD),
    "mamba_block": (case_mamba, BLOCK_THRESHOLD),
    "gru": (case_gru, BLOCK_THRESHOLD),
    "naf": (case_naf, BLOCK_THRESHOLD),
    "full_model": (case_model, MODEL_THRESHOLD),
}


def run_case(name: str, corrupt: bool = False, factor: float = 1.5, max_coords: Optional[int] = 24) -> CheckResult:
    build, threshold = CASES[name]
    wrap = (lambda t: ops.corrupt_gradient(t, factor)) if corrupt else (lambda t: t)
    start = time.perf_counter()
    with using(precision="float64", check_finite=True, grad_enabled=True):
        loss, params = build(wrap)
        worst = grad_check(loss, params, max_coords=max_coords)
    return CheckResult(name, worst, threshold, time.perf_counter() - start)


def run_suite(blocks=None, corrupt: Optional[str] = None, max_coords: Optional[int] = 24) -> list:
    names = list(CASES) if blocks is None else list(blocks)
    unknown = [n for n in names + ([corrupt] if corrupt else []) if n not in CASES]
    if unknown:
        raise KeyError(f"unknown blocks {unknown}; valid: {list(CASES)}")
    return [run_case(n, corrupt=(n == corrupt), max_coords=max_coords) for n in names]
