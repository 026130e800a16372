"""Full classifier: up to three feature paths, a fusion stage and a linear head."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..attention import MultiHeadAttention, SpatialAttention, TraditionalPath
from ..backbones import DenseBackbone, UNetBackbone
from ..engine import LayerNorm, Linear, Module, SplitMix64, Tensor, no_grad, ops
from ..features import extract_raw_features, feature_scale, to_grayscale
from ..fusion import NafBlock, PathVectors, cross_modal_encode
from ..vim import VisionMamba
from ..xai import XaiBundle
from .config import ModelConfig


class DeepPath(Module):
    """backbone → Vision Mamba → spatial attention → GAP."""

    def __init__(self, rng: SplitMix64, backbone, config: ModelConfig):
        self.backbone = backbone
        self.vim = VisionMamba(rng, backbone.out_channels, config.d_model_fusion, config.vim)
        self.spatial = SpatialAttention(rng, config.spatial_kernel)

    def forward(self, images):
        fmap = self.backbone(images)
        refined, deltas = self.vim(fmap)
        M, _, v = self.spatial(refined)
        return v, {"delta_fwd": deltas["forward"], "delta_bwd": deltas["backward"], "spatial": M}


def raw_features(images: np.ndarray, config: ModelConfig) -> np.ndarray:
    """(B, C, H, W) images in [0, 1] → (B, d_raw) handcrafted descriptors."""
    images = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=np.float64)
    rows = []
    for img in images:
        gray = to_grayscale(np.moveaxis(img, 0, -1))
        rows.append(extract_raw_features(gray, config.features).values)
    return np.stack(rows)


class EVMFusion(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        rng = SplitMix64(config.seed)
        d = config.d_model_fusion
        paths = config.enabled_paths
        # construction order is fixed so equal seeds give equal weights
        self.dense = DeepPath(rng, DenseBackbone(rng, config.in_channels, config.dense), config) if "dense" in paths else None
        self.unet = DeepPath(rng, UNetBackbone(rng, config.in_channels, config.unet), config) if "unet" in paths else None
        self.trad = None
        if "trad" in paths:
            self.trad = TraditionalPath(rng, config.features.d_raw, d, config.trad_mha_mode, config.trad_d_token,
                                        config.trad_heads, config.se_reduction, feature_scale(config.features))
        n = len(paths)
        mode = config.fusion_mode
        self.cma = self.cma_norm = self.naf = self.concat_proj = None
        if mode in ("full", "cma_only"):
            self.cma = MultiHeadAttention(rng, d, config.cma_heads)
            self.cma_norm = LayerNorm(d)
        if mode in ("full", "naf_only"):
            self.naf = NafBlock(rng, n, d, config.naf)
        if mode == "simple_concat":
            self.concat_proj = Linear(rng, n * d, d)
        self.head = Linear(rng, d, config.num_classes)

    def path_vectors(self, images, raw: Optional[np.ndarray]):
        entries, inter = [], {}
        if self.dense is not None:
            v, inter["dense"] = self.dense(images)
            entries.append(("dense", v))
        if self.unet is not None:
            v, inter["unet"] = self.unet(images)
            entries.append(("unet", v))
        if self.trad is not None:
            if raw is None:
                raw = raw_features(images, self.config)
            v, s = self.trad(raw)
            entries.append(("trad", v))
            inter["se"] = s
        return PathVectors(entries), inter

    def fuse(self, paths: PathVectors):
        """Returns (fused (B, d), W_CMA or None, NAF trace or None)."""
        mode = self.config.fusion_mode
        if mode == "simple_mean":
            return ops.mean(paths.stacked(), axis=1), None, None
        if mode == "simple_concat":
            return self.concat_proj(ops.concat([ops.as_tensor(v) for _, v in paths.entries], axis=-1)), None, None
        if mode == "naf_only":
            v, state = self.naf(paths.stacked())
            return v, None, state.trace_array()
        ctx = cross_modal_encode(paths, self.cma, self.cma_norm)
        if mode == "cma_only":
            return ops.mean(ctx.values, axis=1), ctx.weights, None
        v, state = self.naf(ctx)
        return v, ctx.weights, state.trace_array()

    def forward(self, images, raw_features: Optional[np.ndarray] = None, capture: bool = False):
        """(B, C, H, W) images → logits (B, num_classes), plus one XaiBundle
        per image when ``capture`` is set."""
        images = ops.as_tensor(images)
        H, W = self.config.image_size
        if images.ndim != 4 or images.shape[1] != self.config.in_channels or tuple(images.shape[2:]) != (H, W):
            raise ValueError(f"expected images (B, {self.config.in_channels}, {H}, {W}), got {images.shape}")
        paths, inter = self.path_vectors(images, raw_features)
        fused, weights, trace = self.fuse(paths)
        logits = self.head(fused)
        if not capture:
            return logits, None
        return logits, self._capture(logits, paths.ids, inter, weights, trace)

    def _capture(self, logits, ids, inter, weights, trace) -> list:
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        bundles = []
        for b in range(logits.shape[0]):
            fields = {}
            for path in ("dense", "unet"):
                if path in inter:
                    fields[f"{path}_delta_fwd"] = inter[path]["delta_fwd"][b]
                    fields[f"{path}_delta_bwd"] = inter[path]["delta_bwd"][b]
                    fields[f"{path}_spatial"] = inter[path]["spatial"].data[b, 0]
            if "se" in inter:
                fields["se_scores"] = inter["se"].data[b]
            if weights is not None:
                fields["cma_weights"] = weights.data[b]
            if trace is not None and trace.shape[1]:
                fields["naf_alpha"] = trace[b]
            pred = int(np.argmax(probs[b]))
            bundles.append(XaiBundle.capture(
                fields, path_labels=tuple(ids), slot_names=tuple(self.config.features.layout),
                prediction=(pred, float(probs[b, pred])), class_names=self.config.names))
        return bundles

    def predict(self, images, raw_features=None, batch_size: int = 8) -> np.ndarray:
        """Class probabilities, computed without building a graph."""
        images = np.asarray(images)
        out = []
        with no_grad():
            for i in range(0, len(images), batch_size):
                raw = None if raw_features is None else raw_features[i:i + batch_size]
                logits, _ = self(images[i:i + batch_size], raw)
                z = logits.data - logits.data.max(axis=1, keepdims=True)
                out.append(np.exp(z) / np.exp(z).sum(axis=1, keepdims=True))
        return np.concatenate(out) if out else np.zeros((0, self.config.num_classes))


def cross_entropy(logits, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = ops.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    K = logits.shape[-1]
    if labels.ndim != 1 or len(labels) != logits.shape[0]:
        raise ValueError("labels must be a vector with one entry per logit row")
    if np.any(labels < 0) or np.any(labels >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    logp = ops.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(labels)), labels]
    return -ops.mean(picked)
