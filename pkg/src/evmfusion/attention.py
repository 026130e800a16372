"""Spatial attention, multi-head attention and squeeze-and-excitation.

Also hosts the traditional-feature path, which runs MHA then SE over the
handcrafted descriptor vector and projects it to the fusion width.
"""
from __future__ import annotations

import math

import numpy as np

from .engine import Linear, Module, SplitMix64, Tensor, ops
from .engine.nn import init_uniform


class SpatialAttention(Module):
    """M = σ(conv_k([mean_c F; max_c F])); attended = F ⊙ M; v = GAP(attended)."""

    def __init__(self, rng: SplitMix64, k: int = 7):
        if k % 2 == 0:
            raise ValueError("spatial attention kernel must be odd")
        self.k = k
        self.weight = init_uniform(rng, (1, 2, k, k), 2 * k * k)
        self.bias = init_uniform(rng, (1,), 2 * k * k)

    def forward(self, fmap) -> tuple[Tensor, Tensor, Tensor]:
        fmap = ops.as_tensor(fmap)
        pooled = ops.concat([ops.mean(fmap, axis=1, keepdims=True), ops.max(fmap, axis=1, keepdims=True)], axis=1)
        M = ops.sigmoid(ops.conv2d(pooled, self.weight, self.bias, padding=(self.k - 1) // 2))
        attended = fmap * M
        v = ops.mean(attended, axis=(2, 3))
        return M, attended, v


def spatial_attention(fmap, params: SpatialAttention):
    return params(fmap)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over (B, N, d) inputs with Q/K/V/O projections."""

    def __init__(self, rng: SplitMix64, d_model: int, heads: int):
        if heads < 1 or d_model % heads:
            raise ValueError(f"d_model {d_model} is not divisible by heads {heads}")
        self.d_model, self.heads = d_model, heads
        self.d_head = d_model // heads
        self.q_proj = Linear(rng, d_model, d_model)
        self.k_proj = Linear(rng, d_model, d_model)
        self.v_proj = Linear(rng, d_model, d_model)
        self.o_proj = Linear(rng, d_model, d_model)

    def _split(self, x):
        B, N, _ = x.shape
        return x.reshape(B, N, self.heads, self.d_head).transpose(0, 2, 1, 3)

    def forward(self, q, k=None, v=None) -> tuple[Tensor, Tensor]:
        """Returns (out (B, Nq, d), head-averaged weights (B, Nq, Nk))."""
        q = ops.as_tensor(q)
        k = q if k is None else ops.as_tensor(k)
        v = k if v is None else ops.as_tensor(v)
        if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
            raise ValueError("mha expects (B, N, d) inputs")
        if q.shape[-1] != self.d_model or k.shape[-1] != self.d_model or v.shape[-1] != self.d_model:
            raise ValueError(f"mha width {self.d_model} does not match inputs {q.shape}, {k.shape}, {v.shape}")
        if k.shape[1] != v.shape[1]:
            raise ValueError("keys and values must have the same token count")
        Q, K, V = self._split(self.q_proj(q)), self._split(self.k_proj(k)), self._split(self.v_proj(v))
        scores = (Q @ K.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.d_head))
        weights = ops.softmax(scores, axis=-1)          # (B, h, Nq, Nk)
        ctx = (weights @ V).transpose(0, 2, 1, 3)
        B, Nq = q.shape[0], q.shape[1]
        out = self.o_proj(ctx.reshape(B, Nq, self.d_model))
        return out, ops.mean(weights, axis=1)


def mha(q, k, v, params: MultiHeadAttention):
    return params(q, k, v)


class SqueezeExcitation(Module):
    """s = σ(W2 ReLU(W1 f)); out = s ⊙ f. Bias-free, reduction ratio r."""

    def __init__(self, rng: SplitMix64, d: int, r: int = 2):
        if d % r:
            raise ValueError(f"SE width {d} is not divisible by reduction {r}")
        self.d, self.r = d, r
        self.w1 = init_uniform(rng, (d // r, d), d)
        self.w2 = init_uniform(rng, (d, d // r), d // r)

    def forward(self, f) -> tuple[Tensor, Tensor]:
        f = ops.as_tensor(f)
        if f.shape[-1] != self.d:
            raise ValueError(f"SE expects width {self.d}, got {f.shape[-1]}")
        s = ops.sigmoid(ops.linear(ops.relu(ops.linear(f, self.w1)), self.w2))
        return s * f, s


def se_recalibrate(f, params: SqueezeExcitation):
    return params(f)


TRAD_MHA_MODES = ("scalar_tokens", "vector_token")


class TraditionalPath(Module):
    """f_raw → MHA → SE → linear to the fusion width.

    ``scalar_tokens``: every descriptor slot becomes a token
    ``f_i·e_i + b_i`` of width ``d_token``; attention runs across slots and a
    shared readout maps each token back to one scalar.
    ``vector_token``: the whole vector is a single token of width d_raw.
    """

    def __init__(self, rng: SplitMix64, d_raw: int, d_out: int, mode: str = "scalar_tokens",
                 d_token: int = 8, heads: int = 2, se_reduction: int = 2, scale=None):
        if mode not in TRAD_MHA_MODES:
            raise ValueError(f"trad_mha_mode must be one of {TRAD_MHA_MODES}, got {mode!r}")
        self.mode, self.d_raw = mode, d_raw
        self.scale = np.ones(d_raw) if scale is None else np.asarray(scale, dtype=np.float64)
        if mode == "scalar_tokens":
            self.embed_w = init_uniform(rng, (d_raw, d_token), 1)
            self.embed_b = init_uniform(rng, (d_raw, d_token), 1)
            self.mha = MultiHeadAttention(rng, d_token, heads)
            self.readout = Linear(rng, d_token, 1)
        else:
            self.mha = MultiHeadAttention(rng, d_raw, heads)
        self.se = SqueezeExcitation(rng, d_raw, se_reduction)
        self.fc = Linear(rng, d_raw, d_out)

    def forward(self, f_raw) -> tuple[Tensor, Tensor]:
        """(B, d_raw) raw descriptors → (v_T (B, d_out), SE gates (B, d_raw))."""
        f = ops.as_tensor(f_raw) * (1.0 / self.scale)
        B = f.shape[0]
        if self.mode == "scalar_tokens":
            tokens = f.reshape(B, self.d_raw, 1) * self.embed_w + self.embed_b
            attended, _ = self.mha(tokens)
            f_trad = self.readout(attended).reshape(B, self.d_raw)
        else:
            attended, _ = self.mha(f.reshape(B, 1, self.d_raw))
            f_trad = attended.reshape(B, self.d_raw)
        recal, s = self.se(f_trad)
        return self.fc(recal), s
