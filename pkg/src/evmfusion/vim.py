"""Vision Mamba refinement of a backbone feature map.

A feature map is cut into patch tokens, refined by stacked bidirectional
Mamba (S6) blocks, projected, and reshaped back onto the patch grid. The
per-token step sizes (Δ) of the last layer are kept as heatmaps.

Selective scan, per channel ``c`` and step ``k``::

    Δ_k  = softplus(W_Δ x_k + b_Δ)
    Ā_k  = exp(Δ_k A_c)            (zero-order hold, A_c = -exp(A_log_c) < 0)
    B̄_k  = Δ_k B(x_k)              (Euler)
    h_k  = Ā_k ⊙ h_{k-1} + B̄_k x_k,   h_0 = 0
    y_k  = C(x_k) · h_k + D_c x_k
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .engine import Linear, Module, Parameter, SplitMix64, Tensor, make_op, ops
from .engine.nn import init_ones, init_uniform
from .backbones import FeatureMap


@njit(cache=True)
def _scan_forward(u, delta, A, Bm, Cm, D):
    # returns y (B, L, Din) and the state history H (B, L, Din, N)
    Bn, L, Din = u.shape
    N = A.shape[1]
    y = np.empty_like(u)
    H = np.empty((Bn, L, Din, N), dtype=u.dtype)
    for b in range(Bn):
        h = np.zeros((Din, N), dtype=u.dtype)
        for k in range(L):
            for d in range(Din):
                dt = delta[b, k, d]
                du = dt * u[b, k, d]
                acc = 0.0
                for n in range(N):
                    h[d, n] = np.exp(dt * A[d, n]) * h[d, n] + du * Bm[b, k, n]
                    H[b, k, d, n] = h[d, n]
                    acc += Cm[b, k, n] * h[d, n]
                y[b, k, d] = acc + D[d] * u[b, k, d]
    return y, H


@njit(cache=True)
def _scan_backward(gy, u, delta, A, Bm, Cm, D, H):
    # reverse sweep; carry[d, n] = Ā_{k+1} * dL/dh_{k+1}
    Bn, L, Din = u.shape
    N = A.shape[1]
    g_u = np.zeros_like(u)
    g_delta = np.zeros_like(u)
    g_A = np.zeros_like(A)
    g_B = np.zeros_like(Bm)
    g_C = np.zeros_like(Cm)
    g_D = np.zeros_like(D)
    for b in range(Bn):
        carry = np.zeros((Din, N), dtype=u.dtype)
        for k in range(L - 1, -1, -1):
            for d in range(Din):
                dt = delta[b, k, d]
                ud = u[b, k, d]
                g = gy[b, k, d]
                for n in range(N):
                    dA = np.exp(dt * A[d, n])
                    G = g * Cm[b, k, n] + carry[d, n]
                    g_C[b, k, n] += g * H[b, k, d, n]
                    h_prev = H[b, k - 1, d, n] if k > 0 else 0.0
                    g_log = G * h_prev * dA
                    GB = G * Bm[b, k, n]
                    g_delta[b, k, d] += g_log * A[d, n] + GB * ud
                    g_A[d, n] += g_log * dt
                    g_u[b, k, d] += GB * dt
                    g_B[b, k, n] += G * dt * ud
                    carry[d, n] = dA * G
                g_u[b, k, d] += g * D[d]
                g_D[d] += g * ud
    return g_u, g_delta, g_A, g_B, g_C, g_D


def scan_kernel(u, delta, A, Bm, Cm, D) -> Tensor:
    """Fused forward-direction selective scan.

    Shapes: u, delta (B, L, d_inner); A (d_inner, d_state);
    Bm, Cm (B, L, d_state); D (d_inner,). Returns y (B, L, d_inner).
    """
    u, delta, A, Bm, Cm, D = (ops.as_tensor(t) for t in (u, delta, A, Bm, Cm, D))
    arrays = [np.ascontiguousarray(t.data) for t in (u, delta, A, Bm, Cm, D)]
    y, H = _scan_forward(*arrays)

    def backward(gy):
        return _scan_backward(np.ascontiguousarray(gy), *arrays, H)

    return make_op(y, (u, delta, A, Bm, Cm, D), backward, "selective_scan")


@dataclass
class TokenSequence:
    tokens: Tensor          # (B, N_p, d)
    grid: tuple             # (H', W')

    def __post_init__(self):
        if self.grid[0] * self.grid[1] != self.tokens.shape[1]:
            raise ValueError(f"grid {self.grid} does not match {self.tokens.shape[1]} tokens")


@dataclass
class DeltaRecord:
    values: np.ndarray      # (B, N_p, d_inner), strictly positive
    direction: str


class SsmParams(Module):
    """Input-dependent S6 parameters for ``d_inner`` channels."""

    def __init__(self, rng: SplitMix64, d_inner: int, d_state: int):
        self.d_inner, self.d_state = d_inner, d_state
        # A ≈ -(1..d_state) per channel
        self.A_log = Parameter(np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))))
        self.B_proj = init_uniform(rng, (d_state, d_inner), d_inner)
        self.C_proj = init_uniform(rng, (d_state, d_inner), d_inner)
        self.delta_proj = init_uniform(rng, (d_inner, d_inner), d_inner)
        # softplus(bias) spans 0.05..0.5 log-uniformly across channels
        dt = np.exp(np.linspace(np.log(0.05), np.log(0.5), d_inner))
        self.delta_bias = Parameter(np.log(np.expm1(dt)))
        self.D = init_ones((d_inner,))

    def A(self) -> Tensor:
        return -ops.exp(self.A_log)


def selective_scan(x, params: SsmParams, direction: str = "forward") -> tuple[Tensor, DeltaRecord]:
    """Run the S6 scan over axis 1 of ``x`` (B, L, d_inner).

    The backward direction is literally flip → forward scan → flip, and
    the recorded Δ values are returned in original token order.
    """
    x = ops.as_tensor(x)
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    if direction == "backward":
        y, rec = selective_scan(ops.flip(x, 1), params, "forward")
        return ops.flip(y, 1), DeltaRecord(np.flip(rec.values, 1).copy(), "backward")
    delta = ops.softplus(ops.linear(x, params.delta_proj, params.delta_bias))
    Bm = ops.linear(x, params.B_proj)
    Cm = ops.linear(x, params.C_proj)
    y = scan_kernel(x, delta, params.A(), Bm, Cm, params.D)
    return y, DeltaRecord(delta.data.copy(), "forward")


class CausalDepthwiseConv(Module):
    """Per-channel causal 1-D convolution along the token axis (zero history)."""

    def __init__(self, rng: SplitMix64, channels: int, width: int = 3):
        self.width = width
        self.weight = init_uniform(rng, (width, channels), width)
        self.bias = init_uniform(rng, (channels,), width)

    def forward(self, x):
        L = x.shape[1]
        padded = ops.pad_axis(x, 1, self.width - 1)
        out = None
        for j in range(self.width):
            term = padded[:, j:j + L, :] * self.weight[j]
            out = term if out is None else out + term
        return out + self.bias


class MambaBlock(Module):
    """in-proj → (main, gate); main → causal conv → SiLU → S6;
    out = x + out-proj(scan ⊙ SiLU(gate))."""

    def __init__(self, rng: SplitMix64, d_model: int, d_inner: int, d_state: int, conv_width: int = 3):
        self.d_inner = d_inner
        self.in_proj = Linear(rng, d_model, 2 * d_inner, bias=False)
        self.conv = CausalDepthwiseConv(rng, d_inner, conv_width)
        self.ssm = SsmParams(rng, d_inner, d_state)
        self.out_proj = Linear(rng, d_inner, d_model, bias=False)

    def forward(self, x, direction: str = "forward") -> tuple[Tensor, DeltaRecord]:
        x = ops.as_tensor(x)
        if direction == "backward":
            y, rec = self.forward(ops.flip(x, 1), "forward")
            return ops.flip(y, 1), DeltaRecord(np.flip(rec.values, 1).copy(), "backward")
        projected = self.in_proj(x)
        main = projected[:, :, :self.d_inner]
        gate = projected[:, :, self.d_inner:]
        scanned, rec = selective_scan(ops.silu(self.conv(main)), self.ssm, "forward")
        return x + self.out_proj(scanned * ops.silu(gate)), rec


def mamba_block(x: TokenSequence, block: MambaBlock, direction: str = "forward") -> TokenSequence:
    y, _ = block(x.tokens, direction)
    return TokenSequence(y, x.grid)


class BidirectionalUnit(Module):
    """A forward-scan block and a backward-scan block; outputs averaged."""

    def __init__(self, rng: SplitMix64, d_model: int, d_inner: int, d_state: int, conv_width: int = 3):
        self.forward_block = MambaBlock(rng, d_model, d_inner, d_state, conv_width)
        self.backward_block = MambaBlock(rng, d_model, d_inner, d_state, conv_width)

    def forward(self, x):
        yf, rf = self.forward_block(x, "forward")
        yb, rb = self.backward_block(x, "backward")
        return (yf + yb) * 0.5, rf, rb


@dataclass(frozen=True)
class VimConfig:
    patch: int = 1
    d_mamba: int = 16
    d_inner: int = 16
    d_state: int = 8
    layers: int = 2
    conv_width: int = 3

    def __post_init__(self):
        if self.patch < 1 or self.layers < 1 or self.d_state < 1:
            raise ValueError("patch, layers and d_state must be >= 1")


def patchify(fmap, proj: Linear, patch: int) -> TokenSequence:
    """Non-overlapping patch×patch blocks, flattened channel-first
    (index c·p² + i·p + j), projected, in row-major grid order."""
    x = fmap.tensor if isinstance(fmap, FeatureMap) else ops.as_tensor(fmap)
    B, C, H, W = x.shape
    if H % patch or W % patch:
        raise ValueError(f"feature map {H}x{W} not divisible by patch {patch}")
    hp, wp = H // patch, W // patch
    blocks = x.reshape(B, C, hp, patch, wp, patch).transpose(0, 2, 4, 1, 3, 5)
    flat = blocks.reshape(B, hp * wp, C * patch * patch)
    return TokenSequence(proj(flat), (hp, wp))


class VisionMamba(Module):
    def __init__(self, rng: SplitMix64, in_channels: int, d_out: int, config: VimConfig = VimConfig()):
        self.config = config
        self.patch_proj = Linear(rng, in_channels * config.patch ** 2, config.d_mamba)
        self.units = [BidirectionalUnit(rng, config.d_mamba, config.d_inner, config.d_state, config.conv_width)
                      for _ in range(config.layers)]
        self.out_proj = Linear(rng, config.d_mamba, d_out)

    def forward(self, fmap) -> tuple[Tensor, dict]:
        """Returns the refined map (B, d_out, H', W') and Δ-maps
        ``{"forward": (B, H', W'), "backward": (B, H', W')}`` from the last layer."""
        seq = patchify(fmap, self.patch_proj, self.config.patch)
        x = seq.tokens
        for unit in self.units:
            x, rec_f, rec_b = unit(x)
        out = self.out_proj(x)
        B = out.shape[0]
        hp, wp = seq.grid
        out_map = out.transpose(0, 2, 1).reshape(B, out.shape[2], hp, wp)
        delta_maps = {
            "forward": rec_f.values.mean(axis=-1).reshape(B, hp, wp),
            "backward": rec_b.values.mean(axis=-1).reshape(B, hp, wp),
        }
        return out_map, delta_maps


def vim_forward(fmap, module: VisionMamba):
    return module(fmap)
