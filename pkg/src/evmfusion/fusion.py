"""Two-stage fusion of the per-path vectors.

Stage A lets the path vectors attend to one another (cross-modal attention,
residual, LayerNorm). Stage B refines a fused state for K steps: a GRU
controller watches the state and emits softmax mixing weights over a bank of
small perceptrons ("primitives") evaluated once on the flattened input.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attention import MultiHeadAttention
from .engine import GRUCell, LayerNorm, Linear, Module, SplitMix64, Tensor, make_op, ops

PATH_ORDER = ("dense", "unet", "trad")


@dataclass
class PathVectors:
    entries: list          # [(path_id, Tensor (B, d))] in PATH_ORDER

    def __post_init__(self):
        if not 1 <= len(self.entries) <= 3:
            raise ValueError("between one and three path vectors are required")
        ids = [pid for pid, _ in self.entries]
        if ids != [p for p in PATH_ORDER if p in ids] or len(set(ids)) != len(ids):
            raise ValueError(f"path order must follow {PATH_ORDER}, got {ids}")
        widths = {vec.shape[-1] for _, vec in self.entries}
        if len(widths) != 1:
            raise ValueError(f"path vectors differ in width: {sorted(widths)}")

    @property
    def ids(self) -> list:
        return [pid for pid, _ in self.entries]

    def stacked(self) -> Tensor:
        """(B, N_paths, d)."""
        return ops.stack([ops.as_tensor(vec) for _, vec in self.entries], axis=1)


@dataclass
class ContextualMatrix:
    values: Tensor          # (B, N_paths, d)
    weights: Optional[Tensor] = None   # (B, N_paths, N_paths); None when Stage A was skipped


def cross_modal_encode(V_in, attn: MultiHeadAttention, norm: LayerNorm) -> ContextualMatrix:
    V = V_in.stacked() if isinstance(V_in, PathVectors) else ops.as_tensor(V_in)
    attended, weights = attn(V)
    return ContextualMatrix(norm(V + attended), weights)


def sorted_sum(a, axis: int) -> Tensor:
    """Sum along ``axis`` after sorting the terms, so the result depends only
    on the multiset of terms and not on their order."""
    a = ops.as_tensor(a)
    axis = axis % a.ndim
    out = np.sort(a.data, axis=axis).sum(axis=axis)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return make_op(out, (a,), backward, "sorted_sum")


def mixing_softmax(z) -> Tensor:
    z = ops.as_tensor(z)
    e = ops.exp(z - z.data.max(axis=-1, keepdims=True))
    return e / ops.reshape(sorted_sum(e, -1), z.shape[:-1] + (1,))


@dataclass(frozen=True)
class NafConfig:
    k_naf: int = 4
    n_primitives: int = 4
    d_state: int = 64
    d_ctrl: int = 32
    hidden: Optional[int] = None   # primitive hidden width, defaults to d_state

    def __post_init__(self):
        if self.k_naf < 0 or self.n_primitives < 1 or self.d_state < 1 or self.d_ctrl < 1:
            raise ValueError("need k_naf >= 0 and n_primitives, d_state, d_ctrl >= 1")

    @property
    def hidden_dim(self) -> int:
        return self.hidden or self.d_state


@dataclass
class FusionState:
    s_fused: Tensor                 # (B, d_state)
    h_ctrl: Tensor                  # (B, d_ctrl)
    alpha_trace: list = field(default_factory=list)   # K tensors (B, N_prim)

    def trace_array(self) -> np.ndarray:
        """(B, K, N_prim) copy of the recorded mixing weights."""
        if not self.alpha_trace:
            return np.zeros((self.s_fused.shape[0], 0, 0))
        return np.stack([a.data for a in self.alpha_trace], axis=1)


class Primitive(Module):
    def __init__(self, rng: SplitMix64, d_in: int, hidden: int, d_out: int):
        self.l1 = Linear(rng, d_in, hidden)
        self.l2 = Linear(rng, hidden, d_out)

    def forward(self, x):
        return self.l2(ops.relu(self.l1(x)))


class PrimitiveBank(Module):
    def __init__(self, rng: SplitMix64, n: int, d_in: int, hidden: int, d_out: int):
        self.d_in = d_in
        self.primitives = [Primitive(rng, d_in, hidden, d_out) for _ in range(n)]

    def forward(self, v_cat) -> list:
        if v_cat.shape[-1] != self.d_in:
            raise ValueError(f"primitive bank expects width {self.d_in}, got {v_cat.shape[-1]}")
        return [p(v_cat) for p in self.primitives]


class NafBlock(Module):
    def __init__(self, rng: SplitMix64, n_paths: int, d_model: int, config: NafConfig = NafConfig()):
        self.config = config
        self.n_paths, self.d_model = n_paths, d_model
        d_cat = n_paths * d_model
        self.linear_in = Linear(rng, d_cat, config.d_state)
        self.bank = PrimitiveBank(rng, config.n_primitives, d_cat, config.hidden_dim, config.d_state)
        self.controller = GRUCell(rng, config.d_state, config.d_ctrl)
        self.mix = Linear(rng, config.d_ctrl, config.n_primitives)
        self.norm = LayerNorm(config.d_state)
        self.linear_out = Linear(rng, config.d_state, d_model)

    def flatten(self, V) -> Tensor:
        values = V.values if isinstance(V, ContextualMatrix) else ops.as_tensor(V)
        B = values.shape[0]
        return values.reshape(B, values.shape[1] * values.shape[2])

    def init_state(self, V) -> FusionState:
        v_cat = self.flatten(V)
        B = v_cat.shape[0]
        return FusionState(self.linear_in(v_cat), ops.as_tensor(np.zeros((B, self.config.d_ctrl))))

    def precompute(self, V) -> list:
        return self.bank(self.flatten(V))

    def step(self, state: FusionState, primitives: list) -> FusionState:
        if not primitives:
            raise ValueError("naf_step needs at least one primitive output")
        h = self.controller(state.s_fused, state.h_ctrl)
        alpha = mixing_softmax(self.mix(h))                          # (B, N_prim)
        P = ops.stack(primitives, axis=1)                            # (B, N_prim, d_state)
        s_mix = sorted_sum(ops.reshape(alpha, alpha.shape + (1,)) * P, axis=1)
        return FusionState(self.norm(state.s_fused + s_mix), h, state.alpha_trace + [alpha])

    def forward(self, V) -> tuple[Tensor, FusionState]:
        state = self.init_state(V)
        primitives = self.precompute(V)
        for _ in range(self.config.k_naf):
            state = self.step(state, primitives)
        return self.linear_out(state.s_fused), state


def naf_init(V, block: NafBlock) -> FusionState:
    return block.init_state(V)


def naf_precompute_primitives(V, bank: PrimitiveBank) -> list:
    values = V.values if isinstance(V, ContextualMatrix) else ops.as_tensor(V)
    return bank(values.reshape(values.shape[0], values.shape[1] * values.shape[2]))


def naf_step(state: FusionState, primitives: list, block: NafBlock) -> FusionState:
    return block.step(state, primitives)


def naf_fuse(V, block: NafBlock) -> tuple[Tensor, np.ndarray]:
    v, state = block(V)
    return v, state.trace_array()
