"""Parameters, modules and the common layers built from engine ops."""
from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import ops
from .context import get_context
from .rng import SplitMix64
from .tensor import Tensor

INITIALIZERS = ("uniform-fan-in", "zeros", "ones", "custom-constant")


class Parameter(Tensor):
    """A trainable leaf tensor that records how it was initialised."""

    __slots__ = ("name", "initializer")

    def __init__(self, data, initializer: str = "custom-constant", name: str = ""):
        if initializer not in INITIALIZERS:
            raise ValueError(f"unknown initializer {initializer!r}")
        super().__init__(data, requires_grad=True)
        self.initializer = initializer
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name or '?'}, shape={self.shape}, init={self.initializer})"


def init_uniform(rng: SplitMix64, shape, fan_in: int) -> Parameter:
    bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
    return Parameter(rng.uniform(tuple(shape), -bound, bound), "uniform-fan-in")


def init_zeros(shape) -> Parameter:
    return Parameter(np.zeros(shape), "zeros")


def init_ones(shape) -> Parameter:
    return Parameter(np.ones(shape), "ones")


class Module:
    """Container that discovers parameters and sub-modules by attribute.

    Parameter names are dotted attribute paths (``naf.gru.w_z``), so they
    are unique within a model and stable across runs.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Parameter):
                        yield f"{name}.{i}", item
                    elif isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        params = []
        for name, p in self.named_parameters():
            p.name = name
            params.append(p)
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.astype(get_context().dtype, copy=True)

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, rng: SplitMix64, d_in: int, d_out: int, bias: bool = True):
        self.weight = init_uniform(rng, (d_out, d_in), d_in)
        self.bias = init_uniform(rng, (d_out,), d_in) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng: SplitMix64, c_in: int, c_out: int, k: int, stride: int = 1, padding: Optional[int] = None):
        fan_in = c_in * k * k
        self.weight = init_uniform(rng, (c_out, c_in, k, k), fan_in)
        self.bias = init_uniform(rng, (c_out,), fan_in)
        self.stride = stride
        self.padding = (k - 1) // 2 if padding is None else padding

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = init_ones((d,))
        self.beta = init_zeros((d,))
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class GRUCell(Module):
    """Standard GRU cell on concatenated ``[x; h]`` inputs."""

    def __init__(self, rng: SplitMix64, d_in: int, d_hidden: int):
        fan_in = d_in + d_hidden
        self.d_in, self.d_hidden = d_in, d_hidden
        self.w_z = init_uniform(rng, (d_hidden, fan_in), fan_in)
        self.b_z = init_uniform(rng, (d_hidden,), fan_in)
        self.w_r = init_uniform(rng, (d_hidden, fan_in), fan_in)
        self.b_r = init_uniform(rng, (d_hidden,), fan_in)
        self.w_h = init_uniform(rng, (d_hidden, fan_in), fan_in)
        self.b_h = init_uniform(rng, (d_hidden,), fan_in)

    def forward(self, x, h):
        return gru_cell(x, h, self)


def gru_cell(x, h, params: GRUCell) -> Tensor:
    """z = σ(W_z[x;h]+b_z), r = σ(W_r[x;h]+b_r), h̃ = tanh(W_h[x; r⊙h]+b_h),
    h' = (1-z)⊙h + z⊙h̃."""
    x, h = ops.as_tensor(x), ops.as_tensor(h)
    if x.shape[-1] != params.d_in or h.shape[-1] != params.d_hidden:
        raise ValueError(f"gru_cell: expected x[..., {params.d_in}] and h[..., {params.d_hidden}], "
                         f"got {x.shape} and {h.shape}")
    xh = ops.concat([x, h], axis=-1)
    z = ops.sigmoid(ops.linear(xh, params.w_z, params.b_z))
    r = ops.sigmoid(ops.linear(xh, params.w_r, params.b_r))
    cand = ops.tanh(ops.linear(ops.concat([x, r * h], axis=-1), params.w_h, params.b_h))
    return (1.0 - z) * h + z * cand
