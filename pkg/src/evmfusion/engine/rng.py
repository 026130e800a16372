"""SplitMix64 generator: 64-bit state, bit-reproducible across platforms."""
from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based SplitMix64; draws are vectorised over the counter."""

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            out = _mix(z)
        self.state = (self.state + n * int(_GAMMA)) & _MASK
        return out

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape != () else 1
        # top 53 bits -> [0, 1)
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        u = low + (high - low) * u
        return u.reshape(shape) if shape != () else u[0]

    def normal(self, shape=()) -> np.ndarray:
        # Box-Muller on two uniform streams
        n = int(np.prod(shape)) if shape != () else 1
        u1 = 1.0 - self.uniform((n,))
        u2 = self.uniform((n,))
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape) if shape != () else z[0]

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        u = self.uniform(shape if shape != () else (1,))
        out = low + np.floor(u * (high - low)).astype(np.int64)
        return out if shape != () else int(out[0])

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def spawn(self) -> "SplitMix64":
        return SplitMix64(int(self.next_u64(1)[0]))
