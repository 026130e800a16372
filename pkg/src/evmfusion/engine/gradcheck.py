"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .context import get_context, no_grad
from .rng import SplitMix64
from .tensor import Tensor


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
               max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Worst relative error between autodiff and central differences.

    Relative error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    ``max_coords`` caps the coordinates probed per tensor (sampled with a
    seeded generator); by default every coordinate is probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if get_context().precision != "float64":
        raise RuntimeError("grad_check requires the float64 context")
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = SplitMix64(seed)
    worst = 0.0
    with no_grad():
        for pi, (p, a) in enumerate(zip(params, analytic)):
            p.data = np.ascontiguousarray(p.data)
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.permutation(flat.size)[:max_coords])
            for idx in coords:
                orig = flat[idx]
                flat[idx] = orig + step
                up = f().item()
                flat[idx] = orig - step
                down = f().item()
                flat[idx] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    label = getattr(p, "name", "") or f"param[{pi}]"
                    raise FloatingPointError(f"non-finite evaluation at {label}[{tuple(int(i) for i in np.unravel_index(idx, p.shape))}]")
                numeric = (up - down) / (2.0 * step)
                an = a.reshape(-1)[idx]
                err = abs(an - numeric) / max(1.0, abs(an), abs(numeric))
                worst = max(worst, err)
    return worst
