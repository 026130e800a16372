"""Global numeric configuration for the tensor engine.

The active :class:`Context` decides the floating dtype of every new tensor,
whether forward results are checked for NaN/Inf, and whether graphs are
recorded. It is only ever changed explicitly, through :func:`using` or
:func:`no_grad`.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, replace

import numpy as np

_DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class Context:
    precision: str = "float64"
    check_finite: bool = True
    grad_enabled: bool = True

    def __post_init__(self):
        if self.precision not in _DTYPES:
            raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {self.precision!r}")

    @property
    def dtype(self):
        return _DTYPES[self.precision]


_current = Context()


def get_context() -> Context:
    return _current


@contextlib.contextmanager
def using(**changes):
    """Temporarily replace fields of the active context.

    >>> with using(precision="float32"):
    ...     ...
    """
    global _current
    previous = _current
    _current = replace(previous, **changes)
    try:
        yield _current
    finally:
        _current = previous


def no_grad():
    return using(grad_enabled=False)


def set_context(ctx: Context) -> None:
    global _current
    _current = ctx
