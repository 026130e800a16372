"""Model / training configuration and the flat ``key = value`` text format.

Nested configs flatten to dotted keys (``naf.k_naf = 4``). Tuples are
comma separated, dense blocks are written ``layers x growth`` pairs
(``2x8,2x8``) and ``none`` stands for an unset optional value.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..backbones import DenseBackboneConfig, UNetBackboneConfig
from ..features import FeatureConfig
from ..fusion import PATH_ORDER, NafConfig
from ..vim import VimConfig

FUSION_MODES = ("full", "simple_mean", "simple_concat", "naf_only", "cma_only")


@dataclass(frozen=True)
class ModelConfig:
    enabled_paths: tuple = PATH_ORDER
    fusion_mode: str = "full"
    num_classes: int = 3
    class_names: tuple = ()
    d_model_fusion: int = 64
    image_size: tuple = (32, 32)
    in_channels: int = 1
    seed: int = 0
    spatial_kernel: int = 7
    cma_heads: int = 4
    trad_mha_mode: str = "scalar_tokens"
    trad_d_token: int = 8
    trad_heads: int = 2
    se_reduction: int = 2
    dense: DenseBackboneConfig = DenseBackboneConfig()
    unet: UNetBackboneConfig = UNetBackboneConfig()
    vim: VimConfig = VimConfig()
    naf: NafConfig = NafConfig()
    features: FeatureConfig = FeatureConfig()

    def __post_init__(self):
        if not self.enabled_paths:
            raise ValueError("at least one path must be enabled")
        unknown = [p for p in self.enabled_paths if p not in PATH_ORDER]
        if unknown:
            raise ValueError(f"unknown paths {unknown}; valid: {PATH_ORDER}")
        # canonical order keeps parameter layout and CMA labels stable
        object.__setattr__(self, "enabled_paths", tuple(p for p in PATH_ORDER if p in self.enabled_paths))
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.class_names and len(self.class_names) != self.num_classes:
            raise ValueError("class_names length differs from num_classes")
        if self.in_channels not in (1, 3):
            raise ValueError("in_channels must be 1 or 3")

    @property
    def names(self) -> tuple:
        return self.class_names or tuple(f"class_{i}" for i in range(self.num_classes))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    target_accuracy: Optional[float] = None   # stop once train accuracy reaches this

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("need epochs >= 0, batch_size >= 1 and lr > 0")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


# -- flat text format ------------------------------------------------------------

def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join("x".join(str(v) for v in pair) for pair in value)
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _parse(text: str, default, type_hint: str):
    text = text.strip()
    if text.lower() == "none" and "Optional" in type_hint:
        return None
    if isinstance(default, bool) or type_hint == "bool":
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return text.lower() in ("true", "1", "yes")
    if isinstance(default, tuple):
        if not text:
            return ()
        parts = [p.strip() for p in text.split(",")]
        if default and isinstance(default[0], tuple):
            return tuple(tuple(int(v) for v in p.split("x")) for p in parts)
        if default and isinstance(default[0], int):
            return tuple(int(p) for p in parts)
        return tuple(parts)
    if isinstance(default, int) or "int" in type_hint:
        return int(text)
    if isinstance(default, float) or "float" in type_hint:
        return float(text)
    return text


def to_flat(cfg, prefix: str = "") -> dict:
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(to_flat(value, key + "."))
        else:
            out[key] = _format(value)
    return out


def _apply(cfg, items: dict, prefix: str = ""):
    changes = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            nested = {k: v for k, v in items.items() if k.startswith(key + ".")}
            if nested:
                changes[f.name] = _apply(value, nested, key + ".")
        elif key in items:
            try:
                changes[f.name] = _parse(items[key], value, str(f.type))
            except ValueError as exc:
                raise ValueError(f"bad value for {key}: {exc}") from None
    return replace(cfg, **changes) if changes else cfg


def from_flat(items: dict, base: Optional[RunConfig] = None) -> RunConfig:
    base = base or RunConfig()
    known = set(to_flat(base))
    unknown = sorted(set(items) - known)
    if unknown:
        raise KeyError(f"unknown config keys: {', '.join(unknown)}")
    return _apply(base, items)


def parse_text(text: str) -> dict:
    items = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        items[key.strip()] = value.strip()
    return items


def dump_text(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_flat(cfg).items())


def load_config(path) -> RunConfig:
    return from_flat(parse_text(Path(path).read_text()))
