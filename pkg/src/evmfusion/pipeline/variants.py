"""The eight named ablation variants.

Letter codes: D = dense path, U = U-Net path, H = handcrafted path,
F = the full two-stage fusion module.
"""
from __future__ import annotations

from dataclasses import replace

from .config import ModelConfig

_VARIANTS = {
    "DUHF": (("dense", "unet", "trad"), "full"),
    "DHF": (("dense", "trad"), "full"),
    "DU": (("dense", "unet"), "full"),
    "UHF": (("unet", "trad"), "full"),
    "Simple-Mean": (("dense", "unet", "trad"), "simple_mean"),
    "Simple-Concat": (("dense", "unet", "trad"), "simple_concat"),
    "NAF-Only": (("dense", "unet", "trad"), "naf_only"),
    "CMA-Only": (("dense", "unet", "trad"), "cma_only"),
}
VARIANT_NAMES = tuple(_VARIANTS)


class UnknownVariant(ValueError):
    pass


def build_variant(name: str, base: ModelConfig = ModelConfig()) -> ModelConfig:
    if name not in _VARIANTS:
        raise UnknownVariant(f"unknown variant {name!r}; valid names: {', '.join(VARIANT_NAMES)}")
    paths, mode = _VARIANTS[name]
    return replace(base, enabled_paths=paths, fusion_mode=mode)


def parse_variants(text: str) -> list:
    if text.strip().lower() == "all":
        return list(VARIANT_NAMES)
    names = [s.strip() for s in text.split(",") if s.strip()]
    for n in names:
        if n not in _VARIANTS:
            raise UnknownVariant(f"unknown variant {n!r}; valid names: {', '.join(VARIANT_NAMES)}")
    return names
