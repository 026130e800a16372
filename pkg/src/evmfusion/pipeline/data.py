"""Image-folder datasets and the seeded synthetic texture generator.

Layout: ``root/<class>/<image>.pgm|.png``; classes are the subdirectory
names in lexicographic order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..engine import SplitMix64
from ..features import to_grayscale
from .config import ModelConfig
from .model import raw_features

IMAGE_SUFFIXES = (".pgm", ".png")
SYNTHETIC_CLASSES = ("blobs", "checkers", "stripes")


class DataError(Exception):
    pass


@dataclass
class Dataset:
    images: np.ndarray          # (N, C, H, W) in [0, 1]
    labels: np.ndarray          # (N,)
    class_names: tuple
    raw_features: np.ndarray    # (N, d_raw)
    paths: tuple = ()

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        paths = tuple(self.paths[i] for i in idx) if self.paths else ()
        return Dataset(self.images[idx], self.labels[idx], self.class_names, self.raw_features[idx], paths)


def _resize(channel: np.ndarray, size: tuple) -> np.ndarray:
    H, W = size
    if channel.shape == (H, W):
        return channel.astype(np.float64)
    img = Image.fromarray(channel.astype(np.float32), mode="F")
    return np.asarray(img.resize((W, H), Image.BILINEAR), dtype=np.float64)


def load_image(path, config: ModelConfig) -> np.ndarray:
    """Read one image as (C, H, W) in [0, 1]. Grayscale conversion happens
    before the bilinear resize."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif im.mode == "L":
                arr = np.asarray(im, dtype=np.float64) / 255.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: unreadable image ({exc})") from exc
    if config.in_channels == 1:
        channels = [to_grayscale(arr)]
    else:
        rgb = np.repeat(arr[:, :, None], 3, axis=2) if arr.ndim == 2 else arr
        channels = [rgb[:, :, c] for c in range(3)]
    out = np.stack([_resize(c, config.image_size) for c in channels])
    return np.clip(out, 0.0, 1.0)


def list_images(root) -> tuple[tuple, list]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: data directory not found")
    classes = tuple(sorted(p.name for p in root.iterdir() if p.is_dir()))
    if len(classes) < 2:
        raise DataError(f"{root}: need at least two class subdirectories, found {len(classes)}")
    items = []
    for label, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        items.extend((f, label) for f in files)
    if not items:
        raise DataError(f"{root}: no .pgm or .png images found")
    return classes, items


def load_dataset(root, config: ModelConfig) -> Dataset:
    classes, items = list_images(root)
    if config.class_names and tuple(config.class_names) != classes:
        raise DataError(f"{root}: classes {classes} differ from configured {tuple(config.class_names)}")
    if len(classes) != config.num_classes:
        raise DataError(f"{root}: found {len(classes)} classes but the model expects {config.num_classes}")
    images = np.stack([load_image(path, config) for path, _ in items])
    labels = np.array([label for _, label in items], dtype=np.int64)
    return Dataset(images, labels, classes, raw_features(images, config), tuple(str(p) for p, _ in items))


# -- synthetic textures --------------------------------------------------------

def _stripes(rng: SplitMix64, size: int) -> np.ndarray:
    freq = 2.0 + 4.0 * rng.uniform(())
    theta = math.pi * rng.uniform(())
    phase = 2 * math.pi * rng.uniform(())
    y, x = np.mgrid[0:size, 0:size] / size
    return 0.5 + 0.4 * np.sin(2 * math.pi * freq * (x * math.cos(theta) + y * math.sin(theta)) + phase)


def _checkers(rng: SplitMix64, size: int) -> np.ndarray:
    cell = int(rng.integers(3, 7, ()))
    oy, ox = (int(v) for v in rng.integers(0, cell, (2,)))
    y, x = np.mgrid[0:size, 0:size]
    board = ((y + oy) // cell + (x + ox) // cell) % 2
    lo = 0.15 + 0.2 * rng.uniform(())
    return lo + (0.85 - lo) * board


def _blobs(rng: SplitMix64, size: int) -> np.ndarray:
    img = np.full((size, size), 0.2)
    y, x = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(2, 5, ()))):
        cy, cx = rng.uniform((2,), 0, size)
        r = size * (0.08 + 0.12 * rng.uniform(()))
        img += 0.6 * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * r * r))
    return img


_GENERATORS = {"blobs": _blobs, "checkers": _checkers, "stripes": _stripes}


def synthetic_image(kind: str, rng: SplitMix64, size: int = 32, noise: float = 0.05) -> np.ndarray:
    img = _GENERATORS[kind](rng, size) + noise * rng.normal((size, size))
    return np.clip(img, 0.0, 1.0)


def make_synthetic(root, per_class: int = 30, size: int = 32, seed: int = 0, classes=SYNTHETIC_CLASSES) -> Path:
    """Write ``per_class`` 8-bit PGM textures for each class under ``root``."""
    root = Path(root)
    rng = SplitMix64(seed)
    for name in classes:
        if name not in _GENERATORS:
            raise ValueError(f"unknown synthetic class {name!r}; valid: {sorted(_GENERATORS)}")
        (root / name).mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            img = synthetic_image(name, rng, size)
            pixels = np.floor(img * 255.0 + 0.5).astype(np.uint8)
            Image.fromarray(pixels, mode="L").save(root / name / f"{name}_{i:03d}.pgm")
    return root
