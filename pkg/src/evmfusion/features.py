"""Handcrafted texture descriptors for the traditional feature path.

GLCM (gray-level co-occurrence) statistics and uniform LBP histograms are
concatenated into a raw feature vector whose slot names are deterministic,
so per-slot importance scores can be labelled.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

GLCM_PROPS = ("contrast", "correlation", "energy", "homogeneity")
ANGLES = (0, 45, 90, 135)
# (row, col) step per unit distance; rows grow downwards
_ANGLE_STEPS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}


@dataclass(frozen=True)
class FeatureConfig:
    levels: int = 16
    distances: tuple = (1,)
    angles: tuple = ANGLES
    symmetric: bool = True
    lbp_points: int = 8
    lbp_radius: float = 1.0
    lbp_mode: str = "uniform"

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if not self.distances or any(d < 1 for d in self.distances):
            raise ValueError("distances must be >= 1")
        bad = [a for a in self.angles if a not in _ANGLE_STEPS]
        if bad or not self.angles:
            raise ValueError(f"angles must be drawn from {ANGLES}, got {self.angles}")
        if self.lbp_points < 4:
            raise ValueError("lbp_points must be >= 4")
        if self.lbp_mode not in ("uniform", "full"):
            raise ValueError("lbp_mode must be 'uniform' or 'full'")

    @property
    def lbp_bins(self) -> int:
        return self.lbp_points + 2 if self.lbp_mode == "uniform" else 2 ** self.lbp_points

    @property
    def layout(self) -> list[str]:
        names = [f"glcm_{prop}_d{d}_a{a}" for d in self.distances for a in self.angles for prop in GLCM_PROPS]
        return names + [f"lbp_bin_{i}" for i in range(self.lbp_bins)]

    @property
    def d_raw(self) -> int:
        return len(self.layout)


@dataclass
class RawFeatureVector:
    values: np.ndarray
    layout: list

    def __post_init__(self):
        if len(self.values) != len(self.layout):
            raise ValueError("feature vector length differs from its layout")


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """H×W×C (C ∈ {1, 3}) or H×W image to an H×W array in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return np.clip(image, 0.0, 1.0)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"expected H×W×1 or H×W×3 image, got shape {image.shape}")
    if image.shape[2] == 1:
        return np.clip(image[:, :, 0], 0.0, 1.0)
    # integer weights keep white exactly 1.0
    gray = (299.0 * image[:, :, 0] + 587.0 * image[:, :, 1] + 114.0 * image[:, :, 2]) / 1000.0
    return np.clip(gray, 0.0, 1.0)


def quantize(img: np.ndarray, levels: int) -> np.ndarray:
    return np.minimum(np.floor(img * levels).astype(np.int64), levels - 1)


def glcm_counts(img: np.ndarray, distance: int, angle: int, levels: int, symmetric: bool = True) -> np.ndarray:
    """Integer co-occurrence counts of (p, p + displacement) pairs."""
    q = quantize(np.asarray(img), levels)
    H, W = q.shape
    dr, dc = _ANGLE_STEPS[angle]
    dr, dc = dr * distance, dc * distance
    r0, r1 = max(0, -dr), min(H, H - dr)
    c0, c1 = max(0, -dc), min(W, W - dc)
    if r1 <= r0 or c1 <= c0:
        raise ValueError(f"image {H}x{W} too small for distance {distance} at {angle} degrees")
    src = q[r0:r1, c0:c1].ravel()
    dst = q[r0 + dr:r1 + dr, c0 + dc:c1 + dc].ravel()
    counts = np.bincount(src * levels + dst, minlength=levels * levels).reshape(levels, levels)
    if symmetric:
        counts = counts + counts.T
    return counts


def compute_glcm(img: np.ndarray, distance: int, angle: int, levels: int, symmetric: bool = True) -> np.ndarray:
    counts = glcm_counts(img, distance, angle, levels, symmetric)
    return counts / counts.sum()


def glcm_features(glcm: np.ndarray) -> dict[str, float]:
    p = np.asarray(glcm, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-9 or np.any(p < 0):
        raise ValueError("glcm must be non-negative and sum to 1")
    n = p.shape[0]
    i, j = np.indices((n, n))
    mu_i, mu_j = (i * p).sum(), (j * p).sum()
    sd_i = math.sqrt(((i - mu_i) ** 2 * p).sum())
    sd_j = math.sqrt(((j - mu_j) ** 2 * p).sum())
    if sd_i * sd_j < 1e-12:
        correlation = 0.0
    else:
        correlation = float(((i - mu_i) * (j - mu_j) * p).sum() / (sd_i * sd_j))
    return {
        "contrast": float(((i - j) ** 2 * p).sum()),
        "correlation": correlation,
        "energy": float((p * p).sum()),
        "homogeneity": float((p / (1.0 + np.abs(i - j))).sum()),
    }


def lbp_offsets(points: int, radius: float) -> list[tuple[float, float]]:
    """(row, col) sample offsets at angles 2πk/P; rounded so axis points are exact."""
    out = []
    for k in range(points):
        theta = 2.0 * math.pi * k / points
        out.append((round(-radius * math.sin(theta), 10) + 0.0, round(radius * math.cos(theta), 10) + 0.0))
    return out


def compute_lbp(img: np.ndarray, points: int = 8, radius: float = 1.0) -> np.ndarray:
    """LBP codes for interior pixels; bit k set iff neighbour k >= centre."""
    img = np.asarray(img, dtype=np.float64)
    if points < 4:
        raise ValueError("points must be >= 4")
    m = int(math.ceil(radius))
    H, W = img.shape
    if H < 2 * m + 1 or W < 2 * m + 1:
        raise ValueError(f"image {H}x{W} smaller than 2R+1 = {2 * m + 1} per side")
    centre = img[m:H - m, m:W - m]
    rows = np.arange(m, H - m)[:, None]
    cols = np.arange(m, W - m)[None, :]
    codes = np.zeros(centre.shape, dtype=np.int64)
    for k, (dy, dx) in enumerate(lbp_offsets(points, radius)):
        y, x = rows + dy, cols + dx
        y0, x0 = np.floor(y).astype(np.int64), np.floor(x).astype(np.int64)
        fy, fx = y - y0, x - x0
        y1, x1 = np.minimum(y0 + 1, H - 1), np.minimum(x0 + 1, W - 1)
        # lerp form: exact when the four corners are equal
        top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
        bottom = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
        value = top + fy * (bottom - top)
        codes |= (value >= centre).astype(np.int64) << k
    return codes


def circular_transitions(code: int, points: int) -> int:
    bits = [(code >> k) & 1 for k in range(points)]
    return sum(bits[k] != bits[(k + 1) % points] for k in range(points))


def uniform_bin_table(points: int) -> np.ndarray:
    """Map each code to its uniform-LBP bin: popcount if ≤2 transitions, else P+1."""
    table = np.empty(2 ** points, dtype=np.int64)
    for code in range(2 ** points):
        if circular_transitions(code, points) <= 2:
            table[code] = bin(code).count("1")
        else:
            table[code] = points + 1
    return table


_TABLES: dict[int, np.ndarray] = {}


def lbp_histogram(codes: np.ndarray, points: int = 8, mode: str = "uniform") -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64).ravel()
    if codes.size == 0:
        raise ValueError("empty LBP code image")
    if codes.min() < 0 or codes.max() >= 2 ** points:
        raise ValueError(f"LBP codes must lie in [0, {2 ** points})")
    if mode == "uniform":
        if points not in _TABLES:
            _TABLES[points] = uniform_bin_table(points)
        bins = _TABLES[points][codes]
        hist = np.bincount(bins, minlength=points + 2)
    elif mode == "full":
        hist = np.bincount(codes, minlength=2 ** points)
    else:
        raise ValueError(f"unknown LBP histogram mode {mode!r}")
    return hist / codes.size


def extract_raw_features(img: np.ndarray, config: FeatureConfig = FeatureConfig()) -> RawFeatureVector:
    """GLCM statistics for every (distance, angle), then the LBP histogram."""
    img = np.asarray(img, dtype=np.float64)
    values = []
    for d in config.distances:
        for a in config.angles:
            props = glcm_features(compute_glcm(img, d, a, config.levels, config.symmetric))
            values.extend(props[name] for name in GLCM_PROPS)
    codes = compute_lbp(img, config.lbp_points, config.lbp_radius)
    values.extend(lbp_histogram(codes, config.lbp_points, config.lbp_mode))
    return RawFeatureVector(np.array(values, dtype=np.float64), config.layout)


def feature_scale(config: FeatureConfig) -> np.ndarray:
    """Fixed per-slot divisors bringing every slot to roughly unit range.

    Contrast is bounded by (levels-1)^2; the other statistics and the
    histogram bins already lie in [-1, 1].
    """
    scale = []
    for name in config.layout:
        scale.append(float((config.levels - 1) ** 2) if name.startswith("glcm_contrast") else 1.0)
    return np.array(scale)


def write_features_csv(path, rows: Sequence[np.ndarray], layout: Sequence[str]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(layout)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def read_features_csv(path) -> tuple[list[str], np.ndarray]:
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.array(rows)
