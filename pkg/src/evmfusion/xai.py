"""Capture and export of the per-image explanation artifacts.

Heatmaps (Δ-maps, spatial attention maps and the cross-modal weight matrix)
are written both as 8-bit P5 PGM images and as raw CSV. The SE gates are
written as named bar data. ``manifest.txt`` lists every file.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

# the eight visual artifacts in display order
VISUAL_ARTIFACTS = (
    "dense_delta_fwd", "dense_delta_bwd", "unet_delta_fwd", "unet_delta_bwd",
    "dense_spatial", "unet_spatial", "se_scores", "cma_weights",
)
HEATMAPS = ("dense_delta_fwd", "dense_delta_bwd", "unet_delta_fwd", "unet_delta_bwd",
            "dense_spatial", "unet_spatial", "cma_weights")


class XaiExportError(OSError):
    pass


@dataclass
class XaiBundle:
    dense_delta_fwd: Optional[np.ndarray] = None
    dense_delta_bwd: Optional[np.ndarray] = None
    unet_delta_fwd: Optional[np.ndarray] = None
    unet_delta_bwd: Optional[np.ndarray] = None
    dense_spatial: Optional[np.ndarray] = None
    unet_spatial: Optional[np.ndarray] = None
    se_scores: Optional[np.ndarray] = None
    cma_weights: Optional[np.ndarray] = None
    naf_alpha: Optional[np.ndarray] = None      # (K, N_prim) mixing-weight trace
    path_labels: tuple = ()
    slot_names: tuple = ()
    class_names: tuple = ()
    prediction: tuple = field(default=(0, 0.0))

    @classmethod
    def capture(cls, arrays: dict, **meta) -> "XaiBundle":
        """Build a bundle from forward intermediates; arrays are copied."""
        copies = {k: np.array(v, dtype=np.float64, copy=True) for k, v in arrays.items() if v is not None}
        return cls(**copies, **meta)

    def present(self) -> list:
        return [name for name in VISUAL_ARTIFACTS if getattr(self, name) is not None]

    @property
    def predicted_class(self) -> str:
        idx = self.prediction[0]
        return self.class_names[idx] if self.class_names else str(idx)


def render_heatmap(matrix) -> np.ndarray:
    """Min-max normalise to 0..255 with round-half-up; constant maps → zeros."""
    x = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot render a heatmap with non-finite values")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros(x.shape, dtype=np.uint8)
    scaled = (x - lo) / (hi - lo) * 255.0
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    H, W = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (W, H) + image.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) > 255:
        raise ValueError(f"{path}: not an 8-bit P5 PGM")
    W, H = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + W * H], dtype=np.uint8)
    if pixels.size != W * H:
        raise ValueError(f"{path}: truncated PGM")
    return pixels.reshape(H, W).copy()


def write_matrix_csv(path, matrix, row_labels=None, col_labels=None) -> None:
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if col_labels is not None:
            w.writerow([""] + list(col_labels))
        for i, row in enumerate(m):
            cells = [repr(float(v)) for v in row]
            w.writerow(([row_labels[i]] if row_labels is not None else []) + cells)


def read_matrix_csv(path, labelled: bool = False) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if labelled:
        rows = [r[1:] for r in rows[1:]]
    return np.array([[float(v) for v in r] for r in rows])


def write_named_scores(path, names, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "score"])
        for name, s in zip(names, scores):
            w.writerow([name, repr(float(s))])


def read_named_scores(path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [r[0] for r in rows], np.array([float(r[1]) for r in rows])


def export_bundle(bundle: XaiBundle, directory) -> dict:
    """Write every present artifact under ``directory``; returns {name: relative path}."""
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise XaiExportError(f"{out}: {exc}") from exc
    files: dict = {}

    def guarded(path, fn, *args, **kwargs):
        try:
            fn(path, *args, **kwargs)
        except OSError as exc:
            raise XaiExportError(f"{path}: {exc}") from exc

    for name in HEATMAPS:
        m = getattr(bundle, name)
        if m is None:
            continue
        guarded(out / f"{name}.pgm", write_pgm, render_heatmap(m))
        if name == "cma_weights":
            labels = list(bundle.path_labels)
            guarded(out / f"{name}.csv", write_matrix_csv, m, row_labels=labels, col_labels=labels)
        else:
            guarded(out / f"{name}.csv", write_matrix_csv, m)
        files[name] = f"{name}.pgm"
        files[f"{name}_csv"] = f"{name}.csv"
    if bundle.se_scores is not None:
        names = bundle.slot_names or tuple(f"slot_{i}" for i in range(len(bundle.se_scores)))
        guarded(out / "se_scores.csv", write_named_scores, names, bundle.se_scores)
        files["se_scores"] = "se_scores.csv"
    if bundle.naf_alpha is not None:
        cols = [f"primitive_{j}" for j in range(bundle.naf_alpha.shape[1])]
        rows = [f"step_{k + 1}" for k in range(bundle.naf_alpha.shape[0])]
        guarded(out / "naf_alpha.csv", write_matrix_csv, bundle.naf_alpha, row_labels=rows, col_labels=cols)
        files["naf_alpha"] = "naf_alpha.csv"
    lines = [f"{k}: {v}" for k, v in files.items()]
    lines.append(f"prediction: {bundle.predicted_class} {bundle.prediction[1]!r}")
    guarded(out / "manifest.txt", Path.write_text, "\n".join(lines) + "\n")
    return files


def read_manifest(directory) -> tuple[dict, tuple]:
    entries, prediction = {}, None
    for line in (Path(directory) / "manifest.txt").read_text().splitlines():
        key, value = line.split(": ", 1)
        if key == "prediction":
            cls, prob = value.rsplit(" ", 1)
            prediction = (cls, float(prob))
        else:
            entries[key] = value
    return entries, prediction


def load_bundle(directory) -> XaiBundle:
    """Re-import the raw CSVs written by :func:`export_bundle`."""
    directory = Path(directory)
    entries, prediction = read_manifest(directory)
    arrays, meta = {}, {}
    for name in HEATMAPS:
        key = f"{name}_csv"
        if key in entries:
            labelled = name == "cma_weights"
            arrays[name] = read_matrix_csv(directory / entries[key], labelled=labelled)
            if labelled:
                with open(directory / entries[key], newline="") as fh:
                    meta["path_labels"] = tuple(next(csv.reader(fh))[1:])
    if "se_scores" in entries:
        names, scores = read_named_scores(directory / entries["se_scores"])
        arrays["se_scores"], meta["slot_names"] = scores, tuple(names)
    if "naf_alpha" in entries:
        arrays["naf_alpha"] = read_matrix_csv(directory / entries["naf_alpha"], labelled=True)
    bundle = XaiBundle(**arrays, **meta)
    bundle.prediction = (prediction[0], prediction[1]) if prediction else (0, 0.0)
    return bundle
