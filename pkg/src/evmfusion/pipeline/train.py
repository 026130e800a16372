"""Training / evaluation loops and model checkpoint helpers."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..engine import SplitMix64, checkpoint, using
from .config import ModelConfig, RunConfig, TrainConfig, dump_text, from_flat, parse_text
from .data import Dataset
from .metrics import Metrics, evaluate_predictions
from .model import EVMFusion, cross_entropy
from .optim import Adam

CONFIG_KEY = "__config__"
METRIC_COLUMNS = ("epoch", "loss", "acc", "macro_f1", "weighted_f1")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainState:
    epoch: int
    optimizer: Adam
    rng: SplitMix64
    best_accuracy: float = -1.0
    best_epoch: int = 0


# -- checkpoints ---------------------------------------------------------------

def _text_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def _array_to_text(arr: np.ndarray) -> str:
    return bytes(arr.astype(np.uint8)).decode("utf-8")


def save_model(model: EVMFusion, path) -> None:
    """Parameters plus the model config text, so the file is self-describing."""
    arrays = {CONFIG_KEY: _text_to_array(dump_text(RunConfig(model=model.config)))}
    arrays.update(model.state_dict())
    checkpoint.save(path, arrays)


def load_model(path, config: Optional[ModelConfig] = None) -> EVMFusion:
    """Rebuild a model from a checkpoint. A supplied config must agree with the
    stored parameters, otherwise CheckpointError is raised."""
    arrays = checkpoint.load(path)
    if config is None:
        if CONFIG_KEY not in arrays:
            raise checkpoint.CheckpointError(f"{path}: no embedded config; pass one explicitly")
        config = from_flat(parse_text(_array_to_text(arrays[CONFIG_KEY]))).model
    arrays.pop(CONFIG_KEY, None)
    model = EVMFusion(config)
    try:
        model.load_state_dict(arrays)
    except (KeyError, ValueError) as exc:
        raise checkpoint.CheckpointError(f"{path}: checkpoint does not match the model config ({exc})") from exc
    return model


def save_train_state(path, model: EVMFusion, state: TrainState) -> None:
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    arrays.update(state.optimizer.state_dict())
    s = state.rng.state
    arrays["meta.epoch"] = np.array([float(state.epoch)])
    arrays["meta.rng"] = np.array([float(s >> 32), float(s & 0xFFFFFFFF)])
    arrays["meta.best"] = np.array([state.best_accuracy, float(state.best_epoch)])
    checkpoint.save(path, arrays)


def load_train_state(path, model: EVMFusion, cfg: TrainConfig) -> TrainState:
    arrays = checkpoint.load(path)
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model.")})
    opt = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    opt.load_state_dict(arrays)
    rng = SplitMix64(0)
    hi, lo = arrays["meta.rng"]
    rng.state = (int(hi) << 32) | int(lo)
    best, best_epoch = arrays["meta.best"]
    return TrainState(int(arrays["meta.epoch"][0]), opt, rng, float(best), int(best_epoch))


# -- loops ---------------------------------------------------------------------

def evaluate(model: EVMFusion, data: Dataset, batch_size: int = 8) -> tuple[Metrics, np.ndarray]:
    if len(data.class_names) != model.config.num_classes:
        raise ValueError(f"dataset has {len(data.class_names)} classes, model expects {model.config.num_classes}")
    probs = model.predict(data.images, data.raw_features, batch_size)
    return evaluate_predictions(data.labels, probs.argmax(axis=1), model.config.num_classes), probs


def _first_bad_gradient(model: EVMFusion) -> str:
    for name, p in model.named_parameters():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            return name
    return "none"


def write_metric_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in rows:
            w.writerow([str(row[0])] + [repr(float(v)) for v in row[1:]])


def train(model: EVMFusion, data: Dataset, cfg: TrainConfig, out_dir=None,
          state: Optional[TrainState] = None, log=None) -> tuple[TrainState, list]:
    """Mini-batch Adam on cross-entropy. Returns the final state and the
    metric rows (epoch, loss, acc, macro_f1, weighted_f1)."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if state is None:
        opt = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        state = TrainState(0, opt, SplitMix64(cfg.seed))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    rows = []
    n = len(data)
    while state.epoch < cfg.epochs:
        epoch = state.epoch + 1
        order = state.rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            state.optimizer.zero_grad()
            with using(check_finite=False):
                logits, _ = model(data.images[idx], data.raw_features[idx])
                loss = cross_entropy(logits, data.labels[idx])
                loss.backward()
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}; "
                                       f"first non-finite gradient: {_first_bad_gradient(model)}")
            bad = _first_bad_gradient(model)
            if bad != "none":
                raise TrainingDiverged(f"non-finite gradient in {bad} at epoch {epoch}, batch {b}")
            state.optimizer.step()
            total += loss.item() * len(idx)
        metrics, _ = evaluate(model, data, cfg.batch_size)
        row = (epoch, total / n, metrics.accuracy, metrics.macro["f1"], metrics.weighted["f1"])
        rows.append(row)
        state.epoch = epoch
        if metrics.accuracy > state.best_accuracy:
            state.best_accuracy, state.best_epoch = metrics.accuracy, epoch
        if log is not None:
            log(f"epoch {epoch:3d}  loss {row[1]:.4f}  acc {row[2]:.4f}  macro_f1 {row[3]:.4f}")
        if out is not None:
            save_model(model, out / "checkpoints" / f"epoch_{epoch:03d}.evmf")
            save_train_state(out / "train_state.evmf", model, state)
            write_metric_log(out / "metrics.csv", _merge_log(out / "metrics.csv", rows))
        if cfg.target_accuracy is not None and metrics.accuracy >= cfg.target_accuracy:
            break
    if out is not None:
        save_model(model, out / "model.evmf")
    return state, rows


def _merge_log(path: Path, rows: list) -> list:
    """Rows already on disk (from a resumed run) followed by this run's rows."""
    previous = []
    first_new = rows[0][0]
    if path.exists() and first_new > 1:
        with open(path, newline="") as fh:
            for rec in list(csv.reader(fh))[1:]:
                if int(rec[0]) < first_new:
                    previous.append((int(rec[0]),) + tuple(float(v) for v in rec[1:]))
    return previous + rows
