"""Command-line entry point.

    evmfusion make-data --out DIR
    evmfusion train     --data DIR --variant DUHF --out DIR [--config F] [--set key=value ...]
    evmfusion eval      --checkpoint F --data DIR --out DIR
    evmfusion explain   --checkpoint F --image F --out DIR
    evmfusion ablate    --data DIR --variants all --out DIR [--eval-data DIR]
    evmfusion gradcheck [--blocks a,b] [--corrupt BLOCK]
    evmfusion --dump-config [--config F] [--set key=value ...]

Exit codes: 0 ok, 1 check failure, 2 usage, 3 data, 4 checkpoint.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from . import gradsuite
from .engine import CheckpointError
from .pipeline.config import RunConfig, dump_text, from_flat, parse_text
from .pipeline.data import DataError, list_images, load_dataset, load_image, make_synthetic
from .pipeline.metrics import Metrics
from .pipeline.model import EVMFusion, raw_features
from .pipeline.train import (TrainingDiverged, evaluate, load_model, load_train_state, train)
from .pipeline.variants import VARIANT_NAMES, UnknownVariant, build_variant, parse_variants
from .xai import XaiExportError, export_bundle

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _add_config_args(p, prefix=""):
    p.add_argument("--config", dest=prefix + "config", help="plain-text 'key = value' config file")
    p.add_argument("--set", dest=prefix + "set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; applied after --config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evmfusion", description=__doc__.split("\n\n")[0])
    parser.add_argument("--dump-config", action="store_true",
                        help="print the fully resolved config and exit")
    _add_config_args(parser)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("make-data", help="write the seeded synthetic texture set")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=30)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", required=True, help=f"one of {', '.join(VARIANT_NAMES)}")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true", help="continue from OUT/train_state.evmf")
    _add_config_args(p, "sub_")

    p = sub.add_parser("eval", help="evaluate a checkpoint on an image folder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain", help="export the explanation artifacts for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", dest="sub_config", help="expected config; must match the checkpoint")

    p = sub.add_parser("ablate", help="train and evaluate several variants")
    p.add_argument("--data", required=True)
    p.add_argument("--variants", default="all", help="'all' or a comma-separated list")
    p.add_argument("--out", required=True)
    p.add_argument("--eval-data", help="held-out image folder (default: the training folder)")
    _add_config_args(p, "sub_")

    p = sub.add_parser("gradcheck", help="finite-difference check of every block")
    p.add_argument("--blocks", help=f"comma list from {', '.join(gradsuite.CASES)}")
    p.add_argument("--corrupt", metavar="BLOCK", help="scale one block's gradient (negative control)")
    p.add_argument("--max-coords", type=int, default=24, help="coordinates sampled per tensor; 0 = all")
    return parser


# -- config plumbing -----------------------------------------------------------

def resolve_config(config_path=None, overrides=()) -> RunConfig:
    items = {}
    if config_path:
        try:
            items.update(parse_text(Path(config_path).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
    for ov in overrides:
        if "=" not in ov:
            raise UsageError(f"override {ov!r} is not KEY=VALUE")
        key, value = ov.split("=", 1)
        items[key.strip()] = value.strip()
    try:
        return from_flat(items)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc).strip("'\"")) from exc


def _merged_config(args) -> RunConfig:
    # subcommand flags win over the top-level ones
    path = getattr(args, "sub_config", None) or args.config
    return resolve_config(path, list(args.set) + list(getattr(args, "sub_set", [])))


def _echo_config(out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_text(cfg))


def _with_classes(cfg: RunConfig, data_dir) -> RunConfig:
    """Fill class names from the data folder unless the config fixes them."""
    if cfg.model.class_names:
        return cfg
    classes, _ = list_images(data_dir)
    return replace(cfg, model=replace(cfg.model, class_names=classes, num_classes=len(classes)))


# -- metric tables ---------------------------------------------------------------

def metric_header(class_names) -> list:
    head = ["variant", "n", "accuracy", "macro_precision", "macro_recall", "macro_f1",
            "weighted_precision", "weighted_recall", "weighted_f1"]
    for c in class_names:
        head += [f"{c}_precision", f"{c}_recall", f"{c}_f1", f"{c}_support"]
    K = len(class_names)
    head += [f"cm_{i}_{j}" for i in range(K) for j in range(K)]
    return head


def metric_row(name: str, m: Metrics) -> list:
    row = [name, str(int(m.confusion.sum())), repr(m.accuracy)]
    row += [repr(m.macro[k]) for k in ("precision", "recall", "f1")]
    row += [repr(m.weighted[k]) for k in ("precision", "recall", "f1")]
    for k in range(len(m.support)):
        row += [repr(float(m.precision[k])), repr(float(m.recall[k])), repr(float(m.f1[k])), str(int(m.support[k]))]
    row += [str(int(v)) for v in m.confusion.ravel()]
    return row


def write_metric_table(path, class_names, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(metric_header(class_names))
        w.writerows(rows)


def read_metric_table(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- commands --------------------------------------------------------------------

def cmd_make_data(args) -> int:
    root = make_synthetic(args.out, per_class=args.per_class, size=args.size, seed=args.seed)
    print(f"wrote {args.per_class} images per class under {root}")
    return EXIT_OK


def _train_variant(cfg: RunConfig, variant: str, data, out: Path, resume: bool = False):
    cfg = replace(cfg, model=build_variant(variant, cfg.model))
    _echo_config(out, cfg)
    model = EVMFusion(cfg.model)
    state = None
    if resume and (out / "train_state.evmf").exists():
        state = load_train_state(out / "train_state.evmf", model, cfg.train)
        print(f"[{variant}] resuming after epoch {state.epoch}")
    state, _ = train(model, data, cfg.train, out, state, log=lambda s: print(f"[{variant}] {s}"))
    return model, state


def cmd_train(args) -> int:
    cfg = _with_classes(_merged_config(args), args.data)
    build_variant(args.variant, cfg.model)          # fail fast on a bad name
    data = load_dataset(args.data, cfg.model)
    model, state = _train_variant(cfg, args.variant, data, Path(args.out), args.resume)
    print(f"best train accuracy {state.best_accuracy:.4f} at epoch {state.best_epoch}; model at {args.out}/model.evmf")
    return EXIT_OK


def _load_checkpoint(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc


def cmd_eval(args) -> int:
    model = _load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, model.config)
    metrics, probs = evaluate(model, data)
    out = Path(args.out)
    _echo_config(out, RunConfig(model=model.config))
    write_metric_table(out / "eval.csv", model.config.names, [metric_row(Path(args.checkpoint).stem, metrics)])
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label", "predicted"] + [f"p_{c}" for c in model.config.names])
        for path, y, p in zip(data.paths, data.labels, probs):
            w.writerow([path, int(y), int(p.argmax())] + [repr(float(v)) for v in p])
    print(f"accuracy {metrics.accuracy:.4f}  macro_f1 {metrics.macro['f1']:.4f}  (n={len(data)})")
    return EXIT_OK


def cmd_explain(args) -> int:
    model = _load_checkpoint(args.checkpoint)
    if args.sub_config:
        expected = resolve_config(args.sub_config).model
        if expected != model.config:
            raise CheckpointError(f"{args.checkpoint}: stored config differs from {args.sub_config}")
    image = load_image(args.image, model.config)[None]
    _, bundles = model(image, raw_features(image, model.config), capture=True)
    out = Path(args.out)
    _echo_config(out, RunConfig(model=model.config))
    bundle = bundles[0]
    files = export_bundle(bundle, out)
    print(f"prediction: {bundle.predicted_class} {bundle.prediction[1]:.4f}")
    print(f"wrote {len(bundle.present())} artifacts ({len(files)} files) to {out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    variants = parse_variants(args.variants)
    cfg = _with_classes(_merged_config(args), args.data)
    data = load_dataset(args.data, cfg.model)
    held_out = load_dataset(args.eval_data, cfg.model) if args.eval_data else data
    out = Path(args.out)
    _echo_config(out, cfg)
    rows = []
    for name in variants:
        model, _ = _train_variant(cfg, name, data, out / name)
        metrics, _ = evaluate(model, held_out, cfg.train.batch_size)
        rows.append(metric_row(name, metrics))
        print(f"[{name}] eval accuracy {metrics.accuracy:.4f}")
    write_metric_table(out / "ablation.csv", cfg.model.names, rows)
    print(f"wrote {len(rows)} rows to {out / 'ablation.csv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    blocks = [b.strip() for b in args.blocks.split(",")] if args.blocks else None
    try:
        results = gradsuite.run_suite(blocks, args.corrupt, args.max_coords or None)
    except KeyError as exc:
        raise UsageError(str(exc).strip("'\"")) from exc
    failed = []
    for r in results:
        print(f"{r.block:18s} worst {r.worst:.3e}  threshold {r.threshold:.0e}  {'ok' if r.ok else 'FAIL'}  ({r.seconds:.1f}s)")
        if not r.ok:
            failed.append(r.block)
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {"make-data": cmd_make_data, "train": cmd_train, "eval": cmd_eval, "explain": cmd_explain,
            "ablate": cmd_ablate, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.dump_config:
            sys.stdout.write(dump_text(_merged_config(args)))
            return EXIT_OK
        if not args.command:
            parser.print_usage(sys.stderr)
            print("evmfusion: error: a command is required", file=sys.stderr)
            return EXIT_USAGE
        return COMMANDS[args.command](args)
    except (UsageError, UnknownVariant) as exc:
        print(f"evmfusion: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"evmfusion: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"evmfusion: checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except XaiExportError as exc:
        print(f"evmfusion: export error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"evmfusion: training diverged: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
