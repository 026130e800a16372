"""
Ablation table at toy scale
===========================

Trains all eight variants (path subsets and fusion alternatives) on a
small synthetic set and prints the combined metric table. The model is
shrunk to 8x8 inputs so the whole table takes well under a minute; the
numbers say nothing about real data, the point is the harness.
"""

import csv
import tempfile
from pathlib import Path

from evmfusion.cli import main
from evmfusion.gradsuite import tiny_model_config
from evmfusion.pipeline import RunConfig, TrainConfig, dump_text

work = Path(tempfile.mkdtemp(prefix="evmfusion_ablate_"))
main(["make-data", "--out", str(work / "train"), "--per-class", "10", "--size", "8", "--seed", "0"])
main(["make-data", "--out", str(work / "test"), "--per-class", "10", "--size", "8", "--seed", "1"])

cfg = RunConfig(model=tiny_model_config(), train=TrainConfig(epochs=40, batch_size=10, lr=3e-3))
(work / "tiny.txt").write_text(dump_text(cfg))
main(["ablate", "--data", str(work / "train"), "--eval-data", str(work / "test"), "--variants", "all",
      "--out", str(work / "abl"), "--config", str(work / "tiny.txt")])

# %%
with open(work / "abl" / "ablation.csv", newline="") as fh:
    rows = list(csv.DictReader(fh))
print(f"\n{'variant':15s}{'acc':>8s}{'macro F1':>10s}{'w. recall':>11s}")
for r in rows:
    print(f"{r['variant']:15s}{float(r['accuracy']):8.3f}{float(r['macro_f1']):10.3f}{float(r['weighted_recall']):11.3f}")
# weighted recall always equals accuracy: each class recall is weighted by its share of the samples
