"""
Handcrafted texture descriptors
===============================

Each image gets 16 GLCM statistics (contrast, correlation, energy and
homogeneity at four angles) and a 10-bin uniform LBP histogram. The three
synthetic classes separate well on a few of them.
"""

import numpy as np

from evmfusion.engine import SplitMix64
from evmfusion.features import FeatureConfig, extract_raw_features
from evmfusion.pipeline.data import synthetic_image

cfg = FeatureConfig()
rng = SplitMix64(7)
rows = {}
for kind in ("blobs", "checkers", "stripes"):
    vecs = [extract_raw_features(synthetic_image(kind, rng, 32), cfg).values for _ in range(10)]
    rows[kind] = np.mean(vecs, axis=0)

show = ["glcm_contrast_d1_a0", "glcm_energy_d1_a0", "glcm_homogeneity_d1_a90",
        "glcm_correlation_d1_a45", "lbp_bin_0", "lbp_bin_4", "lbp_bin_9"]
idx = [cfg.layout.index(name) for name in show]
print(f"{'feature':26s}" + "".join(f"{k:>10s}" for k in rows))
for name, i in zip(show, idx):
    print(f"{name:26s}" + "".join(f"{rows[k][i]:10.3f}" for k in rows))

# checkers: hard cell edges give by far the highest contrast
# stripes: most pixels sit on a slope, so half the neighbours are brighter (LBP bin 4)
# blobs: smooth, so contrast is low and neighbouring pixels are strongly correlated

# %%
# A flat image is the degenerate case: zero contrast, energy one, and every
# LBP code lands in the same bin.
flat = extract_raw_features(np.full((8, 8), 0.5), cfg)
v = dict(zip(flat.layout, flat.values))
print("\nflat image: contrast", v["glcm_contrast_d1_a0"], "energy", v["glcm_energy_d1_a0"],
      "non-empty LBP bins", int(np.count_nonzero(flat.values[16:])))
