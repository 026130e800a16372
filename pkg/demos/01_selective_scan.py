"""
Selective scan on a toy sequence
================================

The scan keeps a small hidden state per channel and decides, token by token,
how much of the new input to absorb. That decision is the positive step
size delta. Large delta forgets the past quickly, small delta holds on to it.
"""

import numpy as np

from evmfusion.engine import SplitMix64
from evmfusion.vim import SsmParams, scan_kernel, selective_scan

# one channel, one state element, A = -1: the state decays by exp(-delta)
# per step and takes in delta * B * x
L = 12
x = np.zeros((1, L, 1))
x[0, 2, 0] = 1.0                      # a single impulse at t=2
A = np.array([[-1.0]])
B = np.ones((1, L, 1))
C = np.ones((1, L, 1))
D = np.zeros(1)

for dt in (0.1, 0.5, 2.0):
    delta = np.full((1, L, 1), dt)
    y = scan_kernel(x, delta, A, B, C, D).data[0, :, 0]
    print(f"delta={dt:<4} response:", np.array2string(y, precision=3, suppress_small=True))

# small delta: a weak but long memory of the impulse
# large delta: a strong hit that is gone two steps later

# %%
# With learned projections delta depends on the input itself.
rng = SplitMix64(0)
params = SsmParams(rng, d_inner=4, d_state=3)
tokens = np.random.default_rng(0).normal(size=(1, 8, 4))
y_fwd, rec_fwd = selective_scan(tokens, params, "forward")
y_bwd, rec_bwd = selective_scan(tokens, params, "backward")
print("\nper-token delta (mean over channels)")
print("  forward :", np.round(rec_fwd.values[0].mean(axis=1), 3))
print("  backward:", np.round(rec_bwd.values[0].mean(axis=1), 3))

# delta is a function of each token alone here, so both directions record the
# same values; inside a Mamba block the causal conv before the scan makes
# them differ. The outputs differ because the state runs the other way.
print("outputs equal:", np.array_equal(y_fwd.data, y_bwd.data))

# the backward scan is the forward scan on the reversed sequence
y_rev, _ = selective_scan(tokens[:, ::-1].copy(), params, "forward")
print("backward == flip(forward(flip(x))):", np.array_equal(y_bwd.data, y_rev.data[:, ::-1]))
