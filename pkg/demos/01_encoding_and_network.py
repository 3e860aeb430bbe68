"""Walk through the query encoding and the 64-wide network.

Run: python3 demos/01_encoding_and_network.py
"""

import numpy as np

from nrc import mlp
from nrc.cache import RadianceQuery
from nrc.diagnostics import benchmark_mlp, gradient_check
from nrc.encoding import LAYOUT, encode_query, freq_encode, one_blob

np.set_printoptions(precision=3, suppress=True)

# Position: 12 triangle waves per axis, coarse to fine.
print("freq_encode(0.3)  ", freq_encode(0.3))

# Directions, normals and roughness: 4 quartic kernels.
for v in (0.0, 0.25, 0.6):
    print(f"one_blob({v:.2f})    ", one_blob(v, 4))

# One query becomes a 64-wide row; the last two entries are constant padding.
q = RadianceQuery(x=[[0.2, 0.5, 0.9]], omega=[[0, 0, 1.0]], normal=[[0, 1.0, 0]],
                  roughness=[0.3], alpha=[[0.6, 0.2, 0.1]], beta=[[0.1, 0.1, 0.1]])
row = encode_query(q, (np.zeros(3), np.ones(3)))[0]
start = 0
for name, width in LAYOUT:
    print(f"{name:10s} [{start:2d}:{start + width:2d}]", row[start:start + width][:6])
    start += width

# Random network: fused and naive inference agree to float32 round-off.
rng = np.random.default_rng(0)
w = mlp.NetworkWeights.glorot(rng)
x = rng.uniform(-1, 1, (4096, 64)).astype(np.float32)
diff = np.abs(mlp.infer(w, x) - mlp.naive_infer(w, x)).max()
print(f"fused vs naive max |diff| {diff:.2e}")

# Analytic gradients against central differences in float64.
r = gradient_check(draws=5, seed=0)
print(f"gradient check: {r.n_checked} entries, max rel err {r.max_rel_error:.2e}")

b = benchmark_mlp(batch=1 << 16, repeats=3)
print(f"batch {b.batch}: fused {1e3 * b.fused_s:.1f} ms, naive {1e3 * b.naive_s:.1f} ms, "
      f"speedup {b.speedup:.2f}x")
