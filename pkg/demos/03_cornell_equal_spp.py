"""Cornell box: one sample per pixel with and without the cache.

Trains the cache for a while, then compares a single 1-spp frame against
plain 1-spp path tracing, both measured against a high-spp reference.
Writes PPMs to demos/out/.

Run: python3 demos/03_cornell_equal_spp.py [--warmup 256] [--size 64] [--ref-spp 1024]
"""

import argparse
from pathlib import Path

from nrc import harness, imageio, scenes
from nrc.config import RenderConfig

p = argparse.ArgumentParser()
p.add_argument("--warmup", type=int, default=256)
p.add_argument("--size", type=int, default=64)
p.add_argument("--ref-spp", type=int, default=1024)
args = p.parse_args()
out = Path(__file__).resolve().parent / "out"
out.mkdir(exist_ok=True)

scene = scenes.cornell_box()
n = args.size
ref = harness.render_reference(scene, n, n, args.ref_spp, seed=99)

state = harness.new_state(scene, RenderConfig(width=n, height=n, seed=0))
for f in range(1, args.warmup + 1):
    fo = harness.trace_frame(state)
    if f % 64 == 0:
        print(f"frame {f:5d}  loss {fo.stats.loss:.4f}  records {fo.stats.records}  "
              f"tile {fo.stats.tile_size}")

nrc = harness.trace_frame(state).image
pt = harness.render_reference(scene, n, n, 1, seed=7)
view = harness.visualize_cache(state)
for name, img in (("reference", ref), ("nrc_1spp", nrc), ("pt_1spp", pt), ("cache_view", view)):
    imageio.write_ppm(out / f"cornell_{name}.ppm", img)
    if name != "reference":
        print(f"{name:10s} MRSE {harness.mrse(img, ref):.4f}")

# Split the error of repeated NRC frames into bias and variance.
frames = [harness.trace_frame(state, train=False).image for _ in range(16)]
rb, rv = harness.bias_variance(frames, ref)
print(f"nrc_1spp   rBias^2 {rb:.4f}  rVar {rv:.4f}")
print(f"images in {out}")
