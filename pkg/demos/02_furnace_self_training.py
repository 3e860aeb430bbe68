"""Self-training in the furnace: the cache learns multi-bounce light.

Every point inside a uniformly emissive sphere with albedo 0.5 sees
radiance 1 / (1 - 0.5) = 2. Feeding the cache's own prediction back as
the tail of each training path lets it pick up all bounces; with zero
tails it only learns the bounces the training paths actually reach.

Run: python3 demos/02_furnace_self_training.py [--frames 256] [--size 64]
"""

import argparse

import numpy as np

from nrc import harness, scenes
from nrc.config import RenderConfig

p = argparse.ArgumentParser()
p.add_argument("--frames", type=int, default=256)
p.add_argument("--size", type=int, default=64)
args = p.parse_args()

truth = harness.furnace_expected(0.5, 1.0)
states = {
    mode: harness.new_state(scenes.furnace(),
                            RenderConfig(width=args.size, height=args.size, seed=1,
                                         self_train=(mode == "self-train")))
    for mode in ("self-train", "zero-tail")
}

print(f"{'frame':>6} {'self-train':>11} {'zero-tail':>10}   (cache view, truth {truth})")
for f in range(1, args.frames + 1):
    for s in states.values():
        harness.trace_frame(s)
    if f in (1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024) or f == args.frames:
        views = [float(harness.visualize_cache(s).mean()) for s in states.values()]
        print(f"{f:6d} {views[0]:11.4f} {views[1]:10.4f}")

s = states["self-train"]
img = harness.trace_frame(s).image
print(f"rendered frame MRSE vs {truth}: {harness.mrse(img, np.full_like(img, truth)):.2e}, "
      f"tile {s.tile_size}, records/frame target {s.config.records_per_frame}")
