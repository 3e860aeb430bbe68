"""Dynamic lighting: the ceiling lamp slides and dims over 120 frames.

The cache keeps training every frame, so it follows the change. The
table shows the training loss, the frame-to-frame SMAPE of the rendered
image and of the cache view, and the adaptive tile size.

Run: python3 demos/04_moving_light.py [--frames 160] [--size 48]
"""

import argparse
from pathlib import Path

from nrc import harness
from nrc.config import RenderConfig
from nrc.scenefile import load_scene

p = argparse.ArgumentParser()
p.add_argument("--frames", type=int, default=160)
p.add_argument("--size", type=int, default=48)
args = p.parse_args()

scene = load_scene(Path(__file__).resolve().parent.parent / "scenes" / "moving_light.scn")
state = harness.new_state(scene, RenderConfig(width=args.size, height=args.size, seed=0))

prev_img = prev_view = None
print(f"{'frame':>5} {'loss':>8} {'smape img':>10} {'smape view':>11} {'tile':>5}")
for f in range(args.frames):
    fo = harness.trace_frame(state)
    view = harness.visualize_cache(state)
    if prev_img is not None and f % 8 == 0:
        print(f"{f:5d} {fo.stats.loss:8.4f} {harness.smape(fo.image, prev_img):10.4f} "
              f"{harness.smape(view, prev_view):11.4f} {fo.stats.tile_size:5d}")
    prev_img, prev_view = fo.image, view
