"""Command line: ``render``, ``bench-mlp``, ``gradcheck`` and ``metrics``.

``NRC_NUM_THREADS`` caps the numba thread pool (the kernels in this build
run serially, so it mainly matters for future parallel phases).

``render`` writes into ``--out``:

* ``frame_0000.pfm`` ... one image per frame (skip with ``--no-frames``)
* ``stats.csv`` with columns :data:`STATS_COLUMNS`
* ``cache.ckpt``, the final cache checkpoint
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, imageio, scenes
from .config import RenderConfig
from .scene import SceneError
from .scenefile import load_scene

STATS_COLUMNS = ("frame", "mrse", "smape", "loss", "records", "tile_size", "training_paths",
                 "ms_trace", "ms_query", "ms_train", "ms_total")

EXIT_INVARIANT = 3


class InvariantViolation(RuntimeError):
    pass


def _apply_thread_env():
    value = os.environ.get("NRC_NUM_THREADS")
    if not value:
        return
    import numba

    numba.set_num_threads(max(1, min(int(value), numba.config.NUMBA_NUM_THREADS)))


def resolve_scene(spec: str):
    """A scene file path, or the name of a builtin scene (``furnace``, ``cornell``)."""
    path = Path(spec)
    if path.exists():
        return load_scene(path)
    name = spec.removeprefix("builtin:")
    if name in scenes.BUILTIN:
        return scenes.BUILTIN[name]()
    raise FileNotFoundError(f"no scene file or builtin scene named {spec!r}")


def check_frame(out: harness.FrameOutput, state: harness.FrameState, tile: int):
    img = out.image
    if not np.all(np.isfinite(img)):
        raise InvariantViolation(f"frame {out.stats.frame}: non-finite pixels")
    if np.any(img < 0):
        raise InvariantViolation(f"frame {out.stats.frame}: negative pixels")
    xs, _, ys, _ = harness.tile_grid(state.config.width, state.config.height, tile)
    if out.stats.training_paths != xs.size * ys.size:
        raise InvariantViolation(
            f"frame {out.stats.frame}: {out.stats.training_paths} training paths for "
            f"{xs.size * ys.size} tiles")


def run(config: RenderConfig, scene, out_dir=None, reference=None, log=None) -> int:
    """Frame loop writing images, ``stats.csv`` and a checkpoint. Returns an exit status."""
    config.validate()
    out = Path(out_dir or config.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    state = harness.new_state(scene, config)
    prev = None
    with open(out / "stats.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_COLUMNS)
        for f in range(config.frames):
            tile = state.tile_size
            fo = harness.trace_frame(state)
            try:
                check_frame(fo, state, tile)
            except InvariantViolation as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_INVARIANT
            m = harness.compute_metrics(fo.image, reference, prev)
            s = fo.stats
            s.mrse, s.smape = m["mrse"], m["smape"]
            writer.writerow([s.frame, f"{s.mrse:.8g}", f"{s.smape:.8g}", f"{s.loss:.8g}", s.records,
                             s.tile_size, s.training_paths, f"{s.ms_trace:.3f}",
                             f"{s.ms_query:.3f}", f"{s.ms_train:.3f}", f"{s.ms_total:.3f}"])
            if config.write_frames:
                imageio.write_pfm(out / f"frame_{f:04d}.pfm", fo.image)
            if log is not None and (f + 1) % 32 == 0:
                print(f"frame {f + 1}/{config.frames} loss {s.loss:.4f} records {s.records}",
                      file=log)
            prev = fo.image
    state.cache.save(out / "cache.ckpt")
    if prev is not None:
        imageio.write_ppm(out / "final.ppm", prev)
    return 0


def _on_off(text: str) -> bool:
    t = text.lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    d = RenderConfig()
    p = argparse.ArgumentParser(prog="nrc", description="Neural radiance caching on the CPU.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="run the frame loop")
    r.add_argument("--scene", required=True, help="scene file or builtin name (furnace, cornell)")
    r.add_argument("--frames", type=int, default=d.frames)
    r.add_argument("--seed", type=int, default=d.seed)
    r.add_argument("--width", type=int, default=d.width)
    r.add_argument("--height", type=int, default=d.height)
    r.add_argument("--c", type=float, default=d.c, help="termination constant")
    r.add_argument("--ema-alpha", type=float, default=d.ema_alpha)
    r.add_argument("--ema-printed-form", action="store_true",
                   help="use the EMA recurrence that does not preserve constants")
    r.add_argument("--u", type=float, default=d.u_unbiased, help="unbiased training fraction")
    r.add_argument("--batches", type=int, default=d.n_batches, help="training batches per frame")
    r.add_argument("--batch-size", type=int, default=d.batch_size)
    r.add_argument("--lr", type=float, default=d.learning_rate)
    r.add_argument("--tile", type=int, default=d.tile_size, help="initial tile side")
    r.add_argument("--target-records", type=int, default=None)
    r.add_argument("--fixed-tiles", action="store_true", help="disable tile-size adaptation")
    r.add_argument("--self-train", type=_on_off, default=True, metavar="on|off")
    r.add_argument("--accumulate", action="store_true")
    r.add_argument("--reference", help="reference PFM for MRSE")
    r.add_argument("--reference-spp", type=int, default=0,
                   help="render a path-traced reference with this many samples per pixel")
    r.add_argument("--out", default="out")
    r.add_argument("--no-frames", action="store_true", help="do not write per-frame PFMs")

    b = sub.add_parser("bench-mlp", help="fused vs naive inference throughput")
    b.add_argument("--batch", type=int, default=1 << 16)
    b.add_argument("--repeats", type=int, default=5)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference weight gradients")
    g.add_argument("--draws", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-4)

    m = sub.add_parser("metrics", help="MRSE / SMAPE between PFM images")
    m.add_argument("image")
    m.add_argument("reference", nargs="?")
    m.add_argument("--prev", help="previous frame for SMAPE")
    return p


def config_from_args(a) -> RenderConfig:
    return RenderConfig(
        width=a.width, height=a.height, frames=a.frames, seed=a.seed, c=a.c,
        ema_alpha=a.ema_alpha, u_unbiased=a.u, n_batches=a.batches, batch_size=a.batch_size,
        learning_rate=a.lr, tile_size=a.tile, target_records=a.target_records,
        adaptive_tiles=not a.fixed_tiles, self_train=a.self_train,
        ema_printed_form=a.ema_printed_form, accumulate=a.accumulate, output_dir=a.out,
        write_frames=not a.no_frames,
    ).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_thread_env()
    if args.command == "render":
        try:
            config = config_from_args(args)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        try:
            scene = resolve_scene(args.scene)
        except (OSError, SceneError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        reference = None
        if args.reference:
            reference = imageio.read_pfm(args.reference)
            if reference.shape != (config.height, config.width, 3):
                print(f"error: reference is {reference.shape[1]}x{reference.shape[0]}, "
                      f"render is {config.width}x{config.height}", file=sys.stderr)
                return 2
        elif args.reference_spp > 0:
            reference = harness.render_reference(scene, config.width, config.height,
                                                 args.reference_spp, seed=config.seed + 1)
            Path(args.out).mkdir(parents=True, exist_ok=True)
            imageio.write_pfm(Path(args.out) / "reference.pfm", reference)
        return run(config, scene, args.out, reference, log=sys.stderr)
    if args.command == "bench-mlp":
        from .diagnostics import benchmark_mlp

        r = benchmark_mlp(args.batch, args.repeats)
        print(f"batch        {r.batch}")
        print(f"fused        {1e3 * r.fused_s:9.2f} ms  {r.fused_per_s / 1e6:7.2f} M/s")
        print(f"naive        {1e3 * r.naive_s:9.2f} ms  {r.naive_per_s / 1e6:7.2f} M/s")
        print(f"speedup      {r.speedup:9.2f}x")
        return 0
    if args.command == "gradcheck":
        from .diagnostics import gradient_check

        r = gradient_check(args.draws, args.seed)
        ok = r.max_rel_error <= args.tolerance
        print(f"draws {r.draws}  gradients checked {r.n_checked}  resampled {r.resampled}")
        print(f"max relative error {r.max_rel_error:.3e} (draw {r.worst_draw})  "
              f"{'PASS' if ok else 'FAIL'}")
        return 0 if ok else 1
    if args.command == "metrics":
        img = imageio.read_pfm(args.image)
        ref = imageio.read_pfm(args.reference) if args.reference else None
        prev = imageio.read_pfm(args.prev) if args.prev else None
        if ref is None and prev is None:
            print("error: need a reference and/or --prev", file=sys.stderr)
            return 2
        try:
            m = harness.compute_metrics(img, ref, prev)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        for k, v in m.items():
            if not math.isnan(v):
                print(f"{k} {v:.8g}")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
