"""Frame loop: tiling, path tracing, record harvesting, cache training, metrics.

Each frame traces one path per pixel. The viewport is cut into square
tiles and a single random offset selects one pixel per tile whose path is
extended into a training path. After tracing, one batched cache query
resolves both the rendering terminals and the self-training tails, the
image is assembled, and the training records go to
:meth:`NeuralRadianceCache.train_frame`. Finally the tile size is nudged
so that the next frame yields about the configured number of records.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tracer as T
from .cache import NeuralRadianceCache, RadianceQuery, TrainingRecords
from .config import RenderConfig
from .scene import Scene

METRIC_EPSILON = 0.01


@dataclass
class FrameStats:
    frame: int = 0
    mrse: float = math.nan
    smape: float = math.nan
    rbias2: float = math.nan
    rvar: float = math.nan
    loss: float = 0.0
    records: int = 0
    records_used: int = 0
    records_rejected: int = 0
    training_paths: int = 0
    unbiased_paths: int = 0
    tile_size: int = 0
    ms_trace: float = 0.0
    ms_query: float = 0.0
    ms_train: float = 0.0

    @property
    def ms_total(self) -> float:
        return self.ms_trace + self.ms_query + self.ms_train


@dataclass
class FrameState:
    """Mutable per-run state carried from one frame to the next."""

    scene: Scene
    cache: NeuralRadianceCache
    config: RenderConfig
    frame: int = 0
    tile_size: int = 16
    seed: int = 0
    accumulate: bool = False
    rng: np.random.Generator = field(default=None, repr=False)
    accum: np.ndarray | None = field(default=None, repr=False)
    n_accum: int = 0
    _packed: object = field(default=None, repr=False)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)
        limit = min(self.config.width, self.config.height)
        if not 1 <= self.tile_size <= limit:
            self.tile_size = int(np.clip(self.tile_size, 1, limit))

    def scene_data(self):
        """Packed scene for the current frame (re-packed only when animated)."""
        if self.scene.animations:
            return self.scene.at_time(float(self.frame)).pack()
        if self._packed is None:
            self._packed = self.scene.pack()
        return self._packed


def new_state(scene: Scene, config: RenderConfig) -> FrameState:
    config.validate()
    cache = NeuralRadianceCache(
        scene.bounds(), seed=config.seed, learning_rate=config.learning_rate,
        ema_alpha=config.ema_alpha, ema_printed_form=config.ema_printed_form,
        n_batches=config.n_batches, batch_size=config.batch_size, loss_eps=config.loss_eps,
    )
    return FrameState(scene, cache, config, tile_size=config.tile_size, seed=config.seed,
                      accumulate=config.accumulate,
                      rng=np.random.default_rng([config.seed, 0x4E5243]))


def tile_grid(width: int, height: int, tile: int):
    """Tile origins and extents covering the image (edge tiles may be partial)."""
    xs = np.arange(0, width, tile)
    ys = np.arange(0, height, tile)
    return xs, np.minimum(tile, width - xs), ys, np.minimum(tile, height - ys)


def training_mask(width: int, height: int, tile: int, offset) -> np.ndarray:
    """Flat pixel mask with exactly one promoted pixel per tile.

    Every tile uses the same offset; partial edge tiles wrap it modulo
    their own extent so they still contribute one pixel.
    """
    ox, oy = int(offset[0]), int(offset[1])
    xs, ws, ys, hs = tile_grid(width, height, tile)
    mask = np.zeros(width * height, dtype=np.uint8)
    px = xs + ox % ws
    py = ys + oy % hs
    mask[(py[:, None] * width + px[None, :]).ravel()] = 1
    return mask


def update_tile_size(current: int, records_produced: int, target_records: int,
                     max_size: int) -> int:
    """Multiplicative controller: side scales with sqrt(records / target)."""
    if target_records < 1:
        raise ValueError("target_records must be >= 1")
    new = round(current * math.sqrt(max(records_produced, 0) / target_records))
    return int(min(max(new, 1), max_size))


def _queries(rows: np.ndarray) -> RadianceQuery:
    return RadianceQuery(rows[:, T.V_POS:T.V_POS + 3], rows[:, T.V_OMEGA:T.V_OMEGA + 3],
                         rows[:, T.V_NORMAL:T.V_NORMAL + 3], rows[:, T.V_ROUGH],
                         rows[:, T.V_ALPHA:T.V_ALPHA + 3], rows[:, T.V_BETA:T.V_BETA + 3])


@dataclass
class FrameOutput:
    """Everything a frame produced, for tests and diagnostics."""

    image: np.ndarray
    stats: FrameStats
    records: TrainingRecords | None
    mask: np.ndarray
    path_reason: np.ndarray
    path_unbiased: np.ndarray


def trace_frame(state: FrameState, train: bool = True) -> FrameOutput:
    """Trace, query and (optionally) train for one frame; advances ``state``."""
    cfg = state.config
    w, h = cfg.width, cfg.height
    sd = state.scene_data()
    cam = T.camera_array(state.scene)
    stats = FrameStats(frame=state.frame, tile_size=state.tile_size)

    t0 = time.perf_counter()
    offset = state.rng.integers(0, state.tile_size, size=2)
    mask = training_mask(w, h, state.tile_size, offset) if train else np.zeros(w * h, np.uint8)
    n_train = int(mask.sum())
    npix = w * h
    pix_l = np.zeros((npix, 3))
    pix_t = np.zeros((npix, 3))
    pix_q = np.zeros((npix, T.QUERY_FIELDS))
    pix_has = np.zeros(npix, dtype=np.uint8)
    rec = np.zeros((max(n_train, 1) * (cfg.max_depth + 1), T.VERTEX_FIELDS))
    offsets = np.zeros(n_train + 1, dtype=np.int64)
    tail = np.zeros(n_train, dtype=np.uint8)
    tail_q = np.zeros((n_train, T.QUERY_FIELDS))
    reason = np.zeros(n_train, dtype=np.int64)
    unbiased = np.zeros(n_train, dtype=np.uint8)
    path_pixel = np.zeros(n_train, dtype=np.int64)
    n_rec = T.trace_frame_kernel(sd, cam, w, h, mask, cfg.u_unbiased, cfg.c, cfg.max_depth,
                                 cfg.rr_start, state.rng, pix_l, pix_t, pix_q, pix_has, rec,
                                 offsets, tail, tail_q, reason, unbiased, path_pixel)
    t1 = time.perf_counter()

    # One batched lookup for rendering terminals and self-training tails.
    render_idx = np.flatnonzero(pix_has)
    tail_idx = np.flatnonzero(tail) if cfg.self_train else np.zeros(0, np.int64)
    rows = np.concatenate([pix_q[render_idx], tail_q[tail_idx]])
    values = state.cache.query(_queries(rows)) if len(rows) else np.zeros((0, 3))
    radiance = pix_l.copy()
    radiance[render_idx] += pix_t[render_idx] * values[: render_idx.size]
    tail_values = np.zeros((n_train, 3))
    tail_values[tail_idx] = values[render_idx.size:]
    t2 = time.perf_counter()

    records = None
    if n_train:
        targets = np.zeros((n_rec, 3))
        vertices = rec[:n_rec]
        T.backpropagate_targets(vertices, offsets, tail_values, targets)
        records = TrainingRecords(_queries(vertices), targets)
        seed = int(state.rng.integers(0, 2**31))
        tstats = state.cache.train_frame(records, seed=seed)
        stats.loss = tstats.loss
        stats.records_used = tstats.n_used
        stats.records_rejected = tstats.n_rejected
    t3 = time.perf_counter()

    stats.records = int(n_rec)
    stats.training_paths = n_train
    stats.unbiased_paths = int(unbiased.sum())
    stats.ms_trace = 1e3 * (t1 - t0)
    stats.ms_query = 1e3 * (t2 - t1)
    stats.ms_train = 1e3 * (t3 - t2)

    if train and cfg.adaptive_tiles:
        state.tile_size = update_tile_size(state.tile_size, n_rec, cfg.records_per_frame,
                                           min(w, h))
    state.frame += 1
    image = radiance.reshape(h, w, 3)
    if state.accumulate:
        state.n_accum += 1
        if state.accum is None:
            state.accum = image.copy()
        else:
            state.accum += (image - state.accum) / state.n_accum
        image = state.accum.copy()
    return FrameOutput(image, stats, records, mask, reason, unbiased)


def render_frame(state: FrameState, reference=None, prev_image=None):
    """Render and train one frame. Returns ``(image, FrameStats)``."""
    out = trace_frame(state)
    if reference is not None or prev_image is not None:
        m = compute_metrics(out.image, reference, prev_image)
        out.stats.mrse = m["mrse"]
        out.stats.smape = m["smape"]
    return out.image, out.stats


def visualize_cache(state: FrameState, jitter: bool = False) -> np.ndarray:
    """Emission plus the cached radiance at every primary hit (no path tracing).

    Without ``jitter`` rays go through pixel centres and no rng state is
    consumed, so the result depends on the cache alone.
    """
    cfg = state.config
    w, h = cfg.width, cfg.height
    sd = state.scene_data()
    cam = T.camera_array(state.scene)
    emission = np.zeros((w * h, 3))
    query = np.zeros((w * h, T.QUERY_FIELDS))
    has = np.zeros(w * h, dtype=np.uint8)
    rng = state.rng if jitter else np.random.default_rng(0)
    T.primary_kernel(sd, cam, w, h, rng, bool(jitter), emission, query, has)
    idx = np.flatnonzero(has)
    out = emission
    if idx.size:
        out[idx] += state.cache.query(_queries(query[idx]))
    return out.reshape(h, w, 3)


def render_reference(scene: Scene, width: int, height: int, spp: int, seed: int = 0,
                     max_depth: int = 64, rr_start: int = 3) -> np.ndarray:
    """Brute-force path tracing (NEE, MIS, Russian roulette), no cache."""
    if spp < 1:
        raise ValueError("spp must be >= 1")
    out = np.zeros((width * height, 3))
    rng = np.random.default_rng(seed)
    T.reference_frame_kernel(scene.pack(), T.camera_array(scene), width, height, int(spp),
                             int(max_depth), int(rr_start), rng, out)
    return out.reshape(height, width, 3)


def _check_shapes(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def mrse(image, reference, eps: float = METRIC_EPSILON) -> float:
    img = np.asarray(image, float)
    ref = np.asarray(reference, float)
    _check_shapes(img, ref, "mrse")
    return float(np.mean((img - ref) ** 2 / (ref**2 + eps)))


def smape(image, prev_image, eps: float = METRIC_EPSILON) -> float:
    img = np.asarray(image, float)
    prev = np.asarray(prev_image, float)
    _check_shapes(img, prev, "smape")
    return float(np.mean(np.abs(img - prev) / ((np.abs(img) + np.abs(prev)) / 2 + eps)))


def bias_variance(images, reference, eps: float = METRIC_EPSILON):
    """``(rBias^2, rVar)`` of a stack of independent estimates against a reference."""
    stack = np.asarray(images, float)
    ref = np.asarray(reference, float)
    _check_shapes(stack[0], ref, "bias_variance")
    rbias2 = mrse(stack.mean(axis=0), ref, eps)
    ddof = 1 if len(stack) > 1 else 0
    rvar = float(np.mean(stack.var(axis=0, ddof=ddof) / (ref**2 + eps)))
    return rbias2, rvar


def compute_metrics(image, reference=None, prev_image=None, eps: float = METRIC_EPSILON) -> dict:
    out = {"mrse": math.nan, "smape": math.nan}
    if reference is not None:
        out["mrse"] = mrse(image, reference, eps)
    if prev_image is not None:
        out["smape"] = smape(image, prev_image, eps)
    return out


def furnace_expected(rho: float, emission: float) -> float:
    """Equilibrium radiance ``e / (1 - rho)`` of a closed emissive enclosure."""
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"albedo must lie in [0, 1), got {rho}")
    if emission < 0:
        raise ValueError("emission must be non-negative")
    return emission / (1.0 - rho)
