"""The neural radiance cache: factorised queries and per-frame training."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .encoding import encode_query
from .mlp import NetworkWeights
from .optim import AdamState, EmaState, adam_step, ema_update, relative_l2_loss

ADAM_MAGIC = 0x4D414441  # "ADAM" little-endian
ADAM_VERSION = 2  # 2 appends the float64 EMA accumulator
_ADAM_HEADER = struct.Struct("<4I")
_ADAM_SCALARS = struct.Struct("<QQ5d")

# Base LCG constants; seeds perturb them while keeping a = 1 (mod 4), c odd.
LCG_A = 1664525
LCG_C = 1013904223


@dataclass
class RadianceQuery:
    """A batch of surface queries, one row per query."""

    x: np.ndarray
    omega: np.ndarray
    normal: np.ndarray
    roughness: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        n = self.x.shape[0]
        self.omega = np.asarray(self.omega, dtype=np.float64).reshape(n, 3)
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(n, 3)
        self.roughness = np.asarray(self.roughness, dtype=np.float64).reshape(n)
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(n, 3)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(n, 3)

    def __len__(self):
        return self.x.shape[0]

    def take(self, idx) -> "RadianceQuery":
        return RadianceQuery(
            self.x[idx], self.omega[idx], self.normal[idx],
            self.roughness[idx], self.alpha[idx], self.beta[idx],
        )

    @property
    def reflectance(self) -> np.ndarray:
        return self.alpha + self.beta

    @classmethod
    def concat(cls, parts) -> "RadianceQuery":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("x", "omega", "normal", "roughness", "alpha", "beta")))


@dataclass
class TrainingRecords:
    """Queries paired with scattered-radiance targets (radiance units)."""

    query: RadianceQuery
    target: np.ndarray

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64).reshape(len(self.query), 3)

    def __len__(self):
        return len(self.query)


@dataclass
class TrainStats:
    losses: list[float] = field(default_factory=list)
    n_records: int = 0
    n_used: int = 0
    n_rejected: int = 0

    @property
    def loss(self) -> float:
        return float(np.mean(self.losses)) if self.losses else 0.0


def lcg_constants(n: int, seed: int) -> tuple[int, int, int]:
    """Modulus and multiplier/increment used by :func:`lcg_permute`."""
    m = 1
    while m < n:
        m *= 2
    h = np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint32)
    a = (LCG_A + 4 * int(h[0])) % m
    a = a - (a % 4) + 1 if m >= 4 else 1
    c = (LCG_C + 2 * int(h[1])) % m | 1 if m > 1 else 0
    return m, a % max(m, 1), c


def lcg_permute(n: int, seed: int = 0, a: int | None = None, c: int | None = None) -> np.ndarray:
    """Permutation of ``0..n-1`` from the affine LCG map ``i -> (a i + c) mod m``.

    ``m`` is the smallest power of two >= ``n``; values >= ``n`` are
    skipped. With ``a = 1 (mod 4)`` and ``c`` odd the map is a bijection on
    ``[0, m)``. Explicit ``a``/``c`` override the seed-derived constants.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    m, a0, c0 = lcg_constants(n, seed)
    a = a0 if a is None else int(a)
    c = c0 if c is None else int(c)
    i = np.arange(m, dtype=np.uint64)
    p = (np.uint64(a % m) * i + np.uint64(c % m)) % np.uint64(m)
    return p[p < n].astype(np.int64)


class NeuralRadianceCache:
    """Online-trained radiance cache with EMA-averaged query weights.

    ``bounds`` is the ``(lo, hi)`` box used to normalise positions. All
    rendering-side queries go through the EMA weights; :meth:`train_frame`
    updates the raw weights and then the average.
    """

    def __init__(
        self,
        bounds,
        seed: int = 0,
        learning_rate: float = 1e-2,
        ema_alpha: float = 0.99,
        ema_printed_form: bool = False,
        n_batches: int = 4,
        batch_size: int = 1024,
        loss_eps: float = 0.01,
    ):
        self.bounds = (np.asarray(bounds[0], float), np.asarray(bounds[1], float))
        self.weights = NetworkWeights.glorot(np.random.default_rng(seed))
        self.adam = AdamState(learning_rate=learning_rate)
        self.ema = EmaState(alpha=ema_alpha, weights=self.weights.copy(),
                            printed_form=ema_printed_form)
        self.n_batches = n_batches
        self.batch_size = batch_size
        self.loss_eps = loss_eps

    def encode(self, queries: RadianceQuery) -> np.ndarray:
        return encode_query(queries, self.bounds)

    def network_output(self, queries: RadianceQuery) -> np.ndarray:
        """Raw EMA-network output before factorisation and clamping."""
        return mlp.infer(self.ema.weights, self.encode(queries)).astype(np.float64)

    @staticmethod
    def factorize(raw, reflectance) -> np.ndarray:
        """``max(0, raw) * (alpha + beta)``."""
        return np.maximum(np.asarray(raw, np.float64), 0.0) * reflectance

    def query(self, queries: RadianceQuery) -> np.ndarray:
        """Cached scattered radiance ``max(0, net(q)) * (alpha + beta)``."""
        if len(queries) == 0:
            return np.zeros((0, 3))
        return self.factorize(self.network_output(queries), queries.reflectance)

    def step(self, encoded: np.ndarray, reflectance: np.ndarray, target: np.ndarray) -> float:
        """One Adam + EMA update on a prepared batch; returns the loss."""
        stash = mlp.forward(self.weights, encoded)
        pred = stash.output.astype(np.float64) * reflectance
        loss, dl_dpred = relative_l2_loss(pred, target, self.loss_eps)
        dl_dnet = (dl_dpred * reflectance).astype(self.weights.dtype)
        grads = mlp.backward(self.weights, stash, dl_dnet)
        self.weights = adam_step(self.adam, self.weights, grads)
        ema_update(self.ema, self.weights)
        return loss

    def train_frame(self, records: TrainingRecords, n_batches: int | None = None,
                    batch_size: int | None = None, seed: int = 0) -> TrainStats:
        """Shuffle the frame's records and take one step per disjoint batch.

        Records beyond ``n_batches * batch_size`` are dropped; with fewer
        records the batches shrink so that all of them are still used.
        Records with non-finite or negative targets are rejected.
        """
        s = self.n_batches if n_batches is None else n_batches
        l = self.batch_size if batch_size is None else batch_size
        stats = TrainStats(n_records=len(records))
        if len(records) == 0:
            return stats
        target = records.target
        ok = np.all(np.isfinite(target), axis=1) & np.all(target >= 0.0, axis=1)
        ok &= np.all(np.isfinite(records.query.x), axis=1)
        stats.n_rejected = int((~ok).sum())
        valid = np.flatnonzero(ok)
        n = valid.size
        if n == 0:
            return stats
        order = valid[lcg_permute(n, seed)]
        if n < s * l:
            l = max(1, n // s)
            s = min(s, n)
        used = order[: s * l]
        stats.n_used = used.size
        q = records.query.take(used)
        encoded = self.encode(q)
        refl = q.reflectance
        tgt = target[used]
        for b in range(s):
            sl = slice(b * l, (b + 1) * l)
            stats.losses.append(self.step(encoded[sl], refl[sl], tgt[sl]))
        return stats

    def save(self, path) -> None:
        """Checkpoint: training snapshot, EMA snapshot, then the Adam block."""
        with open(path, "wb") as fh:
            mlp.write_snapshot(fh, self.weights)
            mlp.write_snapshot(fh, self.ema.weights)
            self.adam.ensure(self.weights)
            fh.write(_ADAM_HEADER.pack(ADAM_MAGIC, ADAM_VERSION, mlp.WIDTH, mlp.N_OUT))
            fh.write(_ADAM_SCALARS.pack(
                self.adam.t, self.ema.t, self.adam.learning_rate, self.adam.beta1,
                self.adam.beta2, self.adam.eps, self.ema.alpha,
            ))
            for mats in (self.adam.m, self.adam.v):
                for m in mats:
                    fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
            for m in self.ema.accumulator():
                fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())

    def load(self, path) -> None:
        with open(path, "rb") as fh:
            self.weights = mlp.read_snapshot(fh)
            ema_w = mlp.read_snapshot(fh)
            magic, version, width, n_out = _ADAM_HEADER.unpack(fh.read(_ADAM_HEADER.size))
            if magic != ADAM_MAGIC or version not in (1, ADAM_VERSION):
                raise ValueError("bad optimizer block in checkpoint")
            t, ema_t, lr, b1, b2, eps, alpha = _ADAM_SCALARS.unpack(fh.read(_ADAM_SCALARS.size))
            moments = []
            for _ in range(2):
                mats = []
                for shape in mlp.SHAPES:
                    count = shape[0] * shape[1]
                    buf = fh.read(4 * count)
                    if len(buf) != 4 * count:
                        raise ValueError("truncated optimizer block")
                    mats.append(np.frombuffer(buf, dtype="<f4").reshape(shape).copy())
                moments.append(mats)
            accum = None
            if version >= 2:
                accum = []
                for shape in mlp.SHAPES:
                    count = shape[0] * shape[1]
                    buf = fh.read(8 * count)
                    if len(buf) != 8 * count:
                        raise ValueError("truncated EMA block")
                    accum.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
        self.adam = AdamState(learning_rate=lr, beta1=b1, beta2=b2, eps=eps, t=t,
                              m=moments[0], v=moments[1])
        self.ema = EmaState(alpha=alpha, t=ema_t, weights=ema_w,
                            printed_form=self.ema.printed_form, accum=accum)
