"""Gradient check and fused-vs-naive inference benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import mlp
from .optim import LOSS_EPSILON, luminance

KINK_MARGIN = 1e-3
GRAD_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    draws: int
    max_rel_error: float
    worst_draw: int
    resampled: int
    n_checked: int


def _hidden_preactivations(w, x):
    h, pre = x, []
    for m in w.matrices[:-1]:
        z = h @ m.T
        pre.append(z)
        h = np.maximum(z, 0.0)
    return pre


def _frozen_loss(pred, target, denom):
    """Relative L2 with a fixed denominator, for every leading index of ``pred``."""
    diff = pred - target
    return np.sum(diff * diff / denom[:, None], axis=(-1, -2)) / (3.0 * target.shape[0])


def _finite_difference(w: mlp.NetworkWeights, x, target, denom, h):
    """Central differences of the frozen-denominator loss for every weight.

    Perturbing entry ``(r, c)`` of matrix ``i`` changes only row ``r`` of that
    layer's pre-activation, by ``+-h * input[c]``; the perturbed networks are
    then pushed through the remaining layers as one stacked batch.
    """
    acts = [x]
    for m in w.matrices[:-1]:
        acts.append(np.maximum(acts[-1] @ m.T, 0.0))
    out = []
    for i, m in enumerate(w.matrices):
        rows, cols = m.shape
        z = acts[i] @ m.T                                   # (B, rows)
        grad = np.empty((rows, cols))
        for r in range(rows):
            # (2, cols, B, rows): sign, perturbed column, batch, unit
            zp = np.broadcast_to(z, (2, cols, *z.shape)).copy()
            step = h * acts[i].T                            # (cols, B)
            zp[0, :, :, r] += step
            zp[1, :, :, r] -= step
            hcur = zp
            for j in range(i + 1, len(w.matrices)):
                hcur = np.maximum(hcur, 0.0) @ w.matrices[j].T
            losses = _frozen_loss(hcur, target, denom)      # (2, cols)
            grad[r] = (losses[0] - losses[1]) / (2.0 * h)
        out.append(grad)
    return out


def gradient_check(draws: int = 100, seed: int = 0, batch: int = 2, h: float = 1e-4,
                   eps: float = LOSS_EPSILON) -> GradCheckResult:
    """Analytic weight gradients of loss(network(x)) against central differences.

    Runs in float64. Draws whose hidden pre-activations come within
    ``KINK_MARGIN`` of a ReLU kink are resampled, because a finite step can
    cross the kink there and the difference quotient stops approximating the
    derivative. Relative error is ``|a - f| / max(|a|, |f|, GRAD_FLOOR)``.
    """
    rng = np.random.default_rng(seed)
    worst, worst_draw, resampled, n_checked = 0.0, -1, 0, 0
    for d in range(draws):
        while True:
            w = mlp.NetworkWeights.glorot(rng, dtype=np.float64)
            x = rng.uniform(-1.0, 1.0, size=(batch, mlp.WIDTH))
            pre = _hidden_preactivations(w, x)
            if min(np.abs(p).min() for p in pre) >= KINK_MARGIN:
                break
            resampled += 1
        target = rng.uniform(0.0, 1.0, size=(batch, mlp.N_OUT))
        stash = mlp.forward(w, x)
        pred = stash.output
        denom = luminance(pred) ** 2 + eps
        dl = 2.0 * (pred - target) / (3.0 * batch * denom[:, None])
        analytic = mlp.backward(w, stash, dl)
        numeric = _finite_difference(w, x, target, denom, h)
        for a, f in zip(analytic.matrices, numeric):
            err = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), GRAD_FLOOR)
            n_checked += err.size
            e = float(err.max())
            if e > worst:
                worst, worst_draw = e, d
    return GradCheckResult(draws, worst, worst_draw, resampled, n_checked)


@dataclass
class BenchResult:
    batch: int
    fused_s: float
    naive_s: float

    @property
    def speedup(self) -> float:
        return self.naive_s / self.fused_s

    @property
    def fused_per_s(self) -> float:
        return self.batch / self.fused_s

    @property
    def naive_per_s(self) -> float:
        return self.batch / self.naive_s


def benchmark_mlp(batch: int = 1 << 16, repeats: int = 5, seed: int = 0) -> BenchResult:
    """Best-of-``repeats`` wall time of :func:`mlp.infer` and :func:`mlp.naive_infer`."""
    rng = np.random.default_rng(seed)
    w = mlp.NetworkWeights.glorot(rng)
    x = rng.uniform(-1.0, 1.0, size=(batch, mlp.WIDTH)).astype(np.float32)
    mlp.infer(w, x[:256])  # compile / load outside the timed region

    def best(fn):
        times = []
        for _ in range(repeats):
            t = time.perf_counter()
            fn(w, x)
            times.append(time.perf_counter() - t)
        return min(times)

    return BenchResult(batch, best(mlp.infer), best(mlp.naive_infer))
