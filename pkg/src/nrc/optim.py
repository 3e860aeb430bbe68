"""Relative L2 loss, Adam, and the bias-corrected weight EMA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import NetworkWeights

LUMINANCE = np.array([0.2126, 0.7152, 0.0722])
LOSS_EPSILON = 0.01


def luminance(rgb):
    return np.asarray(rgb) @ LUMINANCE


def relative_l2_loss(pred, target, eps: float = LOSS_EPSILON):
    """Luminance-normalised relative L2 loss and its gradient.

    Each channel contributes ``(pred - target)^2 / (lum(pred)^2 + eps)``,
    averaged over channels and then over the batch. The denominator is
    held constant for differentiation (stop-gradient), so the returned
    gradient is ``2 (pred - target) / (3 N (lum^2 + eps))``.

    Accepts a single RGB triple or an ``(N, 3)`` batch; the gradient has
    the same shape as ``pred``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    p2 = np.atleast_2d(pred)
    t2 = np.atleast_2d(target)
    n = p2.shape[0]
    denom = luminance(p2) ** 2 + eps
    diff = p2 - t2
    loss = float(np.sum(diff * diff / denom[:, None]) / (3.0 * n))
    grad = 2.0 * diff / (3.0 * n * denom[:, None])
    return loss, grad.reshape(pred.shape)


@dataclass
class AdamState:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None
    nonfinite_count: int = 0

    def ensure(self, w: NetworkWeights):
        if self.m is None:
            self.m = [np.zeros_like(x) for x in w.matrices]
            self.v = [np.zeros_like(x) for x in w.matrices]


def adam_step(state: AdamState, w: NetworkWeights, grads: NetworkWeights) -> NetworkWeights:
    """One bias-corrected Adam update; mutates ``state`` and returns new weights.

    Non-finite gradient entries are zeroed and tallied in
    ``state.nonfinite_count``.
    """
    state.ensure(w)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    out = []
    for i, (wi, gi) in enumerate(zip(w.matrices, grads.matrices)):
        gi = np.asarray(gi, dtype=wi.dtype)
        bad = ~np.isfinite(gi)
        if bad.any():
            state.nonfinite_count += int(bad.sum())
            gi = np.where(bad, 0.0, gi).astype(wi.dtype)
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * gi
        v *= b2
        v += (1.0 - b2) * gi * gi
        step = state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        out.append((wi - step).astype(wi.dtype))
    return NetworkWeights(out)


@dataclass
class EmaState:
    """Shadow weights averaged over the optimizer's outputs.

    The running average is kept in float64 (``accum``) and ``weights`` is
    its cast to the network dtype, so round-off does not build up over
    long runs. ``printed_form`` switches to the recurrence with only the
    new-weight term divided by ``1 - alpha^t``; it does not preserve a
    constant stream and exists for comparison only.
    """

    alpha: float = 0.99
    t: int = 0
    weights: NetworkWeights | None = None
    printed_form: bool = False
    accum: list | None = None

    def accumulator(self) -> list:
        if self.accum is None and self.weights is not None:
            self.accum = [np.asarray(m, dtype=np.float64).copy() for m in self.weights]
        return self.accum


def ema_update(state: EmaState, w_t: NetworkWeights) -> NetworkWeights:
    """Advance the EMA by one optimizer step and return the shadow weights.

    With ``eta_t = 1 - alpha^t`` the default recurrence is
    ``avg_t = ((1 - alpha) W_t + alpha eta_{t-1} avg_{t-1}) / eta_t``,
    i.e. the standard bias-corrected average: ``avg_1 = W_1`` and a
    constant stream is reproduced exactly.
    """
    alpha = state.alpha
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"EMA alpha must lie in [0, 1), got {alpha}")
    state.t += 1
    t = state.t
    # Both recurrences reduce to avg_1 = W_1 since eta_0 = 0.
    if state.weights is None or alpha == 0.0 or t == 1:
        state.accum = [np.asarray(m, dtype=np.float64).copy() for m in w_t]
        state.weights = w_t.copy()
        return state.weights
    eta_prev = 1.0 - alpha ** (t - 1)
    eta_t = 1.0 - alpha**t
    acc = state.accumulator()
    mats = []
    for avg, cur in zip(acc, w_t.matrices):
        c64 = np.asarray(cur, dtype=np.float64)
        if state.printed_form:
            avg *= alpha * eta_prev
            avg += (1.0 - alpha) / eta_t * c64
        else:
            avg *= alpha * eta_prev
            avg += (1.0 - alpha) * c64
            avg /= eta_t
        mats.append(avg.astype(cur.dtype))
    state.weights = NetworkWeights(mats)
    return state.weights
