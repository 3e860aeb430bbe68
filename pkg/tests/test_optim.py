import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrc.mlp import NetworkWeights
from nrc.optim import (AdamState, EmaState, adam_step, ema_update, luminance,
                       relative_l2_loss)


def const_weights(value, dtype=np.float64):
    return NetworkWeights([np.full(m.shape, value, dtype=dtype) for m in NetworkWeights.zeros()])


class TestLoss:
    def test_zero_at_target(self):
        loss, grad = relative_l2_loss([1, 1, 1], [1, 1, 1])
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_examples(self):
        loss, _ = relative_l2_loss([2, 2, 2], [1, 1, 1], 0.01)
        assert loss == pytest.approx(1 / 4.01, rel=1e-12)
        loss, _ = relative_l2_loss([0, 0, 0], [1, 0, 0], 0.01)
        assert loss == pytest.approx(1 / 0.03, rel=1e-12)

    def test_luminance(self):
        assert luminance([1, 1, 1]) == pytest.approx(1.0)
        assert luminance([0, 1, 0]) == pytest.approx(0.7152)

    def test_batch_is_mean_of_rows(self):
        rng = np.random.default_rng(0)
        p, t = rng.random((5, 3)), rng.random((5, 3))
        loss, grad = relative_l2_loss(p, t)
        rows = [relative_l2_loss(p[i], t[i]) for i in range(5)]
        assert loss == pytest.approx(np.mean([r[0] for r in rows]))
        np.testing.assert_allclose(grad, np.array([r[1] for r in rows]) / 5)

    def test_gradient_frozen_denominator(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p, t = rng.uniform(-1, 3, 3), rng.uniform(0, 3, 3)
            denom = luminance(p) ** 2 + 0.01
            _, grad = relative_l2_loss(p, t)
            h = 1e-6
            fd = np.empty(3)
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                fp = np.sum((p + e - t) ** 2) / (3 * denom)
                fm = np.sum((p - e - t) ** 2) / (3 * denom)
                fd[i] = (fp - fm) / (2 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-10)


class TestAdam:
    def test_zero_gradient(self):
        w = const_weights(0.3)
        st_ = AdamState()
        new = adam_step(st_, w, const_weights(0.0))
        for a, b in zip(new, w):
            np.testing.assert_array_equal(a, b)
        assert st_.t == 1

    def test_moments_decay_under_zero_gradient(self):
        w = const_weights(0.3)
        st_ = AdamState()
        st_.ensure(w)
        st_.m[0][:] = 1.0
        st_.v[0][:] = 1.0
        adam_step(st_, w, const_weights(0.0))
        np.testing.assert_allclose(st_.m[0], 0.9)
        np.testing.assert_allclose(st_.v[0], 0.99)

    def test_first_step_magnitude(self):
        w = const_weights(0.0)
        g = NetworkWeights([np.random.default_rng(i).normal(size=m.shape) for i, m in enumerate(w)])
        new = adam_step(AdamState(learning_rate=1e-2), w, g)
        for a, gi in zip(new, g):
            np.testing.assert_allclose(a, -1e-2 * gi / (np.abs(gi) + 1e-8), rtol=1e-9)
            np.testing.assert_allclose(np.abs(a), 1e-2, rtol=1e-3)

    def test_consistent_sign(self):
        w = const_weights(0.0)
        g = const_weights(-2.0)
        st_ = AdamState()
        w1 = adam_step(st_, w, g)
        w2 = adam_step(st_, w1, g)
        assert np.all(w1[0] > w[0]) and np.all(w2[0] > w1[0])

    def test_nonfinite_gradients_zeroed(self):
        w = const_weights(0.5)
        g = const_weights(1.0)
        g[0][0, 0] = np.nan
        g[3][1, 2] = np.inf
        st_ = AdamState()
        new = adam_step(st_, w, g)
        assert st_.nonfinite_count == 2
        assert new.is_finite()
        assert new[0][0, 0] == 0.5

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.floats(1e-6, 1e6))
    def test_stays_finite(self, seed, scale):
        rng = np.random.default_rng(seed)
        w = const_weights(0.1)
        st_ = AdamState()
        for _ in range(3):
            g = NetworkWeights([scale * rng.normal(size=m.shape) for m in w])
            w = adam_step(st_, w, g)
        assert w.is_finite()


class TestEma:
    def test_first_update_copies(self):
        s = EmaState(alpha=0.99)
        out = ema_update(s, const_weights(3.0))
        assert np.all(out[0] == 3.0)

    def test_alpha_zero_tracks(self):
        s = EmaState(alpha=0.0)
        for v in (1.0, -2.0, 5.0):
            assert np.all(ema_update(s, const_weights(v))[2] == v)

    def test_constant_stream(self):
        s = EmaState(alpha=0.99)
        for _ in range(10_000):
            out = ema_update(s, const_weights(0.7))
        np.testing.assert_allclose(out[0], 0.7, rtol=1e-12)

    def test_constant_stream_float32_exact(self):
        c = NetworkWeights.glorot(np.random.default_rng(1))
        s = EmaState(alpha=0.99)
        for _ in range(10_000):
            out = ema_update(s, c)
        for a, b in zip(out, c):
            assert a.dtype == np.float32
            np.testing.assert_array_equal(a, b)

    def test_printed_form_shrinks_constant(self):
        s = EmaState(alpha=0.99, printed_form=True)
        ema_update(s, const_weights(1.0))
        out = ema_update(s, const_weights(1.0))
        # (1 - a) / (1 - a^2) + a (1 - a) = 0.50251... + 0.0099
        assert out[0][0, 0] == pytest.approx(0.01 / (1 - 0.99**2) + 0.99 * 0.01, rel=1e-12)
        assert out[0][0, 0] == pytest.approx(0.512, abs=1e-3)

    def test_matches_weighted_average(self):
        a = 0.9
        vals = np.random.default_rng(0).normal(size=20)
        s = EmaState(alpha=a)
        for t, v in enumerate(vals, start=1):
            out = ema_update(s, const_weights(v))[0][0, 0]
            wts = (1 - a) * a ** np.arange(t - 1, -1, -1)
            assert out == pytest.approx(np.sum(wts * vals[:t]) / (1 - a**t), rel=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31), st.floats(0, 0.999))
    def test_linearity(self, ca, cb, seed, alpha):
        rng = np.random.default_rng(seed)
        sw, sv, sc = EmaState(alpha=alpha), EmaState(alpha=alpha), EmaState(alpha=alpha)
        for _ in range(6):
            w = NetworkWeights([rng.normal(size=m.shape) for m in NetworkWeights.zeros()])
            v = NetworkWeights([rng.normal(size=m.shape) for m in NetworkWeights.zeros()])
            ew, ev = ema_update(sw, w), ema_update(sv, v)
            ec = ema_update(sc, NetworkWeights([ca * x + cb * y for x, y in zip(w, v)]))
        for c, x, y in zip(ec, ew, ev):
            np.testing.assert_allclose(c, ca * x + cb * y, atol=1e-10)

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            ema_update(EmaState(alpha=1.0), const_weights(1.0))
