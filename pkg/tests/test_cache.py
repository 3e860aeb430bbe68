import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nrc.cache import (NeuralRadianceCache, RadianceQuery, TrainingRecords, lcg_constants,
                       lcg_permute)
from nrc.mlp import NetworkWeights

BOUNDS = (np.zeros(3), np.ones(3))


def queries(n, seed=0, refl=None):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    a = rng.uniform(0, 0.5, (n, 3)) if refl is None else np.tile(refl[0], (n, 1))
    b = rng.uniform(0, 0.5, (n, 3)) if refl is None else np.tile(refl[1], (n, 1))
    return RadianceQuery(rng.random((n, 3)), d, d, rng.uniform(0, 2, n), a, b)


def records(n, seed=0):
    q = queries(n, seed)
    t = np.random.default_rng(seed + 100).uniform(0, 2, (n, 3))
    return TrainingRecords(q, t)


class TestLcg:
    def test_examples(self):
        assert list(lcg_permute(1, seed=5)) == [0]
        assert list(lcg_permute(4, a=5, c=3)) == [3, 0, 1, 2]

    @given(st.integers(1, 5000), st.integers(0, 2**32))
    def test_bijection(self, n, seed):
        p = lcg_permute(n, seed)
        assert np.array_equal(np.sort(p), np.arange(n))

    @given(st.integers(2, 10**6), st.integers(0, 2**32))
    def test_full_period_constants(self, n, seed):
        m, a, c = lcg_constants(n, seed)
        assert m >= n and m & (m - 1) == 0 and m // 2 < n
        assert a % 4 == 1 and c % 2 == 1

    def test_deterministic_and_seed_dependent(self):
        assert np.array_equal(lcg_permute(1000, 3), lcg_permute(1000, 3))
        assert not np.array_equal(lcg_permute(1000, 3), lcg_permute(1000, 4))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            lcg_permute(0)


class TestQuery:
    def test_black_material(self):
        cache = NeuralRadianceCache(BOUNDS, seed=1)
        q = queries(20, refl=(np.zeros(3), np.zeros(3)))
        np.testing.assert_array_equal(cache.query(q), 0.0)

    def test_zero_weights(self):
        cache = NeuralRadianceCache(BOUNDS)
        cache.ema.weights = NetworkWeights.zeros()
        np.testing.assert_array_equal(cache.query(queries(20)), 0.0)

    def test_uses_ema_weights(self):
        cache = NeuralRadianceCache(BOUNDS, seed=2)
        q = queries(20)
        before = cache.query(q)
        cache.weights = NetworkWeights.zeros()
        np.testing.assert_array_equal(cache.query(q), before)

    def test_non_negative_and_pure(self):
        cache = NeuralRadianceCache(BOUNDS, seed=3)
        q = queries(500)
        a = cache.query(q)
        assert np.all(a >= 0)
        assert np.array_equal(a, cache.query(q))

    def test_factorization_scales(self):
        cache = NeuralRadianceCache(BOUNDS, seed=4)
        q = queries(64)
        raw = cache.network_output(q)
        for s in (0.25, 2.0, 8.0):
            np.testing.assert_array_equal(cache.factorize(raw, s * q.reflectance),
                                          s * cache.factorize(raw, q.reflectance))

    def test_empty(self):
        cache = NeuralRadianceCache(BOUNDS)
        assert cache.query(queries(0)).shape == (0, 3)


class TestTraining:
    def test_empty_is_noop(self):
        cache = NeuralRadianceCache(BOUNDS, seed=5)
        w0 = cache.weights.copy()
        e0 = cache.ema.weights.copy()
        stats = cache.train_frame(TrainingRecords(queries(0), np.zeros((0, 3))))
        assert stats.n_used == 0 and cache.adam.t == 0
        for a, b in zip(w0, cache.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(e0, cache.ema.weights):
            np.testing.assert_array_equal(a, b)

    def test_deterministic(self):
        results = []
        for _ in range(2):
            cache = NeuralRadianceCache(BOUNDS, seed=6)
            for f in range(3):
                cache.train_frame(records(3000, f), seed=f)
            results.append(cache)
        for a, b in zip(results[0].weights, results[1].weights):
            assert np.array_equal(a, b)
        for a, b in zip(results[0].ema.weights, results[1].ema.weights):
            assert np.array_equal(a, b)

    def test_batches_and_steps(self):
        cache = NeuralRadianceCache(BOUNDS, n_batches=4, batch_size=100)
        stats = cache.train_frame(records(1000))
        assert len(stats.losses) == 4 and stats.n_used == 400
        assert cache.adam.t == 4 and cache.ema.t == 4

    def test_short_frame_shrinks_batches(self):
        cache = NeuralRadianceCache(BOUNDS, n_batches=4, batch_size=100)
        stats = cache.train_frame(records(150))
        assert len(stats.losses) == 4 and stats.n_used == 148

    def test_each_record_used_once(self, monkeypatch):
        cache = NeuralRadianceCache(BOUNDS, n_batches=4, batch_size=200)
        n = 1000
        rec = records(n)
        rec.target[:, 0] = np.arange(n)
        seen = []
        orig = cache.step

        def spy(encoded, reflectance, target):
            seen.extend(target[:, 0].astype(int))
            return orig(encoded, reflectance, target)

        monkeypatch.setattr(cache, "step", spy)
        cache.train_frame(rec, seed=9)
        assert len(seen) == 800 and len(set(seen)) == 800

    def test_rejects_bad_targets(self):
        cache = NeuralRadianceCache(BOUNDS, n_batches=1, batch_size=100)
        rec = records(50)
        rec.target[3] = np.nan
        rec.target[7, 1] = np.inf
        rec.target[9, 2] = -1.0
        stats = cache.train_frame(rec)
        assert stats.n_rejected == 3 and stats.n_used == 47
        assert cache.weights.is_finite()

    def test_overfit_single_point(self):
        cache = NeuralRadianceCache(BOUNDS, seed=7)
        q = queries(1, refl=(np.full(3, 0.6), np.full(3, 0.4)))
        target = np.array([[0.8, 0.8, 0.8]])
        enc = np.repeat(cache.encode(q), 32, axis=0)
        refl = np.repeat(q.reflectance, 32, axis=0)
        tgt = np.repeat(target, 32, axis=0)
        for _ in range(1000):
            cache.step(enc, refl, tgt)
        np.testing.assert_allclose(cache.query(q), target, rtol=0.01)

    def test_loss_decreases_on_fixed_batch(self):
        cache = NeuralRadianceCache(BOUNDS, seed=8, n_batches=4, batch_size=256)
        rec = records(1024)
        losses = [cache.train_frame(rec, seed=f).loss for f in range(200)]
        assert losses[-1] < losses[0]


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        cache = NeuralRadianceCache(BOUNDS, seed=10, ema_alpha=0.95, learning_rate=3e-3)
        cache.train_frame(records(2000), seed=1)
        cache.save(tmp_path / "c.ckpt")
        other = NeuralRadianceCache(BOUNDS, seed=99)
        other.load(tmp_path / "c.ckpt")
        for a, b in zip(cache.weights, other.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(cache.ema.weights, other.ema.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(cache.adam.m + cache.adam.v, other.adam.m + other.adam.v):
            np.testing.assert_array_equal(a, b)
        assert other.adam.t == cache.adam.t and other.ema.t == cache.ema.t
        assert other.ema.alpha == 0.95 and other.adam.learning_rate == 3e-3
        # training continues identically
        cache.train_frame(records(500, 3), seed=2)
        other.train_frame(records(500, 3), seed=2)
        for a, b in zip(cache.ema.weights, other.ema.weights):
            np.testing.assert_array_equal(a, b)

    def test_reads_version_one(self, tmp_path):
        # version 1 files end after the Adam moments; the EMA restarts from its float32 weights
        cache = NeuralRadianceCache(BOUNDS, seed=12)
        cache.train_frame(records(500), seed=1)
        cache.save(tmp_path / "c.ckpt")
        raw = bytearray((tmp_path / "c.ckpt").read_bytes())
        n = 16 + 4 * (5 * 64 * 64 + 3 * 64)
        raw[2 * n + 4:2 * n + 8] = (1).to_bytes(4, "little")
        raw = raw[:len(raw) - 8 * (5 * 64 * 64 + 3 * 64)]
        (tmp_path / "v1.ckpt").write_bytes(bytes(raw))
        other = NeuralRadianceCache(BOUNDS)
        other.load(tmp_path / "v1.ckpt")
        for a, b in zip(cache.ema.weights, other.ema.weights):
            np.testing.assert_array_equal(a, b)
        other.train_frame(records(500, 3), seed=2)
        assert other.ema.weights.is_finite()

    def test_truncated_ema_block(self, tmp_path):
        cache = NeuralRadianceCache(BOUNDS)
        cache.save(tmp_path / "c.ckpt")
        raw = (tmp_path / "c.ckpt").read_bytes()
        (tmp_path / "t.ckpt").write_bytes(raw[:-16])
        with pytest.raises(ValueError, match="truncated"):
            NeuralRadianceCache(BOUNDS).load(tmp_path / "t.ckpt")

    def test_corrupt_optimizer_block(self, tmp_path):
        cache = NeuralRadianceCache(BOUNDS)
        cache.save(tmp_path / "c.ckpt")
        raw = bytearray((tmp_path / "c.ckpt").read_bytes())
        n = 16 + 4 * (5 * 64 * 64 + 3 * 64)
        raw[2 * n] ^= 0xFF
        (tmp_path / "bad.ckpt").write_bytes(bytes(raw))
        with pytest.raises(ValueError):
            NeuralRadianceCache(BOUNDS).load(tmp_path / "bad.ckpt")
