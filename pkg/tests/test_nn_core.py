import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vprmerger import _kernels
from vprmerger.nn_core import (
    AdamState,
    BinaryLatentMatrix,
    PackedBits,
    adam_step,
    binarize,
    dropout,
    make_rng,
    packed_matvec,
    softmax_ce,
    ste_grad,
)


def naive_sign(latent):
    out = np.empty(latent.shape, dtype=int)
    for i in range(latent.shape[0]):
        for j in range(latent.shape[1]):
            out[i, j] = 1 if latent[i, j] >= 0 else -1
    return out


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestBinarize:
    def test_zero_maps_to_plus_one(self):
        assert np.all(binarize(np.zeros((3, 4))) == 1)

    def test_sign_cases(self):
        np.testing.assert_array_equal(binarize(np.array([[-0.3, 0.7]])), [[-1, 1]])

    def test_packed_view_agrees_with_naive_sign(self):
        latent = make_rng(3).uniform(-1, 1, size=(5, 7))
        m = BinaryLatentMatrix(latent)
        expected = naive_sign(m.latent)
        np.testing.assert_array_equal(binarize(m), expected)
        np.testing.assert_array_equal(m.packed.signs(), expected)

    def test_idempotent(self):
        latent = make_rng(4).uniform(-1, 1, size=(6, 9))
        once = binarize(latent)
        np.testing.assert_array_equal(binarize(once.astype(float)), once)

    def test_packed_view_tracks_updates(self):
        m = BinaryLatentMatrix(np.full((2, 3), 0.5))
        assert m.packed.signs().min() == 1
        m.latent[0, 1] = -0.5
        m.mark_dirty()
        assert m.packed.signs()[0, 1] == -1


class TestPackedBits:
    @given(rows=st.integers(1, 9), cols=st.integers(1, 200), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_roundtrip_and_zero_padding(self, rows, cols, seed):
        bits = make_rng(seed).random((rows, cols)) < 0.5
        packed = PackedBits.from_bool(bits)
        assert packed.words.shape == (rows, -(-cols // 64))
        np.testing.assert_array_equal(packed.unpack(), bits)
        pad = packed.words[:, -1] >> np.uint64(cols % 64) if cols % 64 else np.zeros(rows, np.uint64)
        assert np.all(pad == 0)
        again = PackedBits.from_flat_bytes(packed.to_flat_bytes(), rows, cols)
        assert again == packed
        assert len(packed.to_flat_bytes()) == packed.flat_nbytes()

    def test_lsb_first_within_word(self):
        bits = np.zeros((1, 70), dtype=bool)
        bits[0, 0] = bits[0, 65] = True
        packed = PackedBits.from_bool(bits)
        assert packed.words[0, 0] == 1
        assert packed.words[0, 1] == 2


class TestPackedMatvec:
    def test_all_positive_row(self):
        w = PackedBits.from_bool(np.ones((3, 64), dtype=bool))
        np.testing.assert_array_equal(packed_matvec(w, np.ones(64)), [64.0] * 3)

    def test_all_negative_row(self):
        x = make_rng(0).normal(size=37)
        w = PackedBits.from_bool(np.zeros((2, 37), dtype=bool))
        np.testing.assert_allclose(packed_matvec(w, x), [-x.sum()] * 2, rtol=1e-12)

    def test_matches_float_reference(self):
        rng = make_rng(1)
        bits = rng.random((8, 100)) < 0.5
        x = rng.normal(size=100)
        ref = np.where(bits, 1.0, -1.0) @ x
        np.testing.assert_allclose(packed_matvec(PackedBits.from_bool(bits), x), ref, rtol=1e-9, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            packed_matvec(PackedBits.from_bool(np.ones((2, 10), dtype=bool)), np.ones(11))


class TestSte:
    def test_interior_passes(self):
        g = make_rng(0).normal(size=(3, 4))
        np.testing.assert_array_equal(ste_grad(g, np.full((3, 4), 0.5)), g)

    def test_boundary_passes(self):
        g = np.array([[2.0, -3.0]])
        np.testing.assert_array_equal(ste_grad(g, np.array([[1.0, -1.0]])), g)

    def test_outside_blocked(self):
        np.testing.assert_array_equal(ste_grad(np.ones((1, 2)), np.array([[1.5, 0.2]])), [[0.0, 1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ste_grad(np.ones((2, 2)), np.ones((2, 3)))


class TestDropout:
    def test_rate_zero_identity(self):
        x = make_rng(0).normal(size=50)
        np.testing.assert_array_equal(dropout(x, 0.0, make_rng(1), training=True), x)

    @pytest.mark.parametrize("rate", [0.3, 0.75, 0.99])
    def test_inference_identity(self, rate):
        x = make_rng(0).normal(size=50)
        np.testing.assert_array_equal(dropout(x, rate, make_rng(1), training=False), x)

    def test_inverted_scaling_mean(self):
        out = dropout(np.ones(100_000), 0.75, make_rng(7), training=True)
        assert 0.97 <= out.mean() <= 1.03
        assert set(np.unique(out)) <= {0.0, 4.0}

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            dropout(np.ones(3), 1.0, make_rng(0), training=True)


class TestSoftmaxCe:
    def test_uniform(self):
        loss, grad = softmax_ce(np.array([0.0, 0.0]), 0)
        assert loss == pytest.approx(math.log(2))
        np.testing.assert_allclose(grad, [-0.5, 0.5])

    def test_confident_correct(self):
        loss, _ = softmax_ce(np.array([10.0, -10.0]), 0)
        assert loss < 1e-8

    def test_large_logits_stay_finite(self):
        loss, grad = softmax_ce(np.array([1e4, -1e4, 0.0]), 1)
        assert np.isfinite(loss) and np.all(np.isfinite(grad))

    def test_gradient_matches_finite_differences(self):
        rng = make_rng(11)
        for _ in range(20):
            z = rng.normal(size=20)
            label = int(rng.integers(20))
            _, grad = softmax_ce(z, label)
            fd = central_diff(lambda v: softmax_ce(v, label)[0], z)
            np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-9)

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            softmax_ce(np.zeros(3), 3)


class TestAdam:
    def test_zero_grad(self):
        p = np.array([0.3, -0.2])
        state = AdamState(p.shape)
        adam_step(p, np.zeros(2), state)
        np.testing.assert_array_equal(p, [0.3, -0.2])
        assert state.step == 1

    def test_first_step_size(self):
        # m_hat = g, v_hat = g^2, so the step is lr * 1 / (1 + eps)
        p = np.zeros(1)
        adam_step(p, np.ones(1), AdamState(p.shape, lr=0.001))
        assert p[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)

    def test_descent_direction(self):
        p = np.zeros(3)
        state = AdamState(p.shape)
        g = np.array([1.0, -2.0, 0.5])
        for _ in range(100):
            adam_step(p, g, state)
        np.testing.assert_array_equal(np.sign(p), -np.sign(g))

    def test_clamp(self):
        p = np.array([0.9995])
        adam_step(p, -np.ones(1), AdamState(p.shape, lr=0.01), clamp=True)
        assert p[0] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(2), np.zeros(3), AdamState((2,)))


def test_rng_reproducible():
    np.testing.assert_array_equal(make_rng(5).random(10), make_rng(5).random(10))
    assert not np.array_equal(make_rng(5).random(10), make_rng(6).random(10))


def test_fused_step_matches_reference():
    rng = make_rng(21)
    a, n = 2, 5
    w1 = rng.uniform(-1, 1, (a, 2048)).astype(np.float32)
    w2 = rng.uniform(-1, 1, (n, 2048 * a)).astype(np.float32)
    x = rng.uniform(-1, 1, 2048).astype(np.float32)
    ref1, ref2 = w1.copy(), w2.copy()
    o1, o2 = AdamState(w1.shape, dtype=np.float32), AdamState(w2.shape, dtype=np.float32)
    r1, r2 = AdamState(w1.shape), AdamState(w2.shape)
    for step in range(3):
        keep = rng.random(w1.size) >= 0.75
        loss = _kernels.baseline_step(w1, w2, o1, o2, x, keep, step, 0.75)
        ref_loss = _kernels.baseline_step_reference(ref1, ref2, r1, r2, x, keep, step, 0.75)
        assert loss == pytest.approx(ref_loss, rel=1e-5, abs=1e-6)
    np.testing.assert_allclose(w1, ref1, atol=1e-5)
    np.testing.assert_allclose(w2, ref2, atol=1e-5)
    assert np.all(np.abs(w2) <= 1.0)
