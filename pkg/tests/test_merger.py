import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vprmerger.merger import MergerNet, conv1d_full_height, conv_output_length, merger_train
from vprmerger.nn_core import dropout_mask, make_rng


def naive_conv(S, theta):
    q, n = S.shape
    w = theta.shape[1]
    t = np.zeros(n + 1 - w)
    for i in range(n + 1 - w):
        for a in range(q):
            for k in range(w):
                t[i] += theta[a, k] * S[a, i + k]
    return t


def reference_scores(S, theta, F, mask=None):
    h = np.maximum(naive_conv(S, theta), 0.0)
    if mask is not None:
        h = h * mask
    o = np.zeros(F.shape[1])
    for j in range(F.shape[1]):
        for i in range(F.shape[0]):
            o[j] += h[i] * F[i, j]
    return o


def ce_loss(o, label):
    z = o - o.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def rel_close(a, b, rtol):
    np.testing.assert_allclose(a, b, rtol=rtol, atol=rtol * 1e-3 * max(1.0, np.abs(b).max()))


class TestConv:
    def test_full_scale_length(self):
        assert conv_output_length(1000, 4) == 997
        assert conv1d_full_height(np.ones((2, 1000)), np.ones((2, 4))).shape == (997,)

    def test_width_one_is_column_sum(self):
        S = make_rng(0).normal(size=(3, 12))
        np.testing.assert_allclose(conv1d_full_height(S, np.ones((3, 1))), S.sum(axis=0), rtol=1e-14)

    def test_matches_naive(self):
        rng = make_rng(1)
        S, theta = rng.normal(size=(2, 9)), rng.normal(size=(2, 4))
        rel_close(conv1d_full_height(S, theta), naive_conv(S, theta), 1e-12)

    def test_full_width_is_inner_product(self):
        rng = make_rng(2)
        S, theta = rng.normal(size=(3, 7)), rng.normal(size=(3, 7))
        t = conv1d_full_height(S, theta)
        assert t.shape == (1,)
        assert t[0] == pytest.approx(float(np.sum(S * theta)), rel=1e-12)

    def test_width_larger_than_n(self):
        with pytest.raises(ValueError):
            conv1d_full_height(np.ones((2, 3)), np.ones((2, 4)))

    @given(q=st.integers(1, 4), n=st.integers(1, 30), data=st.data())
    @settings(max_examples=40, deadline=None)
    def test_linearity(self, q, n, data):
        w = data.draw(st.integers(1, n))
        alpha = data.draw(st.floats(-10, 10))
        beta = data.draw(st.floats(-10, 10))
        rng = make_rng(data.draw(st.integers(0, 2**31)))
        S1, S2, theta = rng.normal(size=(q, n)), rng.normal(size=(q, n)), rng.normal(size=(q, w))
        lhs = conv1d_full_height(alpha * S1 + beta * S2, theta)
        rhs = alpha * conv1d_full_height(S1, theta) + beta * conv1d_full_height(S2, theta)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


class TestForward:
    def test_shape_invariants(self):
        net = MergerNet.init(2, 30, 4)
        assert net.theta.shape == (2, 4)
        assert net.F.shape == (27, 30)

    def test_init_ranges(self):
        net = MergerNet.init(2, 100, 4, seed=3)
        assert np.abs(net.theta).max() <= 1 / np.sqrt(8)
        assert np.abs(net.F).max() <= 1 / np.sqrt(97)

    def test_inconsistent_F_rejected(self):
        with pytest.raises(ValueError):
            MergerNet(np.ones((2, 4)), np.ones((10, 10)))

    def test_zero_network(self):
        net = MergerNet(np.zeros((2, 3)), make_rng(0).normal(size=(8, 10)))
        out = net.forward(make_rng(1).normal(size=(2, 10)))
        assert np.all(out.t == 0) and np.all(out.o == 0)
        assert out.predicted == 0
        assert out.confidence == pytest.approx(0.1)

    def test_dominant_column(self):
        n, w = 12, 1
        net = MergerNet(np.ones((2, w)), np.eye(n))
        S = np.zeros((2, n))
        S[:, 7] = 100.0
        assert net.predict(S)[0] == 7

    def test_matches_reference(self):
        rng = make_rng(5)
        net = MergerNet(rng.normal(size=(2, 4)), rng.normal(size=(17, 20)))
        S = rng.normal(size=(2, 20))
        out = net.forward(S)
        rel_close(out.o, reference_scores(S, net.theta, net.F), 1e-9)
        assert out.predicted == int(np.argmax(out.o))

    def test_training_forward_applies_dropout_after_relu(self):
        rng = make_rng(6)
        net = MergerNet(rng.normal(size=(2, 4)), rng.normal(size=(17, 20)), dropout_rate=0.3)
        S = rng.normal(size=(2, 20))
        out = net.forward(S, training=True, rng=make_rng(9))
        mask = dropout_mask(17, 0.3, make_rng(9))
        rel_close(out.o, reference_scores(S, net.theta, net.F, mask), 1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            MergerNet.init(2, 10, 4).forward(np.zeros((3, 10)))

    def test_predict_argmax(self):
        net = MergerNet(np.ones((1, 1)), np.eye(3))
        place, conf = net.predict(np.array([[1.0, 3.0, 2.0]]))
        assert place == 1
        assert conf == pytest.approx(np.exp(3) / (np.exp(1) + np.exp(2) + np.exp(3)))

    def test_uniform_output(self):
        net = MergerNet(np.ones((2, 2)), np.zeros((4, 5)))
        place, conf = net.predict(np.ones((2, 5)))
        assert place == 0 and conf == pytest.approx(1 / 5)

    def test_batch_matches_single(self):
        rng = make_rng(8)
        net = MergerNet.init(2, 25, 4, seed=1)
        S = rng.normal(size=(6, 2, 25)) * 10
        places, confs = net.predict_batch(S)
        for i in range(6):
            p, c = net.predict(S[i])
            assert p == places[i]
            assert c == pytest.approx(confs[i], rel=1e-12)

    @given(scale=st.floats(1e-2, 1e2), shift=st.floats(-100, 100))
    @settings(max_examples=25, deadline=None)
    def test_prediction_invariant_under_positive_affine_output(self, scale, shift):
        o = make_rng(4).normal(size=15)
        assert np.argmax(o) == np.argmax(scale * o + shift)


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("use_mask", [False, True])
    def test_finite_differences(self, seed, use_mask):
        rng = make_rng(seed)
        q, n, w = 2, 9, 4
        net = MergerNet(rng.normal(size=(q, w)), rng.normal(size=(n + 1 - w, n)))
        S = rng.normal(size=(q, n)) * 2
        label = int(rng.integers(n))
        mask = dropout_mask(n + 1 - w, 0.3, rng) if use_mask else None
        _, g_theta, g_F = net.loss_and_grads(S, label, mask)

        def loss_theta(th):
            return ce_loss(reference_scores(S, th, net.F, mask), label)

        def loss_F(F):
            return ce_loss(reference_scores(S, net.theta, F, mask), label)

        from test_nn_core import central_diff

        rel_close(g_theta, central_diff(loss_theta, net.theta.copy()), 1e-4)
        rel_close(g_F, central_diff(loss_F, net.F.copy()), 1e-4)


def separable_samples(n_samples, n, q, seed):
    rng = make_rng(seed)
    labels = rng.integers(n, size=n_samples)
    S = rng.normal(size=(n_samples, q, n))
    S[np.arange(n_samples), :, labels] += 5.0
    return S, labels


class TestTrain:
    def test_zero_epochs(self):
        net = MergerNet.init(2, 20, 4, seed=0)
        before = net.copy()
        S, y = separable_samples(10, 20, 2, 0)
        hist = merger_train(net, S, y, epochs=0)
        assert hist.loss == []
        np.testing.assert_array_equal(net.theta, before.theta)
        np.testing.assert_array_equal(net.F, before.F)

    def test_separable_reaches_full_accuracy(self):
        S, y = separable_samples(50, 20, 2, 1)
        net = MergerNet.init(2, 20, 4, seed=1)
        hist = merger_train(net, S, y, epochs=100, seed=2)
        assert hist.accuracy[-1] == 1.0
        assert hist.loss[-1] < hist.loss[0]

    def test_inconsistent_shapes(self):
        net = MergerNet.init(2, 20, 4)
        with pytest.raises(ValueError):
            merger_train(net, np.zeros((5, 3, 20)), np.zeros(5, dtype=int))
        with pytest.raises(ValueError):
            merger_train(net, np.zeros((5, 2, 20)), np.full(5, 20))

    def test_reproducible(self):
        S, y = separable_samples(20, 10, 2, 3)
        nets = [MergerNet.init(2, 10, 3, seed=4) for _ in range(2)]
        for net in nets:
            merger_train(net, S, y, epochs=5, seed=5)
        np.testing.assert_array_equal(nets[0].F, nets[1].F)

    def test_round_to_float32(self):
        net = MergerNet.init(2, 10, 3, seed=4)
        net.round_to_float32()
        np.testing.assert_array_equal(net.F, net.F.astype(np.float32))
