import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elsim.errors import ElsimError
from elsim.nn import (Mlp, TrainBatch, classifier_loss_and_grads, forward, polyak_update,
                      regression_loss_and_grads, softmax, train_classifier_step,
                      train_regression_step)

# mpmath, 30 digits: e/(e+3) and 1/(e+3)
SOFTMAX_1000 = [0.475366886418671691, 0.174877704527109436, 0.174877704527109436,
                0.174877704527109436]
LN4 = 1.38629436111989061883


def reference_forward(weights, biases, x):
    """Plain loop forward pass, independent of Mlp.activations."""
    h = np.atleast_2d(x)
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if i < len(weights) - 1:
            h = np.tanh(h)
    return h


def reference_ce(weights, biases, x, y):
    logits = reference_forward(weights, biases, x)
    logits = logits - logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(y)), y].mean()


def reference_mse(weights, biases, x, idx, t):
    out = reference_forward(weights, biases, x)
    return np.mean((out[np.arange(len(t)), idx] - t) ** 2)


def central_differences(net, loss_fn, eps=1e-6):
    grad = np.zeros_like(net.flat)
    for i in range(net.flat.size):
        old = net.flat[i]
        net.flat[i] = old + eps
        up = loss_fn(net.weights, net.biases)
        net.flat[i] = old - eps
        down = loss_fn(net.weights, net.biases)
        net.flat[i] = old
        grad[i] = (up - down) / (2 * eps)
    return grad


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


class TestForward:
    def test_zero_net_outputs_zero(self):
        net = Mlp((2, 8, 3), zero=True)
        assert np.array_equal(forward(net, [0.3, -1.0]), np.zeros(3))

    def test_deterministic(self):
        net = Mlp((2, 16, 16, 4), rng=np.random.default_rng(0))
        x = np.array([0.1, 0.7])
        assert np.array_equal(forward(net, x), forward(net, x.copy()))

    def test_linear_closed_form(self):
        net = Mlp((1, 1), zero=True)
        net.weights[0][0, 0] = 1.5
        net.biases[0][0] = -0.25
        assert forward(net, [2.0])[0] == pytest.approx(1.5 * 2.0 - 0.25)

    def test_matches_reference_forward(self):
        net = Mlp((2, 64, 64, 4), rng=np.random.default_rng(3))
        x = np.random.default_rng(4).normal(size=(10, 2))
        np.testing.assert_allclose(forward(net, x), reference_forward(net.weights, net.biases, x),
                                   rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        net = Mlp((2, 4, 3), rng=np.random.default_rng(0))
        with pytest.raises(ElsimError):
            forward(net, [1.0, 2.0, 3.0])

    def test_parameter_count_from_layer_sizes(self):
        net = Mlp((2, 64, 64, 4), rng=np.random.default_rng(0))
        assert net.n_params == 2 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.zeros(4)), [0.25] * 4, atol=1e-15)

    @pytest.mark.parametrize("c", [-1e3, -3.0, 0.0, 7.5, 1e4])
    def test_constant_pair(self, c):
        np.testing.assert_allclose(softmax([c, c]), [0.5, 0.5], atol=1e-15)

    def test_one_hot_logit(self):
        np.testing.assert_allclose(softmax([1.0, 0, 0, 0]), SOFTMAX_1000, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-300, 300), min_size=1, max_size=12), st.floats(-300, 300))
    def test_normalized_and_shift_invariant(self, logits, shift):
        p = softmax(logits)
        assert np.all(p > 0)
        assert abs(p.sum() - 1.0) <= 1e-9
        np.testing.assert_allclose(softmax(np.array(logits) + shift), p, atol=1e-9)


class TestClassifier:
    def test_uniform_predictions_give_ln4(self):
        net = Mlp((2, 8, 4), zero=True)
        batch = TrainBatch(np.random.default_rng(0).random((16, 2)), np.arange(16) % 4)
        assert train_classifier_step(net, batch, 0.001) == pytest.approx(LN4, abs=1e-12)

    def test_confident_correct_has_tiny_loss_and_gradient(self):
        net = Mlp((2, 2), zero=True)
        net.weights[0][...] = [[50.0, -50.0], [0.0, 0.0]]
        x = np.array([[1.0, 0.0], [1.0, 0.3]])
        loss, grad = classifier_loss_and_grads(net, x, np.array([0, 0]))
        assert loss < 1e-12
        assert np.linalg.norm(grad) < 1e-12

    def test_empty_batch_rejected(self):
        with pytest.raises(ElsimError):
            TrainBatch(np.zeros((0, 2)), np.zeros(0, dtype=int))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            net = Mlp((2, 6, 5, 4), rng=rng)
            x = rng.normal(size=(7, 2))
            y = rng.integers(0, 4, size=7)
            _, grad = classifier_loss_and_grads(net, x, y)
            fd = central_differences(net, lambda w, b: reference_ce(w, b, x, y))
            assert rel_err(grad, fd) < 1e-4

    def test_sgd_matches_hand_written_softmax_regression(self):
        # separable toy set: class = [x0 > 0.5]
        rng = np.random.default_rng(5)
        x = rng.random((40, 2))
        y = (x[:, 0] > 0.5).astype(int)
        net = Mlp((2, 2), rng=np.random.default_rng(6), optimizer="sgd")
        w, b = net.weights[0].copy(), net.biases[0].copy()
        losses = []
        for _ in range(100):
            losses.append(train_classifier_step(net, TrainBatch(x, y), 0.5))
            # independent oracle: softmax regression gradient by hand
            z = x @ w + b
            p = np.exp(z - z.max(1, keepdims=True))
            p /= p.sum(1, keepdims=True)
            p[np.arange(len(y)), y] -= 1.0
            w -= 0.5 * x.T @ p / len(y)
            b -= 0.5 * p.sum(0) / len(y)
        np.testing.assert_allclose(net.weights[0], w, atol=1e-10)
        np.testing.assert_allclose(net.biases[0], b, atol=1e-10)
        assert all(b_ < a_ for a_, b_ in zip(losses, losses[1:]))


class TestRegression:
    def test_targets_equal_outputs_is_noop(self):
        net = Mlp((2, 8, 3), rng=np.random.default_rng(1))
        x = np.random.default_rng(2).random((5, 2))
        idx = np.array([0, 1, 2, 1, 0])
        t = forward(net, x)[np.arange(5), idx]
        before = net.flat.copy()
        loss = train_regression_step(net, TrainBatch(x, t, idx), 0.01)
        assert loss == 0.0
        assert np.array_equal(net.flat, before)

    def test_linear_unit_learns_slope_two(self):
        # closed-form least squares for y = 2x is w = 2, b = 0
        x = np.linspace(-1, 1, 21)[:, None]
        net = Mlp((1, 1), zero=True, optimizer="sgd")
        for _ in range(2000):
            loss = train_regression_step(net, TrainBatch(x, 2 * x[:, 0]), 0.1)
            assert loss >= 0
        assert net.weights[0][0, 0] == pytest.approx(2.0, abs=1e-6)
        assert net.biases[0][0] == pytest.approx(0.0, abs=1e-6)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            net = Mlp((2, 5, 6, 3), rng=rng)
            x = rng.normal(size=(6, 2))
            idx = rng.integers(0, 3, size=6)
            t = rng.normal(size=6)
            _, grad = regression_loss_and_grads(net, x, t, idx)
            fd = central_differences(net, lambda w, b: reference_mse(w, b, x, idx, t))
            assert rel_err(grad, fd) < 1e-4


class TestPolyak:
    def setup_method(self):
        self.online = Mlp((2, 4, 2), rng=np.random.default_rng(0))
        self.target = Mlp((2, 4, 2), rng=np.random.default_rng(1))

    def test_tau_one_copies(self):
        polyak_update(self.target, self.online, 1.0)
        assert np.array_equal(self.target.flat, self.online.flat)

    def test_tau_zero_keeps(self):
        before = self.target.flat.copy()
        polyak_update(self.target, self.online, 0.0)
        assert np.array_equal(self.target.flat, before)

    def test_midpoint(self):
        t, o = Mlp((1, 1), zero=True), Mlp((1, 1), zero=True)
        o.flat[...] = 1.0
        polyak_update(t, o, 0.5)
        assert np.all(t.flat == 0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ElsimError):
            polyak_update(Mlp((2, 3, 2), zero=True), self.online, 0.5)


def test_identical_seeds_and_batches_are_bit_identical():
    def run():
        net = Mlp((2, 64, 64, 4), rng=np.random.default_rng(42))
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.random((16, 2))
            train_classifier_step(net, TrainBatch(x, rng.integers(0, 4, 16)), 0.001)
        return net.flat.tobytes()
    assert run() == run()


def test_serialization_round_trip():
    net = Mlp((2, 64, 64, 4), rng=np.random.default_rng(9))
    data = net.to_bytes()
    assert data[:4] == (4).to_bytes(4, "little")
    back = Mlp.from_bytes(data)
    assert back.layer_sizes == net.layer_sizes
    assert back.to_bytes() == data


def test_clone_is_independent():
    net = Mlp((2, 4, 2), rng=np.random.default_rng(0))
    twin = net.clone()
    twin.flat += 1.0
    assert not np.array_equal(twin.flat, net.flat)
    assert np.shares_memory(twin.weights[0], twin.flat)
