import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_differences, max_relative_error
from physgold.lstm import Adam, NonFiniteGradientError, backward_and_step, ccc_loss, init_params, lstm_backward, lstm_forward


def _sig(z):
    return 1 / (1 + math.exp(-z))


class TestForward:
    def test_zero_weights(self, rng):
        params = init_params(3, 4, 2, True, rng)
        for v in params.values():
            v[...] = 0.0
        y, _ = lstm_forward(params, rng.normal(size=(2, 7, 3)))
        np.testing.assert_array_equal(y, 0.0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 9), st.integers(1, 4), st.integers(1, 5), st.integers(1, 3), st.booleans())
    def test_shapes(self, b, t, d, h, layers, bi):
        rng = np.random.default_rng(0)
        params = init_params(d, h, layers, bi, rng)
        y, _ = lstm_forward(params, rng.normal(size=(b, t, d)))
        assert y.shape == (b, t)
        y2, _ = lstm_forward(params, rng.normal(size=(t, d)))
        assert y2.shape == (t,)

    def test_dimension_mismatch(self, rng):
        params = init_params(3, 4, 1, False, rng)
        with pytest.raises(ValueError):
            lstm_forward(params, np.zeros((1, 5, 2)))
        with pytest.raises(ValueError):
            lstm_forward(params, np.zeros((1, 0, 3)))

    def test_hand_evaluated_step(self):
        # one input, one unit, rows i, f, g, o; columns input, recurrent
        W = np.array([[0.5, 0.1], [-0.3, 0.2], [0.8, -0.4], [0.25, 0.6]])
        b = np.array([0.1, -0.2, 0.05, 0.3])
        params = {"l0.fwd.W": W, "l0.fwd.b": b, "head.W": np.array([1.5]), "head.b": np.array([-0.25])}
        x = 0.7
        i = _sig(0.5 * x + 0.1)
        g = math.tanh(0.8 * x + 0.05)
        o = _sig(0.25 * x + 0.3)
        c = i * g  # previous cell state is 0, so the forget gate drops out
        expected = 1.5 * o * math.tanh(c) - 0.25
        y, _ = lstm_forward(params, np.array([[x]]))
        assert abs(y[0] - expected) <= 1e-12

    def test_bidirectional_with_silent_backward(self, rng):
        bi = init_params(3, 4, 1, True, rng)
        for k in ("l0.bwd.W", "l0.bwd.b"):
            bi[k][...] = 0.0
        uni = {k: v for k, v in bi.items() if "bwd" not in k}
        uni["head.W"] = bi["head.W"][:4].copy()
        x = rng.normal(size=(2, 11, 3))
        # with zero weights the backward state is o * tanh(c) = 0.5 * tanh(0) = 0
        np.testing.assert_allclose(lstm_forward(bi, x)[0], lstm_forward(uni, x)[0], atol=1e-12)


class TestLoss:
    def test_examples(self):
        assert ccc_loss([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])[0] == pytest.approx(0.0, abs=1e-15)
        assert ccc_loss([2.0, 2.0, 2.0], [1.0, 2.0, 4.0])[0] == pytest.approx(1.0)
        assert ccc_loss([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])[0] == pytest.approx(3 / 7, abs=1e-12)

    def test_degenerate(self):
        loss, grad, flag = ccc_loss([1.0, 1.0], [1.0, 1.0], return_flag=True)
        assert (loss, flag) == (1.0, True)
        np.testing.assert_array_equal(grad, 0.0)

    def test_rejects(self):
        with pytest.raises(ValueError):
            ccc_loss([1.0], [1.0])
        with pytest.raises(ValueError):
            ccc_loss([1.0, 2.0], [1.0, 2.0, 3.0])

    @given(st.integers(0, 10_000))
    def test_bounded_and_gradient(self, seed):
        rng = np.random.default_rng(seed)
        p, y = rng.normal(size=(2, 6)) * rng.uniform(0.1, 3), rng.normal(size=(2, 6))
        loss, grad = ccc_loss(p, y)
        assert 0.0 <= loss <= 2.0
        box = {"p": p.copy()}
        num = central_differences(lambda: ccc_loss(box["p"], y)[0], box)
        assert max_relative_error({"p": grad}, num) < 1e-5


def _grad_case(seed, bidirectional, layers):
    rng = np.random.default_rng(seed)
    params = init_params(3, 4, layers, bidirectional, rng)
    x, y = rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 5))
    pred, cache = lstm_forward(params, x)
    _, dpred = ccc_loss(pred, y)
    analytic = lstm_backward(params, cache, dpred)
    numeric = central_differences(lambda: ccc_loss(lstm_forward(params, x)[0], y)[0], params)
    return max_relative_error(analytic, numeric)


@pytest.mark.parametrize("layers", [1, 2, 4])
@pytest.mark.parametrize("bidirectional", [False, True])
def test_gradient_check(bidirectional, layers):
    assert _grad_case(layers + 10 * bidirectional, bidirectional, layers) < 1e-4


class TestStep:
    def test_zero_lr(self, rng):
        params = init_params(3, 4, 2, True, rng)
        before = {k: v.copy() for k, v in params.items()}
        backward_and_step(params, rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 6)), Adam(0.0))
        for k in params:
            np.testing.assert_array_equal(params[k], before[k])

    def test_deterministic_trajectory(self):
        def run():
            rng = np.random.default_rng(5)
            params = init_params(3, 4, 1, False, rng)
            x, y = rng.normal(size=(3, 8, 3)), rng.normal(size=(3, 8))
            opt = Adam(0.01)
            losses = [backward_and_step(params, x, y, opt) for _ in range(5)]
            return losses, params

        (l1, p1), (l2, p2) = run(), run()
        assert l1 == l2
        assert all(p1[k].tobytes() == p2[k].tobytes() for k in p1)
        assert l1[-1] < l1[0]

    def test_adam_first_step(self):
        # bias correction makes the first step exactly lr * sign(g) up to eps
        params = {"w": np.array([1.0, -1.0])}
        Adam(0.1).step(params, {"w": np.array([0.5, -2.0])})
        np.testing.assert_allclose(params["w"], [0.9, -0.9], atol=1e-7)

    def test_non_finite(self, rng):
        params = init_params(2, 3, 1, False, rng)
        x = np.full((1, 4, 2), np.nan)
        with pytest.raises(NonFiniteGradientError):
            backward_and_step(params, x, rng.normal(size=(1, 4)), Adam(0.01))
