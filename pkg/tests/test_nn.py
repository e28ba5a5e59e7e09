import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from v2xshare.nn import (DenseLayer, Identity, Network, RMSProp, RMSPropState, ShapeError, SignSTE,
                         huber, relu_act, rmsprop_step, sign_act, tanh_act)

from conftest import central_difference, relative_error

finite = st.floats(-1e6, 1e6, allow_nan=False)


def small_net(rng, sizes=(5, 7, 6, 3), acts=("relu", "tanh", "linear")):
    net = Network.build(list(sizes), list(acts), rng)
    for layer in net.layers:
        layer.bias[:] = rng.normal(0, 0.3, layer.bias.shape)
    return net


class TestActivations:
    def test_tanh_zero(self):
        assert tanh_act(0.0) == 0.0

    def test_tanh_closed_form(self):
        # 2 / (1 + e^-1) - 1
        assert tanh_act(0.5) == pytest.approx(0.4621171572600098, rel=1e-15)

    def test_relu(self):
        assert np.array_equal(relu_act(np.array([-1.0, 2.0])), [0.0, 2.0])

    def test_sign_tie_break(self):
        assert sign_act(0.0) == 1.0
        assert np.array_equal(sign_act(np.array([-0.0, -1e-300, 3.0])), [1.0, -1.0, 1.0])

    @given(arrays(np.float64, 20, elements=finite))
    def test_finite_outputs(self, x):
        for f in (tanh_act, relu_act, sign_act):
            assert np.all(np.isfinite(f(x)))
        assert set(np.unique(sign_act(x))) <= {-1.0, 1.0}


class TestForward:
    def test_identity_linear(self):
        net = Network([DenseLayer(np.eye(3), np.zeros(3), "linear")])
        x = np.array([1.5, -2.0, 0.25])
        assert np.array_equal(net(x), x)

    def test_matches_manual_dot_products(self):
        rng = np.random.default_rng(0)
        net = small_net(rng)
        x = rng.normal(size=5)
        (w1, b1), (w2, b2), (w3, b3) = [(l.weights, l.bias) for l in net.layers]
        h1 = [max(0.0, sum(w1[i, j] * x[j] for j in range(5)) + b1[i]) for i in range(7)]
        h2 = [math.tanh(sum(w2[i, j] * h1[j] for j in range(7)) + b2[i]) for i in range(6)]
        y = [sum(w3[i, j] * h2[j] for j in range(6)) + b3[i] for i in range(3)]
        assert net(x) == pytest.approx(y, rel=1e-12)

    def test_batch_equals_rows(self):
        rng = np.random.default_rng(1)
        net = small_net(rng)
        x = rng.normal(size=(4, 5))
        batch = net(x)
        for i in range(4):
            assert batch[i] == pytest.approx(net(x[i]), rel=1e-14)

    def test_shape_errors(self):
        net = small_net(np.random.default_rng(2))
        with pytest.raises(ShapeError):
            net(np.zeros(4))
        with pytest.raises(ShapeError):
            Network([DenseLayer(np.zeros((3, 2)), np.zeros(3)), DenseLayer(np.zeros((2, 4)), np.zeros(2))])

    def test_glorot_bounds(self):
        layer = DenseLayer.init(16, 32, "relu", np.random.default_rng(3))
        assert np.all(np.abs(layer.weights) <= math.sqrt(6 / 48))
        assert np.all(layer.bias == 0)


class TestBackward:
    def test_least_squares_closed_form(self):
        rng = np.random.default_rng(4)
        layer = DenseLayer(rng.normal(size=(2, 3)), rng.normal(size=2), "linear")
        net = Network([layer])
        x, t = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
        y, cache = net.forward(x)
        (gw, gb), gx = net.backward(cache, y - t)   # d/dy of 0.5 * ||y - t||^2
        r = x @ layer.weights.T + layer.bias - t
        assert gw == pytest.approx(r.T @ x, rel=1e-13)
        assert gb == pytest.approx(r.sum(axis=0), rel=1e-13)
        assert gx == pytest.approx(r @ layer.weights, rel=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        net = small_net(rng, (4, 8, 8, 5, 2), ("relu", "tanh", "relu", "linear"))
        x = rng.normal(size=(3, 4))
        probe = rng.normal(size=(3, 2))
        loss = lambda: float(np.sum(net(x) * probe))
        _, cache = net.forward(x)
        grads, _ = net.backward(cache, probe)
        numeric = central_difference(loss, net.parameters())
        assert relative_error(grads, numeric) < 1e-4

    def test_sign_ste_equals_identity_backward(self):
        rng = np.random.default_rng(5)
        base = small_net(rng, (4, 6, 3), ("relu", "tanh"))
        with_sign = Network([*base.copy().layers, SignSTE(),
                             DenseLayer(rng.normal(size=(2, 3)), np.zeros(2), "linear")])
        x = rng.normal(size=(5, 4))
        y, cache = with_sign.forward(x)
        assert set(np.unique(with_sign.layers[2].forward(base(x))[0])) <= {-1.0, 1.0}
        g = rng.normal(size=y.shape)
        grads_sign, gx_sign = with_sign.backward(cache, g)
        # same caches (forward values), identity in place of sign for the backward pass
        as_identity = Network([with_sign.layers[0], with_sign.layers[1], Identity(), with_sign.layers[3]])
        grads_id, gx_id = as_identity.backward(cache, g)
        for a, b in zip(grads_sign, grads_id):
            assert np.array_equal(a, b)
        assert np.array_equal(gx_sign, gx_id)


class TestHuber:
    def test_zero(self):
        loss, grad = huber(1.0, 1.0)
        assert loss == 0.0 and grad == 0.0

    def test_linear_region(self):
        loss, grad = huber(2.0, 0.0, 1.0)
        assert loss == 1.5 and grad == 1.0

    def test_quadratic_region(self):
        loss, grad = huber(0.3, 0.0, 1.0)
        assert loss == pytest.approx(0.045, rel=1e-15) and grad == pytest.approx(0.3)

    def test_negative_error_clamped(self):
        assert huber(-5.0, 0.0, 2.0)[1] == -2.0

    def test_delta_positive(self):
        with pytest.raises(ValueError):
            huber(0.0, 0.0, 0.0)

    @given(st.floats(-1e3, 1e3), st.floats(0.1, 10))
    def test_gradient_matches_difference(self, e, delta):
        h = 1e-6
        num = (huber(e + h, 0.0, delta)[0] - huber(e - h, 0.0, delta)[0]) / (2 * h)
        assert huber(e, 0.0, delta)[1] == pytest.approx(num, abs=1e-4)


class TestRMSProp:
    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        state = RMSPropState.zeros_like(p)
        new, _ = rmsprop_step(p, [np.zeros(2)], state)
        assert np.array_equal(new[0], p[0])

    def test_first_step_hand_value(self):
        p = [np.array([0.0])]
        state = RMSPropState.zeros_like(p, learning_rate=0.001, decay=0.9, epsilon=1e-7)
        new, st2 = rmsprop_step(p, [np.array([1.0])], state)
        assert new[0][0] == pytest.approx(-0.0031622760790307354, rel=1e-14)
        assert st2.accumulators[0][0] == pytest.approx(0.1)

    def test_pure_and_deterministic(self):
        rng = np.random.default_rng(6)
        p = [rng.normal(size=(3, 2)), rng.normal(size=3)]
        g = [rng.normal(size=(3, 2)), rng.normal(size=3)]
        state = RMSPropState([np.abs(rng.normal(size=(3, 2))), np.abs(rng.normal(size=3))])
        snapshot = [a.copy() for a in p]
        a, sa = rmsprop_step(p, g, state)
        b, sb = rmsprop_step(p, g, state)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert all(np.array_equal(x, y) for x, y in zip(p, snapshot))

    def test_in_place_matches_pure(self):
        rng = np.random.default_rng(7)
        p = [rng.normal(size=(4, 3)), rng.normal(size=4)]
        pure_p, pure_s = [a.copy() for a in p], RMSPropState.zeros_like(p)
        opt = RMSProp(p)
        for _ in range(5):
            g = [rng.normal(size=(4, 3)), rng.normal(size=4)]
            pure_p, pure_s = rmsprop_step(pure_p, g, pure_s)
            opt.step(g)
        assert all(np.array_equal(a, b) for a, b in zip(p, pure_p))
        assert all(np.all(a >= 0) for a in opt.state.accumulators)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            rmsprop_step([np.zeros(2)], [np.zeros(3)], RMSPropState.zeros_like([np.zeros(2)]))


class TestSaveLoad:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        net = Network([*small_net(rng).layers, DenseLayer.init(3, 4, "tanh", rng), SignSTE()])
        net.save(tmp_path / "net.txt")
        back = Network.load(tmp_path / "net.txt")
        assert [repr(l) for l in back.layers] == [repr(l) for l in net.layers]
        for a, b in zip(net.parameters(), back.parameters()):
            assert np.array_equal(a, b)

    def test_rejects_other_files(self, tmp_path):
        (tmp_path / "x.txt").write_text("hello\n")
        with pytest.raises(ValueError):
            Network.load(tmp_path / "x.txt")
