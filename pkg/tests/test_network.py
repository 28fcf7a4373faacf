import numpy as np
import pytest

from nmln.network import (
    DenseNet,
    Layer,
    NumericError,
    init_net,
    net_backward,
    net_forward,
)


def random_net(rng, in_width=5, hidden=(4, 3), out=2, activation="relu"):
    return init_net(in_width, hidden, out, activation, rng)


class TestForward:
    def test_zero_net_outputs_zero(self):
        net = DenseNet(
            [
                Layer(np.zeros((3, 4)), np.zeros(3), "relu"),
                Layer(np.zeros((2, 3)), np.zeros(2), "identity"),
            ]
        )
        out, _ = net_forward(net, np.ones(4))
        assert np.array_equal(out, np.zeros(2))

    def test_identity_layer_is_projection(self):
        w = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        net = DenseNet([Layer(w, np.zeros(2), "identity")])
        x = np.array([3.0, -1.0, 2.0])
        out, _ = net_forward(net, x)
        assert np.allclose(out, w @ x)

    def test_matches_manual_arithmetic(self):
        rng = np.random.default_rng(0)
        net = random_net(rng)
        x = rng.normal(size=5)
        out, _ = net_forward(net, x)
        a = x
        for layer in net.layers:
            z = layer.weights @ a + layer.bias
            a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        assert np.abs(out - a).max() < 1e-12

    def test_batch_equals_rowwise(self):
        rng = np.random.default_rng(1)
        net = random_net(rng, activation="sigmoid")
        xs = rng.normal(size=(7, 5))
        batch, _ = net_forward(net, xs)
        for i in range(7):
            row, _ = net_forward(net, xs[i])
            assert np.allclose(batch[i], row, atol=1e-14)

    def test_width_mismatch(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            net_forward(random_net(rng), np.zeros(6))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_output(self):
        net = DenseNet([Layer(np.full((1, 1), 1e308), np.zeros(1), "identity")])
        with pytest.raises(NumericError):
            net_forward(net, np.array([1e308]))


class TestNetValidation:
    def test_final_activation_must_be_identity(self):
        with pytest.raises(ValueError):
            DenseNet([Layer(np.zeros((1, 1)), np.zeros(1), "relu")])

    def test_width_chain(self):
        with pytest.raises(ValueError):
            DenseNet(
                [
                    Layer(np.zeros((3, 4)), np.zeros(3), "relu"),
                    Layer(np.zeros((2, 5)), np.zeros(2), "identity"),
                ]
            )

    def test_nonfinite_params(self):
        with pytest.raises(NumericError):
            Layer(np.array([[np.nan]]), np.zeros(1), "identity")


class TestBackward:
    def test_zero_cotangent(self):
        rng = np.random.default_rng(3)
        net = random_net(rng)
        x = rng.normal(size=5)
        _, tape = net_forward(net, x)
        grads, dx = net_backward(net, tape, np.zeros(2))
        assert np.abs(dx).max() == 0.0
        assert all(np.abs(g).max() == 0.0 for dw, db in grads for g in (dw, db))

    def test_identity_net_cotangent_row(self):
        w = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        net = DenseNet([Layer(w, np.zeros(2), "identity")])
        _, tape = net_forward(net, np.array([1.0, 1.0, 1.0]))
        for j in range(2):
            e = np.zeros(2)
            e[j] = 1.0
            _, dx = net_backward(net, tape, e)
            assert np.allclose(dx, w[j])

    @pytest.mark.parametrize("activation", ["relu", "sigmoid"])
    def test_matches_finite_differences(self, activation):
        rng = np.random.default_rng(4)
        net = random_net(rng, activation=activation)
        x = rng.normal(size=5)
        cot = rng.normal(size=2)

        def value():
            out, _ = net_forward(net, x)
            return float(cot @ out)

        _, tape = net_forward(net, x)
        grads, dx = net_backward(net, tape, cot)
        h = 1e-4
        worst = 0.0
        for layer, (dw, db) in zip(net.layers, grads):
            for arr, g in ((layer.weights, dw), (layer.bias, db)):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    ix = it.multi_index
                    old = arr[ix]
                    arr[ix] = old + h
                    up = value()
                    arr[ix] = old - h
                    dn = value()
                    arr[ix] = old
                    fd = (up - dn) / (2 * h)
                    worst = max(
                        worst, abs(g[ix] - fd) / max(abs(g[ix]), abs(fd), 1e-8)
                    )
        for i in range(5):
            old = x[i]
            x[i] = old + h
            up = value()
            x[i] = old - h
            dn = value()
            x[i] = old
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(dx[i] - fd) / max(abs(dx[i]), abs(fd), 1e-8))
        assert worst < 1e-4

    def test_batch_cotangent_accumulates(self):
        rng = np.random.default_rng(5)
        net = random_net(rng, activation="sigmoid")
        xs = rng.normal(size=(4, 5))
        cots = rng.normal(size=(4, 2))
        _, tape = net_forward(net, xs)
        grads, dxs = net_backward(net, tape, cots)
        acc = [
            (np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in net.layers
        ]
        for i in range(4):
            _, t = net_forward(net, xs[i])
            g, dx = net_backward(net, t, cots[i])
            assert np.allclose(dx, dxs[i], atol=1e-12)
            for (aw, ab), (dw, db) in zip(acc, g):
                aw += dw
                ab += db
        for (aw, ab), (dw, db) in zip(acc, grads):
            assert np.allclose(aw, dw, atol=1e-12)
            assert np.allclose(ab, db, atol=1e-12)

    def test_stale_tape_rejected(self):
        rng = np.random.default_rng(6)
        net_a, net_b = random_net(rng), random_net(rng)
        _, tape = net_forward(net_a, rng.normal(size=5))
        with pytest.raises(ValueError):
            net_backward(net_b, tape, np.zeros(2))


class TestInit:
    def test_fan_in_scale(self):
        rng = np.random.default_rng(7)
        net = init_net(16, (8,), 2, "relu", rng)
        assert np.abs(net.layers[0].weights).max() <= 16**-0.5
        assert np.abs(net.layers[1].weights).max() <= 8**-0.5

    def test_final_identity(self):
        rng = np.random.default_rng(8)
        net = init_net(4, (3,), 2, "sigmoid", rng)
        assert net.layers[-1].activation == "identity"
        assert net.layers[0].activation == "sigmoid"
