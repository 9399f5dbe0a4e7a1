"""MLP substrate: forward oracle, finite-difference gradients, Adam, checkpoints."""

from __future__ import annotations

import numpy as np
import pytest

from mcpsim import nn


def _manual_forward(net: nn.Mlp, x: np.ndarray) -> np.ndarray:
    """Independent re-implementation of the forward arithmetic."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = np.array([np.dot(h, w[:, j]) + b[j] for j in range(w.shape[1])])
        if i < len(net.weights) - 1 or net.output_activation == "tanh":
            z = np.tanh(z)
        h = z
    return h


def _objective(net: nn.Mlp, x: np.ndarray, up: np.ndarray) -> float:
    return float(np.dot(nn.forward(net, x), up))


def _fd_gradient(net: nn.Mlp, x, up, h: float = 1e-5) -> np.ndarray:
    theta = nn.flatten_params(net)
    grad = np.empty_like(theta)
    probe = net.copy()
    for i in range(theta.size):
        t = theta.copy()
        t[i] += h
        nn.set_flat_params(probe, t)
        f_plus = _objective(probe, x, up)
        t[i] -= 2 * h
        nn.set_flat_params(probe, t)
        f_minus = _objective(probe, x, up)
        grad[i] = (f_plus - f_minus) / (2 * h)
    return grad


class TestForward:
    def test_zero_net_linear_output_is_zero(self):
        net = nn.init_mlp((3, 4, 2), "linear", seed=0)
        for w in net.weights:
            w[...] = 0.0
        for b in net.biases:
            b[...] = 0.0
        assert np.array_equal(nn.forward(net, np.ones(3)), np.zeros(2))

    def test_identity_single_layer(self):
        net = nn.init_mlp((3, 3), "linear", seed=0)
        net.weights[0][...] = np.eye(3)
        net.biases[0][...] = 0.0
        x = np.array([0.3, -1.2, 4.0])
        assert np.allclose(nn.forward(net, x), x)

    def test_matches_independent_reimplementation(self):
        rng = np.random.Generator(np.random.PCG64(17))
        for trial in range(5):
            net = nn.init_mlp((2, 3, 1), "tanh" if trial % 2 else "linear", seed=trial)
            x = rng.standard_normal(2)
            assert np.allclose(
                nn.forward(net, x), _manual_forward(net, x), rtol=1e-12, atol=1e-12
            )

    def test_batch_matches_rowwise(self):
        net = nn.init_mlp((4, 8, 3), "tanh", seed=2)
        xs = np.random.Generator(np.random.PCG64(5)).standard_normal((6, 4))
        batch = nn.forward(net, xs)
        for i, row in enumerate(xs):
            assert np.allclose(batch[i], nn.forward(net, row))

    def test_dimension_mismatch_rejected(self):
        net = nn.init_mlp((4, 2), "linear", seed=1)
        with pytest.raises(nn.NNError):
            nn.forward(net, np.ones(5))


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        net = nn.init_mlp((3, 5, 2), "tanh", seed=3)
        grads = nn.backward(net, np.ones(3), np.zeros(2))
        assert all(np.all(g == 0) for g in grads["weights"])
        assert all(np.all(g == 0) for g in grads["biases"])
        assert np.all(grads["input"] == 0)

    def test_linear_single_layer_weight_grad_is_outer_product(self):
        net = nn.init_mlp((3, 2), "linear", seed=4)
        x = np.array([1.0, -2.0, 0.5])
        up = np.array([0.7, -0.1])
        grads = nn.backward(net, x, up)
        assert np.allclose(grads["weights"][0], np.outer(x, up))
        assert np.allclose(grads["biases"][0], up)
        assert np.allclose(grads["input"], net.weights[0] @ up)

    def test_matches_finite_differences_on_20_seeded_nets(self):
        rng = np.random.Generator(np.random.PCG64(99))
        for trial in range(20):
            sizes = (3, 6, 4, 2) if trial % 2 else (5, 8, 1)
            out_act = "tanh" if trial % 3 else "linear"
            net = nn.init_mlp(sizes, out_act, seed=100 + trial)
            x = rng.standard_normal(sizes[0])
            up = rng.standard_normal(sizes[-1])
            analytic = nn.flatten_grads(net, nn.backward(net, x, up))
            fd = _fd_gradient(net, x, up)
            rel = np.abs(analytic - fd) / np.maximum(
                1.0, np.maximum(np.abs(analytic), np.abs(fd))
            )
            assert rel.max() < 1e-4

    def test_batch_param_grads_sum_over_rows(self):
        net = nn.init_mlp((3, 4, 2), "tanh", seed=6)
        rng = np.random.Generator(np.random.PCG64(7))
        xs = rng.standard_normal((5, 3))
        ups = rng.standard_normal((5, 2))
        batch = nn.backward(net, xs, ups)
        summed = [np.zeros_like(w) for w in net.weights]
        for i in range(5):
            single = nn.backward(net, xs[i], ups[i])
            for j, w in enumerate(single["weights"]):
                summed[j] += w
        for got, expect in zip(batch["weights"], summed):
            assert np.allclose(got, expect)


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        net = nn.init_mlp((2, 3, 1), "linear", seed=8)
        before = [p.copy() for p in net.parameters()]
        grads = {
            "weights": [np.zeros_like(w) for w in net.weights],
            "biases": [np.zeros_like(b) for b in net.biases],
        }
        state = nn.init_adam(net, lr=0.1)
        nn.adam_step(net, grads, state)
        assert state.step == 1
        for p, b in zip(net.parameters(), before):
            assert np.array_equal(p, b)

    def test_constant_gradient_moves_against_sign(self):
        net = nn.init_mlp((1, 1), "linear", seed=9)
        before = net.weights[0].copy()
        state = nn.init_adam(net, lr=0.01)
        grads = {
            "weights": [np.full_like(net.weights[0], 2.5)],
            "biases": [np.zeros_like(net.biases[0])],
        }
        for _ in range(10):
            nn.adam_step(net, grads, state)
        assert np.all(net.weights[0] < before)

    def test_quadratic_bowl_converges(self):
        # f(w) = ||w||^2 from (1, 1): gradient 2w, lr 0.05, 500 steps
        net = nn.init_mlp((2, 1), "linear", seed=10)
        net.weights[0][...] = 1.0
        net.biases[0][...] = 0.0
        state = nn.init_adam(net, lr=0.05)
        for _ in range(500):
            grads = {
                "weights": [2.0 * net.weights[0]],
                "biases": [np.zeros_like(net.biases[0])],
            }
            nn.adam_step(net, grads, state)
        assert np.linalg.norm(net.weights[0]) < 0.05


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = nn.init_mlp((27, 64, 64, 3), "tanh", seed=11)
        path = tmp_path / "actor.npz"
        nn.save_checkpoint(net, path, extra={"tag": np.array([1, 2, 3])})
        loaded, extra = nn.load_checkpoint(path)
        assert loaded.layer_sizes == net.layer_sizes
        assert loaded.output_activation == net.output_activation
        for a, b in zip(loaded.parameters(), net.parameters()):
            assert np.array_equal(a, b)
        assert np.array_equal(extra["tag"], np.array([1, 2, 3]))

    def test_corrupted_payload_rejected(self, tmp_path):
        net = nn.init_mlp((2, 2), "linear", seed=12)
        path = tmp_path / "actor.npz"
        nn.save_checkpoint(net, path)
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(nn.NNError):
            nn.load_checkpoint(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "actor.npz"
        path.write_bytes(b"other-version\nabc\npayload")
        with pytest.raises(nn.NNError):
            nn.load_checkpoint(path)

    def test_init_is_seed_deterministic(self):
        a = nn.init_mlp((4, 8, 2), "tanh", seed=13)
        b = nn.init_mlp((4, 8, 2), "tanh", seed=13)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)
