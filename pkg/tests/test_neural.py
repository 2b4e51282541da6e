"""Tests for the MLP, its hand-written gradients and the Adam optimizer."""

import numpy as np
import pytest

from oll_dac.errors import UsageError
from oll_dac.neural import (
    AdamState,
    Mlp,
    adam_step,
    clip_grad_norm,
    default_sizes,
    load_checkpoint,
    save_checkpoint,
    soft_update,
)


@pytest.fixture
def net(rng: np.random.Generator) -> Mlp:
    return Mlp.glorot([1, 6, 5, 3], rng)


class TestMlp:
    """Forward shapes, initialization and gradients."""

    def test_default_architecture(self, rng: np.random.Generator) -> None:
        qnet = Mlp.glorot(default_sizes(1, 6), rng)
        assert qnet.sizes == [1, 50, 50, 6]
        assert qnet.forward(np.zeros((4, 1))).shape == (4, 6)

    def test_glorot_bounds(self, rng: np.random.Generator) -> None:
        qnet = Mlp.glorot([1, 50, 50, 7], rng)
        bound = np.sqrt(6.0 / 100.0)
        assert np.abs(qnet.weights[1]).max() <= bound
        assert all(np.all(b == 0.0) for b in qnet.biases)

    def test_shape_mismatch(self, net: Mlp) -> None:
        with pytest.raises(UsageError):
            net.forward(np.zeros((3, 2)))
        with pytest.raises(UsageError):
            net.backward(np.zeros((3, 1)), np.zeros((3, 2)))

    def test_backward_matches_finite_differences(self, net: Mlp, rng: np.random.Generator) -> None:
        batch = rng.uniform(0.0, 1.0, size=(7, 1))
        upstream = rng.normal(size=(7, 3))
        grads = net.backward(batch, upstream)

        def objective() -> float:
            return float(np.sum(upstream * net.forward(batch)))

        eps = 1e-6
        for param, grad in zip(net.parameters(), grads):
            assert grad.shape == param.shape
            flat, flat_grad = param.reshape(-1), grad.reshape(-1)
            for i in range(0, flat.shape[0], max(1, flat.shape[0] // 5)):
                original = flat[i]
                flat[i] = original + eps
                up = objective()
                flat[i] = original - eps
                down = objective()
                flat[i] = original
                assert flat_grad[i] == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-6)

    def test_backward_reuses_forward_trace(self, net: Mlp, rng: np.random.Generator) -> None:
        batch = rng.uniform(0.0, 1.0, size=(9, 1))
        upstream = rng.normal(size=(9, 3))
        trace = net.forward_trace(batch)
        assert np.array_equal(trace.output, net.forward(batch))
        for with_trace, without in zip(net.backward(batch, upstream, trace), net.backward(batch, upstream)):
            assert np.array_equal(with_trace, without)

    def test_gradients_on_random_nets(self) -> None:
        """Central differences with h=1e-5 agree to 1e-4 relative error on every parameter."""
        rng = np.random.default_rng(2024)
        h = 1e-5
        worst = 0.0
        for _ in range(20):
            hidden = int(rng.integers(2, 9))
            sizes = [1, hidden, hidden, int(rng.integers(1, 7))]
            qnet = Mlp.glorot(sizes, rng)
            for b in qnet.biases:
                b[:] = rng.normal(scale=0.1, size=b.shape)
            rows = int(rng.integers(1, 9))
            # Keep hidden pre-activations away from the ReLU kink.
            for _ in range(100):
                batch = rng.uniform(0.0, 1.0, size=(rows, 1))
                if min(np.abs(z).min() for z in qnet.forward_trace(batch).pre_activations[:-1]) >= 1e-3:
                    break
            upstream = rng.normal(size=(batch.shape[0], sizes[-1]))
            grads = qnet.backward(batch, upstream)
            for param, grad in zip(qnet.parameters(), grads):
                flat, flat_grad = param.reshape(-1), grad.reshape(-1)
                for i in range(flat.shape[0]):
                    original = flat[i]
                    flat[i] = original + h
                    up = float(np.sum(upstream * qnet.forward(batch)))
                    flat[i] = original - h
                    down = float(np.sum(upstream * qnet.forward(batch)))
                    flat[i] = original
                    numeric = (up - down) / (2 * h)
                    scale = max(abs(numeric), abs(flat_grad[i]), 1e-6)
                    worst = max(worst, abs(numeric - flat_grad[i]) / scale)
        assert worst < 1e-4

    def test_checkpoint_file(self, net: Mlp, tmp_path) -> None:
        path = str(tmp_path / "net.json")
        save_checkpoint(path, net, {"n": 5})
        loaded, metadata = load_checkpoint(path)
        assert metadata == {"n": 5}
        batch = np.linspace(0, 1, 5).reshape(-1, 1)
        assert np.allclose(loaded.forward(batch), net.forward(batch))


class TestOptimization:
    """Adam, gradient clipping and soft target updates."""

    def test_adam_first_step_size(self, net: Mlp) -> None:
        before = [p.copy() for p in net.parameters()]
        grads = [np.full_like(p, 3.0) for p in net.parameters()]
        state = AdamState.for_net(net, learning_rate=0.01)
        adam_step(net, grads, state)
        for old, new in zip(before, net.parameters()):
            assert np.allclose(old - new, 0.01, atol=1e-6)
        assert state.timestep == 1

    def test_adam_descends_quadratic(self, rng: np.random.Generator) -> None:
        """A 1-unit linear net fitted to y = 2x by MSE converges."""
        lin = Mlp([rng.normal(size=(1, 1))], [np.zeros(1)])
        state = AdamState.for_net(lin, learning_rate=0.05)
        x = np.linspace(-1, 1, 32).reshape(-1, 1)
        for _ in range(500):
            diff = lin.forward(x) - 2.0 * x
            adam_step(lin, lin.backward(x, 2.0 * diff / len(x)), state)
        assert lin.weights[0][0, 0] == pytest.approx(2.0, abs=5e-2)

    def test_clip_grad_norm(self) -> None:
        grads = [np.array([3.0]), np.array([[4.0]])]
        clipped, norm = clip_grad_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        total = np.sqrt(sum(float(np.sum(g * g)) for g in clipped))
        assert total == pytest.approx(1.0, rel=1e-5)

    def test_clip_leaves_small_gradients(self) -> None:
        grads = [np.array([0.1, 0.2])]
        clipped, _ = clip_grad_norm(grads, 10.0)
        assert np.array_equal(clipped[0], grads[0])

    def test_soft_update(self, rng: np.random.Generator) -> None:
        online = Mlp.glorot([1, 4, 2], rng)
        target = Mlp.zeros([1, 4, 2])
        soft_update(target, online, 0.25)
        assert np.allclose(target.weights[0], 0.25 * online.weights[0])
        soft_update(target, online, 1.0)
        assert np.allclose(target.weights[1], online.weights[1])
