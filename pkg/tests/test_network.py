"""Value-network tests: init, forward, backprop vs finite differences, Adam,
checkpoint round-trip."""

import numpy as np
import pytest

from drivestack.network import (
    Adam,
    BootstrappedMlp,
    MlpTopology,
    load_network,
    save_network,
)

TOPOLOGY = MlpTopology(input_dim=5, shared_layers=(8, 6), head_layers=(4,),
                       output_dim=3, head_count=3)


def make_batch(seed: int, topology: MlpTopology = TOPOLOGY, batch: int = 4):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, topology.input_dim))
    actions = rng.integers(0, topology.output_dim, size=batch)
    targets = rng.normal(size=(topology.head_count, batch))
    masks = rng.integers(0, 2, size=(batch, topology.head_count)).astype(float)
    masks[0, 0] = 0.0  # guarantee at least one gated-out entry
    masks[1, 1] = 1.0  # and one active entry
    return x, actions, targets, masks


def head_loss(net, k, x, actions, targets, masks):
    """Loss restricted to head k, recomputed from a plain forward pass."""
    q = net.forward(x)[k]
    taken = q[np.arange(x.shape[0]), actions]
    return float(np.sum(masks[:, k] * (taken - targets[k]) ** 2)) / (2 * x.shape[0])


def fd_gradient(fn, param, h=1e-6):
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + h
        hi = fn()
        param[idx] = orig - h
        lo = fn()
        param[idx] = orig
        grad[idx] = (hi - lo) / (2 * h)
    return grad


class TestInit:
    def test_seed_determinism(self):
        a = BootstrappedMlp(TOPOLOGY, seed=7)
        b = BootstrappedMlp(TOPOLOGY, seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)

    def test_seeds_differ(self):
        a = BootstrappedMlp(TOPOLOGY, seed=7)
        b = BootstrappedMlp(TOPOLOGY, seed=8)
        assert any(not np.array_equal(pa, pb)
                   for pa, pb in zip(a.parameters(), b.parameters()))

    def test_he_bounds_and_zero_biases(self):
        net = BootstrappedMlp(TOPOLOGY, seed=3)
        stacks = [net.shared] + net.heads
        for stack in stacks:
            for w, b in stack:
                limit = np.sqrt(6.0 / w.shape[0])
                assert np.all(np.abs(w) <= limit)
                assert np.all(b == 0.0)

    def test_rejects_bad_topology(self):
        with pytest.raises(ValueError):
            MlpTopology(input_dim=0, shared_layers=(4,), head_layers=(),
                        output_dim=2, head_count=1)
        with pytest.raises(ValueError):
            MlpTopology(input_dim=3, shared_layers=(4, 0), head_layers=(),
                        output_dim=2, head_count=1)


class TestForward:
    def test_output_shape(self):
        net = BootstrappedMlp(TOPOLOGY, seed=0)
        x = np.zeros((9, TOPOLOGY.input_dim))
        assert net.forward(x).shape == (3, 9, 3)

    def test_single_observation_promoted(self):
        net = BootstrappedMlp(TOPOLOGY, seed=0)
        x = np.ones(TOPOLOGY.input_dim)
        assert net.forward(x).shape == (3, 1, 3)

    def test_heads_disagree_at_init(self):
        net = BootstrappedMlp(TOPOLOGY, seed=1)
        q = net.forward(np.ones((1, TOPOLOGY.input_dim)))
        assert not np.allclose(q[0], q[1])

    def test_no_hidden_head_layers(self):
        topo = MlpTopology(input_dim=4, shared_layers=(6,), head_layers=(),
                           output_dim=2, head_count=2)
        net = BootstrappedMlp(topo, seed=0)
        assert net.forward(np.zeros((3, 4))).shape == (2, 3, 2)


class TestGradients:
    def test_loss_matches_per_head_sum(self):
        net = BootstrappedMlp(TOPOLOGY, seed=11)
        x, actions, targets, masks = make_batch(21)
        loss, _ = net.loss_and_gradients(x, actions, targets, masks)
        parts = sum(head_loss(net, k, x, actions, targets, masks)
                    for k in range(TOPOLOGY.head_count))
        assert loss == pytest.approx(parts, rel=1e-12)

    def test_head_gradients_match_finite_differences(self):
        net = BootstrappedMlp(TOPOLOGY, seed=11)
        x, actions, targets, masks = make_batch(21)
        _, grads = net.loss_and_gradients(x, actions, targets, masks)
        n_shared = 2 * len(net.shared)
        per_head = 2 * len(net.heads[0])
        for k in range(TOPOLOGY.head_count):
            fn = lambda: head_loss(net, k, x, actions, targets, masks)
            offset = n_shared + k * per_head
            for i, (w, b) in enumerate(net.heads[k]):
                for j, param in enumerate((w, b)):
                    analytic = grads[offset + 2 * i + j]
                    fd = fd_gradient(fn, param)
                    assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-8)

    def test_shared_gradients_are_head_average(self):
        net = BootstrappedMlp(TOPOLOGY, seed=11)
        x, actions, targets, masks = make_batch(21)
        _, grads = net.loss_and_gradients(x, actions, targets, masks)
        for i, (w, b) in enumerate(net.shared):
            for j, param in enumerate((w, b)):
                fd_sum = np.zeros_like(param)
                for k in range(TOPOLOGY.head_count):
                    fn = lambda: head_loss(net, k, x, actions, targets, masks)
                    fd_sum += fd_gradient(fn, param)
                analytic = grads[2 * i + j]
                assert np.allclose(analytic, fd_sum / TOPOLOGY.head_count,
                                   rtol=1e-5, atol=1e-8)

    def test_masked_out_head_gets_zero_gradient(self):
        net = BootstrappedMlp(TOPOLOGY, seed=5)
        x, actions, targets, _ = make_batch(33)
        masks = np.ones((x.shape[0], TOPOLOGY.head_count))
        masks[:, 2] = 0.0
        _, grads = net.loss_and_gradients(x, actions, targets, masks)
        n_shared = 2 * len(net.shared)
        per_head = 2 * len(net.heads[0])
        start = n_shared + 2 * per_head
        for g in grads[start:start + per_head]:
            assert np.all(g == 0.0)

    def test_all_masks_zero_gives_zero_loss_and_grads(self):
        net = BootstrappedMlp(TOPOLOGY, seed=5)
        x, actions, targets, _ = make_batch(33)
        masks = np.zeros((x.shape[0], TOPOLOGY.head_count))
        loss, grads = net.loss_and_gradients(x, actions, targets, masks)
        assert loss == 0.0
        assert all(np.all(g == 0.0) for g in grads)

    def test_untaken_actions_do_not_leak_gradient(self):
        # With output_dim=1 every action is taken; compare against a net whose
        # targets only touch action 0 while other outputs exist.
        net = BootstrappedMlp(TOPOLOGY, seed=9)
        x, _, targets, masks = make_batch(40)
        actions = np.zeros(x.shape[0], dtype=int)
        loss0, _ = net.loss_and_gradients(x, actions, targets, masks)
        # Shifting targets for a never-taken action must not change the loss.
        loss1, _ = net.loss_and_gradients(x, actions, targets + 0.0, masks)
        assert loss0 == loss1


class TestAdam:
    def test_first_step_magnitude(self):
        p = np.array([5.0])
        opt = Adam([p], learning_rate=0.01)
        opt.step([np.array([3.0])])
        assert p[0] == pytest.approx(5.0 - 0.01, abs=1e-6)

    def test_quadratic_convergence(self):
        p = np.array([4.0])
        opt = Adam([p], learning_rate=0.1)
        for _ in range(500):
            opt.step([2.0 * p])
        assert abs(p[0]) < 1e-3

    def test_training_reduces_loss(self):
        net = BootstrappedMlp(TOPOLOGY, seed=2)
        opt = Adam(net.parameters(), learning_rate=1e-2)
        x, actions, targets, masks = make_batch(55, batch=16)
        first, _ = net.loss_and_gradients(x, actions, targets, masks)
        for _ in range(600):
            _, grads = net.loss_and_gradients(x, actions, targets, masks)
            opt.step(grads)
        last, _ = net.loss_and_gradients(x, actions, targets, masks)
        assert last < 0.01 * first

    def test_gradient_count_checked(self):
        p = np.array([1.0])
        opt = Adam([p], learning_rate=0.1)
        with pytest.raises(ValueError):
            opt.step([np.array([1.0]), np.array([2.0])])


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        net = BootstrappedMlp(TOPOLOGY, seed=13)
        # Move off the init point so we are not round-tripping fresh weights.
        opt = Adam(net.parameters(), learning_rate=1e-3)
        x, actions, targets, masks = make_batch(60)
        _, grads = net.loss_and_gradients(x, actions, targets, masks)
        opt.step(grads)

        path = tmp_path / "ckpt.npz"
        save_network(path, net, extra_meta={"episode": 42})
        loaded, extra = load_network(path)
        assert extra == {"episode": 42}
        assert loaded.topology == net.topology
        for pa, pb in zip(net.parameters(), loaded.parameters()):
            assert np.array_equal(pa, pb)

    def test_clone_is_independent(self):
        net = BootstrappedMlp(TOPOLOGY, seed=13)
        twin = net.clone()
        net.shared[0][0][0, 0] += 1.0
        assert twin.shared[0][0][0, 0] != net.shared[0][0][0, 0]

    def test_set_parameters_validates_shapes(self):
        net = BootstrappedMlp(TOPOLOGY, seed=0)
        bad = [p.copy() for p in net.parameters()]
        bad[0] = np.zeros((1, 1))
        with pytest.raises(ValueError):
            net.set_parameters(bad)
