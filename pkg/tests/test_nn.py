"""Networks, backprop against finite differences, Adam, ORLM checkpoints."""

import numpy as np
import pytest

from latentsr.errors import CheckpointError, InvalidInputError
from latentsr.nn import (
    AdamOptimizer,
    AdamState,
    Mlp,
    NetParams,
    adam_step,
    grad_check,
    init_mlp,
    load_params,
    merge_params,
    mlp_backward,
    mlp_forward,
    save_params,
    split_params,
)
from latentsr.rng import Xoshiro256


def _naive_fd_grads(net, x, h=1e-5):
    """Brute-force central differences, one forward pair per parameter.

    Slow but dead simple: the oracle for grad_check's batched implementation.
    """
    grads = {}
    for name, arr in net.params.items():
        flat = arr.reshape(-1)
        g = np.empty(flat.size)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = float(mlp_forward(net, x).sum())
            flat[j] = orig - h
            down = float(mlp_forward(net, x).sum())
            flat[j] = orig
            g[j] = (up - down) / (2 * h)
        grads[name] = g.reshape(arr.shape)
    return grads


class TestForward:
    def test_zero_weights_zero_output(self):
        net = init_mlp([3, 4, 2], seed=0)
        for name in net.params.names():
            net.params[name] = np.zeros_like(net.params[name])
        assert np.array_equal(mlp_forward(net, [1.0, -2.0, 3.0]), np.zeros(2))

    def test_identity_linear_layer(self):
        net = Mlp([3, 3])
        net.params["w0"] = np.eye(3)
        net.params["b0"] = np.zeros(3)
        assert np.array_equal(mlp_forward(net, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])

    def test_two_layer_hand_computed(self):
        # y = w2 . tanh(w1 x + b1) + b2 with x = [1]
        net = Mlp([1, 2, 1], activation="tanh")
        net.params["w0"] = np.array([[0.5], [-1.0]])
        net.params["b0"] = np.array([0.25, 0.5])
        net.params["w1"] = np.array([[2.0, 3.0]])
        net.params["b1"] = np.array([0.125])
        h = np.tanh([0.5 * 1 + 0.25, -1.0 * 1 + 0.5])
        want = 2.0 * h[0] + 3.0 * h[1] + 0.125
        got = mlp_forward(net, [1.0])
        assert got[0] == pytest.approx(want, rel=1e-15)

    def test_batched_matches_single(self):
        net = init_mlp([4, 5, 3], seed=1)
        xs = Xoshiro256(2).normal_array((6, 4))
        batch = mlp_forward(net, xs)
        for i in range(6):
            assert np.allclose(batch[i], mlp_forward(net, xs[i]), atol=1e-13)

    def test_referentially_transparent(self):
        net = init_mlp([4, 4, 2], seed=3)
        x = Xoshiro256(4).normal_array(4)
        a = mlp_forward(net, x)
        b = mlp_forward(net, x)
        assert a.tobytes() == b.tobytes()

    def test_shape_mismatch_rejected(self):
        net = init_mlp([4, 2], seed=0)
        with pytest.raises(InvalidInputError):
            mlp_forward(net, [1.0, 2.0])


class TestBackward:
    def test_linear_param_grad_is_outer_product(self):
        net = Mlp([3, 2])
        net.params["w0"] = Xoshiro256(5).normal_array((2, 3))
        net.params["b0"] = np.zeros(2)
        x = np.array([1.0, -2.0, 0.5])
        g = np.array([2.0, -1.0])
        grads, dx = mlp_backward(net, x, g)
        assert np.allclose(grads["w0"], np.outer(g, x), atol=1e-15)
        assert np.allclose(grads["b0"], g, atol=1e-15)
        assert np.allclose(dx, g @ net.params["w0"], atol=1e-15)

    def test_zero_cotangent_zero_grads(self):
        net = init_mlp([3, 5, 2], seed=6)
        grads, dx = mlp_backward(net, [1.0, 2.0, 3.0], np.zeros(2))
        assert all(np.array_equal(v, np.zeros_like(v)) for _, v in grads.items())
        assert np.array_equal(dx, np.zeros(3))

    @pytest.mark.parametrize("activation,out_act", [("tanh", "none"), ("relu", "none"), ("tanh", "tanh")])
    def test_matches_finite_differences(self, activation, out_act):
        net = init_mlp([4, 6, 3], activation, out_act, seed=7)
        x = Xoshiro256(8).normal_array(4)
        grads, _ = mlp_backward(net, x, np.ones(3))
        fd = _naive_fd_grads(net, x)
        for name in grads.names():
            denom = np.maximum(1.0, np.abs(fd[name]))
            assert np.all(np.abs(grads[name] - fd[name]) / denom < 1e-4)

    def test_input_grad_matches_finite_differences(self):
        net = init_mlp([4, 6, 2], seed=9)
        x = Xoshiro256(10).normal_array(4)
        _, dx = mlp_backward(net, x, np.ones(2))
        h = 1e-5
        for j in range(4):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            num = (mlp_forward(net, xp).sum() - mlp_forward(net, xm).sum()) / (2 * h)
            assert dx[j] == pytest.approx(num, abs=1e-7)


class TestGradCheck:
    def test_pure_linear_net_is_exact(self):
        net = init_mlp([6, 4], seed=11)
        x = Xoshiro256(12).normal_array(6)
        assert grad_check(net, x) < 1e-8

    def test_tanh_net_within_fd_tolerance(self):
        for seed in range(5):
            net = init_mlp([5, 8, 3], seed=seed)
            x = Xoshiro256(100 + seed).normal_array(5)
            assert grad_check(net, x) < 1e-4

    def test_zero_net_bias_grads_exact(self):
        net = init_mlp([3, 4, 2], seed=13)
        for name in net.params.names():
            net.params[name] = np.zeros_like(net.params[name])
        assert grad_check(net, np.zeros(3)) == 0.0

    def test_agrees_with_naive_fd(self):
        # the batched implementation measures the same analytic-vs-FD
        # discrepancy as the simple per-param loop (the two perturb at
        # different points in the computation, so only the magnitude matches)
        net = init_mlp([3, 4, 2], seed=14)
        x = Xoshiro256(15).normal_array(3)
        analytic, _ = mlp_backward(net, x, np.ones(2))
        fd = _naive_fd_grads(net, x)
        naive_max = max(
            float(
                (np.abs(analytic[n] - fd[n]) / np.maximum(1.0, np.maximum(np.abs(analytic[n]), np.abs(fd[n])))).max()
            )
            for n in analytic.names()
        )
        batched_max = grad_check(net, x)
        assert naive_max < 1e-9
        assert batched_max < 1e-9

    def test_rejects_bad_tolerance(self):
        net = init_mlp([2, 2], seed=0)
        with pytest.raises(InvalidInputError):
            grad_check(net, [0.0, 0.0], tolerance=0.0)


class TestAdam:
    def test_zero_grad_is_noop(self):
        net = init_mlp([3, 3], seed=16)
        state = AdamState.initial(net.params, learning_rate=0.1)
        new_params, new_state = adam_step(net.params, net.params.zeros_like(), state)
        assert new_params.allclose(net.params, rtol=0, atol=0)
        assert new_state.step_count == 1

    def test_first_step_moves_by_lr(self):
        params = NetParams([("p", np.array([0.0]))])
        grads = NetParams([("p", np.array([1.0]))])
        state = AdamState.initial(params, learning_rate=0.1)
        new_params, new_state = adam_step(params, grads, state)
        assert new_params["p"][0] == pytest.approx(-0.1, rel=1e-6)
        assert new_state.step_count == 1
        assert params["p"][0] == 0.0  # functional: input untouched

    def test_repeated_identical_grads_move_monotonically(self):
        params = NetParams([("p", np.array([0.0]))])
        grads = NetParams([("p", np.array([1.0]))])
        state = AdamState.initial(params, learning_rate=0.05)
        values = [0.0]
        for _ in range(5):
            params, state = adam_step(params, grads, state)
            values.append(float(params["p"][0]))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_shape_mismatch_rejected(self):
        params = NetParams([("p", np.zeros(3))])
        grads = NetParams([("p", np.zeros(4))])
        with pytest.raises(InvalidInputError):
            adam_step(params, grads, AdamState.initial(params))

    def test_optimizer_wrapper_tracks_state(self):
        params = NetParams([("p", np.array([0.0]))])
        opt = AdamOptimizer(params, learning_rate=0.1)
        params = opt.step(params, NetParams([("p", np.array([1.0]))]))
        params = opt.step(params, NetParams([("p", np.array([1.0]))]))
        assert opt.state.step_count == 2
        assert params["p"][0] < -0.15


class TestInit:
    def test_seeded_init_is_bit_identical(self):
        a = init_mlp([7, 5, 2], seed=42)
        b = init_mlp([7, 5, 2], seed=42)
        for name in a.params.names():
            assert a.params[name].tobytes() == b.params[name].tobytes()

    def test_different_seeds_differ(self):
        a = init_mlp([7, 5, 2], seed=1)
        b = init_mlp([7, 5, 2], seed=2)
        assert not np.array_equal(a.params["w0"], b.params["w0"])

    def test_glorot_bounds(self):
        net = init_mlp([100, 50], seed=3)
        limit = np.sqrt(6.0 / 150.0)
        w = net.params["w0"]
        assert np.all(np.abs(w) <= limit)
        assert np.abs(w).max() > 0.8 * limit  # actually fills the range
        assert np.array_equal(net.params["b0"], np.zeros(50))


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        params = NetParams(
            [
                ("w0", Xoshiro256(17).normal_array((4, 3))),
                ("b0", Xoshiro256(18).normal_array(4)),
                ("log_std", np.array([-0.5, 0.25, 1e-300])),
            ]
        )
        path = tmp_path / "net.orlm"
        save_params(params, path)
        loaded = load_params(path)
        assert loaded.names() == params.names()
        for name in params.names():
            assert loaded[name].tobytes() == params[name].tobytes()
            assert loaded[name].shape == params[name].shape

    def test_magic_and_version(self, tmp_path):
        path = tmp_path / "net.orlm"
        save_params(NetParams([("a", np.zeros(2))]), path)
        raw = path.read_bytes()
        assert raw[:4] == b"ORLM"
        assert raw[4:6] == (1).to_bytes(2, "little")

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.orlm"
        path.write_bytes(b"NOPE" + bytes(10))
        with pytest.raises(CheckpointError):
            load_params(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "net.orlm"
        save_params(NetParams([("a", np.ones(8))]), path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(CheckpointError):
            load_params(path)

    def test_merge_split(self):
        a = NetParams([("w0", np.ones((2, 2)))])
        b = NetParams([("w0", np.zeros((3, 3)))])
        merged = merge_params({"policy": a, "value": b})
        assert merged.names() == ["policy/w0", "value/w0"]
        back = split_params(merged, "value")
        assert np.array_equal(back["w0"], np.zeros((3, 3)))


class TestNetParams:
    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            NetParams([("a", np.array([1.0, np.inf]))])

    def test_order_preserved(self):
        params = NetParams([("z", np.zeros(1)), ("a", np.zeros(1)), ("m", np.zeros(1))])
        assert params.names() == ["z", "a", "m"]
