import numpy as np
import pytest

from gaze_ssl.nn import functional as F
from gaze_ssl.nn.checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from gaze_ssl.nn.gradcheck import max_gradient_error
from gaze_ssl.nn.layers import MLP, Encoder, images_to_tensor
from gaze_ssl.nn.optim import AdamWState, adamw_step, ema_update
from gaze_ssl.nn.tensor import Tensor, concat, logsumexp, no_grad, sqrt

N_INSTANCES = 20
TOL = 1e-3


def _weights(rng, shape):
    return rng.normal(size=shape)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _distinct(rng, shape, gap=0.01):
    # values pairwise at least ``gap`` apart so max-pool has no ties within a finite-difference step
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 4, n)).reshape(shape) - n * gap / 2


def _check(fn, inputs):
    err = max_gradient_error(fn, inputs)
    assert err < TOL, f"relative gradient error {err:.2e}"


class TestElementwiseGradients:
    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_arithmetic(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(3, 4)), rng.uniform(0.5, 2.0, size=(4,))
        w = _weights(rng, (3, 4))
        _check(lambda x, y: ((x + y) * (x - y) / y * Tensor(w, dtype=x.dtype)).sum(), [a, b])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_power_exp_log_sqrt(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.3, 2.0, size=(5,))
        w = _weights(rng, (5,))
        _check(lambda t: (((t ** 3).log() + t.exp() * 0.1 + sqrt(t)) * Tensor(w, dtype=t.dtype)).sum(), [x])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_relu(self, seed):
        rng = np.random.default_rng(seed)
        x = _away_from_zero(rng, (4, 5))
        w = _weights(rng, (4, 5))
        _check(lambda t: (F.relu(t) * Tensor(w, dtype=t.dtype)).sum(), [x])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_reductions_and_shapes(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3, 4))
        w = _weights(rng, (4, 6))
        _check(lambda t: ((t.reshape(6, 4).T.T @ Tensor(w, dtype=t.dtype)).mean(axis=0) ** 2).sum()
               + t.sum(axis=1, keepdims=True).mean(), [x])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_indexing_and_concat(self, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
        idx = rng.integers(0, 6, size=5)
        w = _weights(rng, (5, 3))
        _check(lambda a, b: (concat([a, b], axis=0)[idx] * Tensor(w, dtype=a.dtype)).sum(), [x, y])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_logsumexp(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(4, 6)) * 3
        w = _weights(rng, (4,))
        _check(lambda t: (logsumexp(t, axis=1) * Tensor(w, dtype=t.dtype)).sum(), [x])


class TestLayerGradients:
    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_conv2d(self, seed):
        rng = np.random.default_rng(seed)
        stride = 1 + seed % 2
        k = (1, 3)[seed % 2 == 0]
        x = rng.normal(size=(2, 5, 6, 2))
        wt = rng.normal(size=(k, k, 2, 3)) * 0.5
        b = rng.normal(size=(3,))
        out_w = None

        def fn(xx, ww, bb):
            nonlocal out_w
            y = F.conv2d(xx, ww, bb, stride=stride)
            if out_w is None:
                out_w = np.random.default_rng(seed + 100).normal(size=y.shape)
            return (y * Tensor(out_w, dtype=y.dtype)).sum()

        _check(fn, [x, wt, b])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_max_pool(self, seed):
        rng = np.random.default_rng(seed)
        x = _distinct(rng, (2, 5, 4, 3))
        w = _weights(rng, (2, 2, 2, 3))
        _check(lambda t: (F.max_pool(t) * Tensor(w, dtype=t.dtype)).sum(), [x])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_global_avg_pool(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 4, 2, 5))
        w = _weights(rng, (3, 5))
        _check(lambda t: (F.global_avg_pool(t) * Tensor(w, dtype=t.dtype)).sum(), [x])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_linear(self, seed):
        rng = np.random.default_rng(seed)
        x, wt, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=(3,))
        w = _weights(rng, (4, 3))
        _check(lambda a, ww, bb: (F.linear(a, ww, bb) * Tensor(w, dtype=a.dtype)).sum(), [x, wt, b])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_group_norm(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3, 3, 4)) * 2 + 1
        gamma, beta = rng.normal(size=(4,)), rng.normal(size=(4,))
        w = _weights(rng, (2, 3, 3, 4))
        _check(lambda a, g, b: (F.group_norm(a, g, b, groups=2) * Tensor(w, dtype=a.dtype)).sum(),
               [x, gamma, beta])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_l2_normalize(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(4, 6))
        w = _weights(rng, (4, 6))
        _check(lambda t: (F.l2_normalize(t, axis=1) * Tensor(w, dtype=t.dtype)).sum(), [x])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_cross_entropy(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(6, 4)) * 2
        labels = rng.integers(0, 4, size=6)
        _check(lambda t: F.cross_entropy(t, labels), [logits])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_two_layer_net(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(5, 4))
        w1, b1 = rng.normal(size=(4, 6)), rng.normal(size=(6,)) * 0.1
        w2 = rng.normal(size=(6, 3))
        # keep hidden pre-activations clear of the relu kink
        pre = x @ w1 + b1
        b1 = b1 + np.where(np.abs(pre) < 0.05, 0.1, 0.0).max(axis=0)

        def fn(a, ww1, bb1, ww2):
            return (F.linear(F.relu(F.linear(a, ww1, bb1)), ww2) ** 2).mean()

        _check(fn, [x, w1, b1, w2])

    def test_two_block_encoder_end_to_end(self):
        # fixed seed: with many relu/max-pool inputs a random draw could land within h of a kink
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(2, 8, 8, 3))
        w1, w2 = rng.normal(size=(3, 3, 3, 4)) * 0.4, rng.normal(size=(3, 3, 4, 8)) * 0.3
        g1, g2 = 1 + 0.1 * rng.normal(size=4), 1 + 0.1 * rng.normal(size=8)
        b1, b2 = 0.1 * rng.normal(size=4), 0.1 * rng.normal(size=8)
        proj = rng.normal(size=(2, 8))

        def fn(xx, c1, c2, ga1, ga2, be1, be2):
            h = F.max_pool(F.relu(F.group_norm(F.conv2d(xx, c1), ga1, be1, 2)))
            h = F.max_pool(F.relu(F.group_norm(F.conv2d(h, c2), ga2, be2, 2)))
            z = F.l2_normalize(F.global_avg_pool(h), axis=1)
            return (z * Tensor(proj, dtype=z.dtype)).sum()

        _check(fn, [x, w1, w2, g1, g2, b1, b2])


class TestForwardOps:
    def test_identity_conv(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(2, 5, 5, 3)))
        kernel = Tensor(np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3))
        np.testing.assert_array_equal(F.conv2d(x, kernel).data, x.data)

    def test_conv_matches_direct_loops(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 4, 5, 2))
        w = rng.normal(size=(3, 3, 2, 3))
        out = F.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), padding=1).data
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        ref = np.zeros((1, 4, 5, 3))
        for i in range(4):
            for j in range(5):
                for o in range(3):
                    ref[0, i, j, o] = np.sum(xp[0, i:i + 3, j:j + 3, :] * w[..., o])
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_global_avg_pool_constant(self):
        x = Tensor(np.full((2, 3, 3, 4), 0.7))
        np.testing.assert_allclose(F.global_avg_pool(x).data, 0.7, rtol=1e-6)

    def test_linear_matches_triple_loop(self):
        rng = np.random.default_rng(2)
        x, w, b = rng.normal(size=(6, 5)), rng.normal(size=(5, 4)), rng.normal(size=(4,))
        out = F.linear(Tensor(x), Tensor(w), Tensor(b)).data
        ref = np.zeros((6, 4))
        for i in range(6):
            for j in range(4):
                acc = b[j]
                for k in range(5):
                    acc += x[i, k] * w[k, j]
                ref[i, j] = acc
        assert np.max(np.abs(out - ref)) < 1e-5

    def test_l2_normalize_unit_and_zero(self):
        rng = np.random.default_rng(3)
        y = F.l2_normalize(Tensor(rng.normal(size=(5, 7))), axis=1).data
        np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, rtol=1e-6)
        with pytest.raises(ValueError):
            F.l2_normalize(Tensor(np.zeros((2, 3))), axis=1)

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            F.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
        with pytest.raises(ValueError):
            F.conv2d(Tensor(np.zeros((1, 4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))
        with pytest.raises(ValueError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_max_pool_drops_trailing(self):
        x = Tensor(np.arange(25.0).reshape(1, 5, 5, 1))
        np.testing.assert_array_equal(F.max_pool(x).data[0, :, :, 0], [[6, 8], [16, 18]])

    def test_encoder_feature_dim_independent_of_batch(self):
        enc = Encoder(seed=0)
        rng = np.random.default_rng(0)
        for n in (1, 3, 7):
            with no_grad():
                out = enc(images_to_tensor(rng.integers(0, 256, size=(n, 32, 32, 3), dtype=np.uint8)))
            assert out.shape == (n, 128)
            assert np.all(np.isfinite(out.data))


class TestBackward:
    def test_square(self):
        x = Tensor([3.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0])

    def test_without_graph_raises(self):
        with pytest.raises(RuntimeError):
            Tensor([1.0]).sum().backward()

    def test_detached_branch_gets_no_gradient(self):
        a = Tensor(np.ones(3), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        ((a * 2).sum() + (b.detach() * 3).sum()).backward()
        np.testing.assert_allclose(a.grad, 2.0)
        assert b.grad is None

    def test_no_grad_records_nothing(self):
        a = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (a * 2).sum()
        assert not y.requires_grad

    def test_gradient_accumulates_over_reuse(self):
        a = Tensor(np.array([2.0]), requires_grad=True)
        (a * a * a).sum().backward()
        np.testing.assert_allclose(a.grad, [12.0])

    def test_unreachable_parameter_has_no_gradient(self):
        mlp = MLP(3, 4, 2, seed=0)
        unused = MLP(3, 4, 2, seed=1)
        mlp(Tensor(np.ones((2, 3)))).sum().backward()
        assert all(p.grad is None for p in unused.parameters())
        assert all(p.grad is not None for p in mlp.parameters())


class TestAdamW:
    def test_zero_gradient_decays_exactly(self):
        p = {"w": np.array([1.0, -2.0])}
        adamw_step(p, {"w": np.zeros(2)}, AdamWState(lr=0.1, weight_decay=0.1))
        np.testing.assert_allclose(p["w"], [0.99, -1.98], rtol=0, atol=1e-15)

    def test_zero_gradient_no_decay_is_noop(self):
        p = {"w": np.array([1.0, -2.0])}
        adamw_step(p, {"w": np.zeros(2)}, AdamWState(lr=0.1, weight_decay=0.0))
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_constant_gradient_step_tends_to_lr(self):
        p = {"w": np.array([0.0])}
        state = AdamWState(lr=0.01, weight_decay=0.0)
        for _ in range(2000):
            before = p["w"].copy()
            adamw_step(p, {"w": np.array([0.3])}, state)
        assert abs(before[0] - p["w"][0]) == pytest.approx(0.01, rel=1e-6)

    def test_first_step_is_lr_times_sign(self):
        p = {"w": np.array([0.0, 0.0])}
        adamw_step(p, {"w": np.array([5.0, -1e-3])}, AdamWState(lr=0.02, weight_decay=0.0))
        np.testing.assert_allclose(p["w"], [-0.02, 0.02], rtol=1e-4)

    def test_nan_gradient_fails_loudly(self):
        p = {"conv.weight": np.zeros(2)}
        with pytest.raises(FloatingPointError, match="conv.weight"):
            adamw_step(p, {"conv.weight": np.array([np.nan, 0.0])}, AdamWState())


class TestEma:
    def test_limits_and_midpoint(self):
        theta = {"w": np.array([2.0, 2.0])}
        xi = {"w": np.zeros(2)}
        ema_update(theta, xi, 0.5)
        np.testing.assert_array_equal(xi["w"], [1.0, 1.0])
        ema_update(theta, xi, 1.0)
        np.testing.assert_array_equal(xi["w"], [1.0, 1.0])
        ema_update(theta, xi, 0.0)
        np.testing.assert_array_equal(xi["w"], [2.0, 2.0])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ema_update({"w": np.zeros(2)}, {"w": np.zeros(3)}, 0.5)

    def test_bad_momentum(self):
        with pytest.raises(ValueError):
            ema_update({"w": np.zeros(2)}, {"w": np.zeros(2)}, 1.5)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        enc = Encoder(seed=3)
        state = enc.state_dict()
        state["extra64"] = np.random.default_rng(0).normal(size=(3, 2))
        path = save_checkpoint(tmp_path / "enc.ckpt", state)
        loaded = load_checkpoint(path)
        assert list(loaded) == list(state)
        for k in state:
            assert loaded[k].dtype == state[k].dtype
            assert loaded[k].tobytes() == state[k].tobytes()
        assert dumps(loaded) == dumps(state)

    def test_load_into_module(self):
        a, b = Encoder(seed=1), Encoder(seed=2)
        b.load_state_dict(loads(dumps(a.state_dict())))
        for k, v in a.state_dict().items():
            np.testing.assert_array_equal(b.state_dict()[k], v)

    def test_corrupt_input_rejected(self):
        blob = dumps({"w": np.zeros(2, np.float32)})
        with pytest.raises(ValueError):
            loads(b"NOTACKPT" + blob[8:])
        with pytest.raises(ValueError):
            loads(blob + b"\x00")
