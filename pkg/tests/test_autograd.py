import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradient_cases import layer_cases, t64
from oracles import conv2d_naive, pool_naive
from segimgnet import checkpoint
from segimgnet.autograd import Adam, Parameter, Tensor, adam_step, no_grad, ops, shadow_precision
from segimgnet.autograd.gradcheck import check_gradients, relative_error
from segimgnet.errors import ConfigurationError, DataError, UsageError


class TestConv2d:
    def test_identity_kernel(self):
        out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor([[[[1.0]]]]), Tensor([0.0]))
        np.testing.assert_array_equal(out.data, np.ones((1, 1, 3, 3)))

    def test_hand_evaluated_dot_product(self):
        x = Tensor(np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2))
        w = Tensor(np.array([[1, 0], [0, 1]], np.float32).reshape(1, 1, 2, 2))
        out = ops.conv2d(x, w, Tensor([0.0]))
        assert out.shape == (1, 1, 1, 1)
        assert out.data.item() == 5.0

    def test_strided_padded_matches_loop_oracle(self, rng):
        x = rng.standard_normal((2, 4, 16, 16)).astype(np.float32)
        w = rng.standard_normal((8, 4, 3, 3)).astype(np.float32)
        b = rng.standard_normal(8).astype(np.float32)
        out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
        assert out.shape == (2, 8, 8, 8)
        assert relative_error(out.data, conv2d_naive(x, w, b, 2, 1)) < 1e-5

    def test_fifty_random_configurations(self, rng):
        for _ in range(50):
            groups = int(rng.choice([1, 1, 2]))
            C = groups * int(rng.integers(1, 4))
            O = groups * int(rng.integers(1, 4))
            K = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            pad = int(rng.integers(0, 2))
            H, W = int(rng.integers(K, 8)), int(rng.integers(K, 8))
            x = rng.standard_normal((2, C, H, W)).astype(np.float32)
            w = rng.standard_normal((O, C // groups, K, K)).astype(np.float32)
            b = rng.standard_normal(O).astype(np.float32)
            out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad, groups)
            assert relative_error(out.data, conv2d_naive(x, w, b, stride, pad, groups)) < 1e-5

    def test_depthwise_matches_oracle(self, rng):
        x = rng.standard_normal((2, 5, 9, 9)).astype(np.float32)
        w = rng.standard_normal((5, 1, 7, 7)).astype(np.float32)
        out = ops.conv2d(Tensor(x), Tensor(w), None, 1, 3, groups=5)
        assert relative_error(out.data, conv2d_naive(x, w, None, 1, 3, groups=5)) < 1e-5

    def test_shape_errors_name_dimensions(self):
        with pytest.raises(ConfigurationError, match="3 input channels"):
            ops.conv2d(Tensor(np.zeros((1, 4, 5, 5))), Tensor(np.zeros((2, 3, 3, 3))))
        with pytest.raises(ConfigurationError, match="divisible by groups"):
            ops.conv2d(Tensor(np.zeros((1, 3, 5, 5))), Tensor(np.zeros((2, 1, 3, 3))), groups=2)
        with pytest.raises(ConfigurationError, match="does not fit"):
            ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


class TestResampling:
    def test_upsample_pixel_replication(self):
        x = Tensor(np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2))
        out = ops.upsample_nearest(x, 2).data[0, 0]
        np.testing.assert_array_equal(out, [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    def test_upsample_factor_one_is_identity(self, rng):
        x = rng.standard_normal((2, 3, 4, 5)).astype(np.float32)
        np.testing.assert_array_equal(ops.upsample_nearest(Tensor(x), 1).data, x)

    def test_upsample_gradient_counts_replicas(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        ops.upsample_nearest(x, 2).sum().backward()
        np.testing.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 4.0))

    def test_upsample_rejects_bad_factor(self):
        with pytest.raises(ConfigurationError):
            ops.upsample_nearest(Tensor(np.ones((1, 1, 2, 2))), 0)

    def test_pool_examples(self):
        x = Tensor(np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2))
        assert ops.pool2d(x, "max", 2).data.item() == 4.0
        assert ops.pool2d(x, "mean", 2).data.item() == 2.5

    @pytest.mark.parametrize("kind", ["max", "mean"])
    def test_pool_matches_oracle(self, rng, kind):
        x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
        out = ops.pool2d(Tensor(x), kind, 2, 2)
        expected = pool_naive(x, kind, 2, 2).astype(np.float32)
        if kind == "max":
            np.testing.assert_array_equal(out.data, expected)
        else:
            np.testing.assert_allclose(out.data, expected, rtol=1e-6)

    def test_maxpool_tie_routes_to_first_index(self):
        x = Tensor(np.full((1, 1, 2, 2), 7.0), requires_grad=True)
        ops.pool2d(x, "max", 2).sum().backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])

    def test_resize_nearest_downsample(self):
        x = Tensor(np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4))
        np.testing.assert_array_equal(ops.resize_nearest(x, (2, 2)).data[0, 0], [[0, 2], [8, 10]])


class TestActivations:
    def test_softmax_symmetry(self):
        np.testing.assert_allclose(ops.softmax(Tensor([[0.0, 0.0]]), axis=1).data, [[0.5, 0.5]])

    def test_sigmoid_zero(self):
        assert ops.sigmoid(Tensor([0.0])).data.item() == 0.5

    def test_concat_channels_shape(self):
        out = ops.concat_channels(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 5, 4, 4))))
        assert out.shape == (1, 8, 4, 4)

    def test_concat_mismatch(self):
        with pytest.raises(ConfigurationError):
            ops.concat_channels(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 5, 2, 4))))

    def test_mul_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            ops.mul(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 2, 4, 4))))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.integers(2, 9), st.floats(0.1, 60.0), st.integers(0, 2**31 - 1))
    def test_softmax_rows_positive_and_normalized(self, rows, cols, scale, seed):
        z = np.random.default_rng(seed).standard_normal((rows, cols)) * scale
        p = ops.softmax(Tensor(z), axis=1).data
        assert np.all(p > 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_unknown_activation(self):
        with pytest.raises(ConfigurationError):
            ops.activation(Tensor([1.0]), "tanh")

    def test_gelu_close_to_exact(self):
        from scipy.special import erf
        x = np.linspace(-8, 8, 2001)
        ref = x * 0.5 * (1 + erf(x / np.sqrt(2)))
        np.testing.assert_allclose(ops.gelu(Tensor(x, dtype=np.float32)).data, ref, atol=2e-6)
        with shadow_precision():
            np.testing.assert_allclose(ops.gelu(Tensor(x)).data, ref, rtol=1e-14, atol=1e-15)


class TestNorms:
    def test_layernorm_per_position(self, rng):
        x = rng.standard_normal((2, 5, 3, 3))
        with shadow_precision():
            out = ops.channel_layernorm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5))).data
        ref = (x - x.mean(axis=1, keepdims=True)) / np.sqrt(x.var(axis=1, keepdims=True) + 1e-6)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_group_norm_matches_direct_formula(self, rng):
        x = rng.standard_normal((2, 6, 4, 4))
        gain, off = rng.standard_normal(6), rng.standard_normal(6)
        with shadow_precision():
            out = ops.group_norm(Tensor(x), 3, Tensor(gain), Tensor(off)).data
        xg = x.reshape(2, 3, -1)
        ref = ((xg - xg.mean(2, keepdims=True)) / np.sqrt(xg.var(2, keepdims=True) + 1e-5)).reshape(x.shape)
        np.testing.assert_allclose(out, ref * gain[:, None, None] + off[:, None, None], atol=1e-12)

    def test_group_norm_rejects_uneven_groups(self):
        with pytest.raises(ConfigurationError, match="divisible"):
            ops.group_norm(Tensor(np.zeros((1, 6, 2, 2))), 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))


class TestBackward:
    def test_square(self):
        w = Tensor([3.0], requires_grad=True)
        (w * w).sum().backward()
        np.testing.assert_array_equal(w.grad, [6.0])

    def test_accumulates_when_called_twice(self):
        w = Tensor([3.0], requires_grad=True)
        loss = (w * w).sum()
        loss.backward()
        loss.backward()
        np.testing.assert_array_equal(w.grad, [12.0])

    def test_detached_loss_leaves_zero_gradient(self):
        w = Parameter([3.0])
        w.zero_grad()
        d = w.detach()
        (d * d).sum().backward()
        np.testing.assert_array_equal(w.grad, [0.0])

    def test_non_scalar_rejected(self):
        with pytest.raises(UsageError):
            Tensor([1.0, 2.0], requires_grad=True).backward()

    def test_every_reachable_tensor_gets_grad(self):
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = a * 2.0
        c = ops.relu(b)
        c.sum().backward()
        assert all(t.grad is not None for t in (a, b, c))

    def test_tape_visits_in_reverse_creation_order(self):
        a = Tensor([1.0], requires_grad=True)
        b = a * 2.0
        c = b + a
        d = c * b
        ids = [n._id for n in d.sum()._tape()]
        assert ids == sorted(ids, reverse=True)
        assert len(ids) == len(set(ids))

    def test_no_grad_blocks_recording(self):
        a = Tensor([1.0], requires_grad=True)
        with no_grad():
            b = a * 2.0
        assert not b.requires_grad


def test_every_layer_passes_finite_difference_check(rng):
    with shadow_precision():
        for name, fn, inputs in layer_cases(rng):
            err = check_gradients(fn, inputs)
            assert err < 1e-4, f"{name}: relative error {err:.2e}"


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = Parameter(np.array([1.0, -2.0]))
        p.grad = np.zeros(2, np.float32)
        adam_step([("p", p)], lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        p = Parameter(np.array([0.0]))
        p.grad = np.array([1.0], np.float32)
        adam_step([("p", p)], lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
        # bias-corrected moments are both exactly 1 -> step = lr / (1 + eps)
        assert abs(-p.data[0] - 0.1 / (1 + 1e-8)) < 1e-6

    def test_scalar_descent(self):
        w = Parameter(np.array([0.0]))
        opt = Adam([("w", w)], lr=0.1)
        for _ in range(100):
            opt.zero_grad()
            d = w - 3.0
            (d * d).sum().backward()
            opt.step()
        assert abs(w.data[0] - 3.0) < 0.1

    def test_missing_gradient_names_parameter(self):
        p = Parameter(np.zeros(2))
        with pytest.raises(UsageError, match="head.weight"):
            adam_step([("head.weight", p)], lr=0.1)

    def test_state_shapes_match_parameter(self):
        p = Parameter(np.zeros((2, 3)))
        p.grad = np.ones((2, 3), np.float32)
        adam_step([("p", p)], lr=0.1)
        assert p.adam_state.m.shape == p.shape and p.adam_state.v.shape == p.shape
        assert p.adam_state.step == 1


class TestCheckpoint:
    def test_bit_exact_round_trip(self, rng, tmp_path):
        tensors = {
            "seg.enc.0.weight": rng.standard_normal((8, 3, 3, 3)).astype(np.float32),
            "head.bias": np.array([np.float32(1e-38), -0.0, np.inf], np.float32),
            "scalar": np.array(2.5, np.float32),
        }
        header = {"flags": {"use_sga": True}}
        path = tmp_path / "ck.sgnt"
        checkpoint.save(path, tensors, header)
        loaded, meta = checkpoint.load(path)
        assert list(loaded) == list(tensors) and meta == header
        for k in tensors:
            assert loaded[k].tobytes() == tensors[k].tobytes() and loaded[k].shape == tensors[k].shape
        assert checkpoint.encode(loaded, meta) == path.read_bytes()

    def test_layout(self):
        blob = checkpoint.encode({"a": np.array([1.0], np.float32)})
        assert blob[:4] == b"SGNT"
        assert int.from_bytes(blob[4:8], "little") == 1

    def test_bad_magic(self):
        with pytest.raises(DataError):
            checkpoint.decode(b"XXXX" + bytes(8))


def test_determinism_bit_identical(rng):
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)

    def run():
        a = Tensor(x, requires_grad=True)
        wt = Tensor(w, requires_grad=True)
        y = ops.gelu(ops.conv2d(a, wt, None, 1, 1))
        (y * y).sum().backward()
        return y.data.tobytes(), a.grad.tobytes(), wt.grad.tobytes()

    assert run() == run()
