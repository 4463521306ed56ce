import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from a2net import numcore as nc
from a2net.numcore import checkpoint


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gradcheck(f, params, tol=1e-4):
    for p in params:
        p.zero_grad()
    nc.backward(f())
    for p in params:
        num = nc.numerical_gradient(f, p)
        err = nc.max_relative_error(p.grad, num)
        assert err < tol, f"{p.name}: relative error {err:.2e}"


def rand_param(rng, shape, name):
    return nc.parameter(rng.uniform(-2, 2, shape), name=name)


# ------------------------------------------------------------- forward values


class TestConv1d:
    def test_length_preserved_for_k9_pad4(self, rng):
        x = rng.standard_normal((1, 3, 128))
        w = rng.standard_normal((5, 3, 9))
        out = nc.conv1d(x, w, np.zeros(5), stride=1, padding=4)
        assert out.shape == (1, 5, 128)

    def test_identity_kernel(self, rng):
        x = rng.standard_normal((2, 4, 7))
        out = nc.conv1d(x, np.eye(4)[:, :, None], np.zeros(4))
        np.testing.assert_array_equal(out.value, x)

    def test_hand_example(self):
        out = nc.conv1d(np.array([[[1.0, 2, 3, 4]]]), np.array([[[1.0, 1]]]), np.zeros(1), stride=2)
        np.testing.assert_array_equal(out.value, [[[3.0, 7.0]]])

    def test_no_kernel_flip(self):
        out = nc.conv1d(np.array([[[1.0, 2, 3]]]), np.array([[[1.0, 0, 0]]]))
        assert out.value.item() == 1.0

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channels"):
            nc.conv1d(np.zeros((1, 3, 8)), np.zeros((2, 4, 3)))

    def test_kernel_too_long_rejected(self):
        with pytest.raises(ValueError):
            nc.conv1d(np.zeros((1, 1, 2)), np.zeros((1, 1, 5)))

    @given(st.integers(1, 3), st.integers(2, 20), st.sampled_from([1, 3, 5, 7]))
    @settings(max_examples=30, deadline=None)
    def test_odd_kernel_same_padding_keeps_length(self, c, t, k):
        if k > t + (k - 1):
            return
        out = nc.conv1d(np.ones((1, c, t)), np.ones((2, c, k)), padding=(k - 1) // 2)
        assert out.shape[2] == t


class TestMaxPool:
    def test_hand_example(self):
        out = nc.maxpool1d(np.array([[[1.0, 3, 2, 4]]]), 2, 2)
        np.testing.assert_array_equal(out.value, [[[3.0, 4.0]]])

    def test_constant_input(self):
        out = nc.maxpool1d(np.full((1, 2, 8), 5.0), 2, 2)
        np.testing.assert_array_equal(out.value, np.full((1, 2, 4), 5.0))

    def test_table_length(self):
        assert nc.maxpool1d(np.zeros((1, 1, 128)), 2, 2).shape[2] == 64

    def test_tie_goes_to_lowest_index(self):
        x = nc.parameter(np.array([[[2.0, 2.0, 1.0, 1.0]]]))
        nc.backward(nc.reduce_sum(nc.maxpool1d(x, 2, 2)))
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0, 1.0, 0.0]]])

    def test_kernel_longer_than_input(self):
        with pytest.raises(ValueError):
            nc.maxpool1d(np.zeros((1, 1, 2)), 3, 1)


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(nc.relu(np.array([-1.0, 0, 2])).value, [0, 0, 2])

    def test_exp(self):
        assert nc.exp(np.array(0.0)).value == 1.0

    def test_concat_shape(self):
        out = nc.concat([np.zeros((2, 256, 5)), np.zeros((2, 256, 5))], axis=1)
        assert out.shape == (2, 512, 5)

    def test_incompatible_add(self):
        with pytest.raises(ValueError):
            nc.add(np.zeros((2, 3)), np.zeros((4,)))

    def test_matmul_shape_error(self):
        with pytest.raises(ValueError):
            nc.matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_reshape_error(self):
        with pytest.raises(ValueError):
            nc.reshape(np.zeros(6), (4, 2))

    def test_sigmoid_extremes_are_finite(self):
        v = nc.sigmoid(np.array([-800.0, 0.0, 800.0])).value
        assert np.all(np.isfinite(v))
        np.testing.assert_allclose(v, [0.0, 0.5, 1.0])


class TestLosses:
    def test_uniform_logits(self):
        loss = nc.softmax_cross_entropy(np.zeros((4, 3)), [0, 1, 2, 0])
        assert loss.item() == pytest.approx(math.log(3), abs=1e-12)

    def test_two_class_closed_form(self):
        loss = nc.softmax_cross_entropy(np.zeros((2, 2)), [0, 1])
        assert loss.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_monotone_in_correct_logit(self):
        vals = [nc.softmax_cross_entropy(np.array([[a, 0.0, 0.0]]), [0]).item() for a in (-5, 0, 1, 5, 20)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        wrong = [nc.softmax_cross_entropy(np.array([[0.0, a, 0.0]]), [0]).item() for a in (10, 100, 1000)]
        assert all(np.isfinite(wrong)) and wrong == sorted(wrong)
        assert wrong[-1] == pytest.approx(1000.0)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            nc.softmax_cross_entropy(np.zeros((1, 3)), [3])

    def test_softmax_rows_sum_to_one(self, rng):
        p = nc.softmax(rng.uniform(-50, 50, (20, 7)))
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)

    @pytest.mark.parametrize(
        "d, expected", [(0.0, 0.0), (0.5, 0.125), (3.0, 2.5), (-3.0, 2.5), (1.0, 0.5)]
    )
    def test_smooth_l1(self, d, expected):
        assert nc.smooth_l1(np.array([d]), np.array([0.0])).item() == pytest.approx(expected)

    @pytest.mark.parametrize(
        "pred, target, expected", [([1.0], [1.0], 0.0), ([0.0], [2.0], 4.0), ([1.0, 1.0], [0.0, 2.0], 1.0)]
    )
    def test_mse(self, pred, target, expected):
        assert nc.mse(np.array(pred), np.array(target)).item() == pytest.approx(expected)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError):
            nc.mse(np.zeros(2), np.zeros(3))


# ---------------------------------------------------------------- gradients


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = rand_param(rng, (2, 3, 4), "x")
        nc.backward(nc.reduce_sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_mse_closed_form(self):
        w = nc.parameter(np.array([1.0]))
        nc.backward(nc.mse(nc.mul(w, 2.0), np.array([0.0])))
        assert w.grad[0] == pytest.approx(8.0)

    def test_non_scalar_root_rejected(self):
        with pytest.raises(ValueError, match="scalar"):
            nc.backward(nc.parameter(np.zeros(3)))

    def test_accumulates_without_reset(self):
        x = nc.parameter(np.array([1.0, 2.0]))
        nc.backward(nc.reduce_sum(x))
        nc.backward(nc.reduce_sum(x))
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])
        x.zero_grad()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_shared_node_sums_contributions(self, rng):
        x = rand_param(rng, (3,), "x")

        def f():
            h = nc.exp(x)
            return nc.reduce_sum(nc.add(nc.mul(h, 2.0), nc.mul(h, h)))

        gradcheck(f, [x])


class TestGradcheck:
    """Every differentiable op against central differences (h=1e-5)."""

    def test_conv1d(self, rng):
        x, w, b = rand_param(rng, (2, 4, 8), "x"), rand_param(rng, (3, 4, 3), "w"), rand_param(rng, (3,), "b")
        r = rng.standard_normal((2, 3, 4))
        gradcheck(lambda: nc.reduce_sum(nc.mul(nc.conv1d(x, w, b, stride=2, padding=1), r)), [x, w, b])

    def test_conv1d_k9(self, rng):
        x, w, b = rand_param(rng, (1, 2, 8), "x"), rand_param(rng, (2, 2, 9), "w"), rand_param(rng, (2,), "b")
        gradcheck(lambda: nc.reduce_sum(nc.mul(nc.conv1d(x, w, b, padding=4), nc.conv1d(x, w, b, padding=4))), [x, w, b])

    def test_maxpool(self, rng):
        x = rand_param(rng, (2, 4, 8), "x")
        r = rng.standard_normal((2, 4, 4))
        gradcheck(lambda: nc.reduce_sum(nc.mul(nc.maxpool1d(x, 2, 2), r)), [x])

    def test_relu_exp_sigmoid(self, rng):
        x = rand_param(rng, (2, 4, 8), "x")
        gradcheck(lambda: nc.reduce_sum(nc.mul(nc.relu(x), nc.add(nc.exp(x), nc.sigmoid(x)))), [x])

    def test_add_mul_broadcast(self, rng):
        a, b = rand_param(rng, (2, 4, 8), "a"), rand_param(rng, (1, 4, 1), "b")
        gradcheck(lambda: nc.reduce_sum(nc.mul(nc.add(a, b), nc.sub(a, b))), [a, b])

    def test_matmul_reshape_transpose(self, rng):
        a, b = rand_param(rng, (2, 4, 8), "a"), rand_param(rng, (4, 3), "b")

        def f():
            flat = nc.reshape(nc.transpose(a, (0, 2, 1)), (16, 4))
            return nc.reduce_sum(nc.mul(nc.matmul(flat, b), nc.matmul(flat, b)))

        gradcheck(f, [a, b])

    def test_concat_slice_take(self, rng):
        a, b = rand_param(rng, (2, 2, 8), "a"), rand_param(rng, (2, 3, 8), "b")
        idx = rng.integers(0, 2 * 5 * 8, 20)

        def f():
            c = nc.concat([a, b], axis=1)
            s = nc.slice_channels(c, 1, 4)
            return nc.add(nc.reduce_sum(nc.mul(s, s)), nc.reduce_sum(nc.exp(nc.take(c, idx))))

        gradcheck(f, [a, b])

    def test_cross_entropy(self, rng):
        z = rand_param(rng, (8, 4), "z")
        labels = rng.integers(0, 4, 8)
        gradcheck(lambda: nc.softmax_cross_entropy(z, labels), [z])

    def test_smooth_l1_and_mse(self, rng):
        p = rand_param(rng, (16,), "p")
        t = rng.uniform(-2, 2, 16)
        gradcheck(lambda: nc.add(nc.smooth_l1(p, t), nc.mse(p, t)), [p])

    def test_mean_log(self, rng):
        p = nc.parameter(rng.uniform(0.5, 2, (2, 4, 8)), name="p")
        gradcheck(lambda: nc.mean(nc.log(p)), [p])


# ---------------------------------------------------------------- optimiser


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = nc.parameter(np.array([1.0, -2.0]))
        st_ = nc.AdamState.for_params([p])
        nc.adam_step([p], [np.zeros(2)], st_, lr=0.1)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_first_step_magnitude_is_lr(self):
        p = nc.parameter(np.array([0.0]))
        st_ = nc.AdamState.for_params([p])
        nc.adam_step([p], [np.ones(1)], st_, lr=0.1)
        assert p.value[0] == pytest.approx(-0.1, rel=1e-6)

    def test_step_decay(self):
        assert nc.step_lr(1e-4, 29, 30) == 1e-4
        assert nc.step_lr(1e-4, 30, 30) == pytest.approx(1e-5)

    def test_state_shape_mismatch(self):
        p = nc.parameter(np.zeros(2))
        with pytest.raises(ValueError):
            nc.adam_step([p], [np.zeros(2)], nc.AdamState(0, [np.zeros(3)], [np.zeros(3)]), 0.1)


class TestCheckpoint:
    def test_byte_exact_round_trip(self, rng, tmp_path):
        arrays = {"a.weight": rng.standard_normal((3, 2, 5)), "b": np.array([np.pi]), "empty": np.zeros((0, 2))}
        path = tmp_path / "x.ckpt"
        checkpoint.save(path, arrays)
        raw = path.read_bytes()
        back = checkpoint.load(path)
        assert list(back) == list(arrays)
        for k in arrays:
            assert back[k].tobytes() == np.ascontiguousarray(arrays[k]).tobytes()
        assert checkpoint.dumps(back) == raw

    def test_header(self):
        raw = checkpoint.dumps({"w": np.ones(1)})
        assert raw[:8] == checkpoint.MAGIC
        assert int.from_bytes(raw[8:12], "little") == checkpoint.VERSION

    def test_truncated(self):
        raw = checkpoint.dumps({"w": np.ones(4)})
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.loads(raw[:-3])
