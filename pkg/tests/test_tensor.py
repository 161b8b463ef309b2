import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lttr import tensor as T
from lttr.gradcheck import NumericError, check_gradients
from lttr.tensor import DimensionError, Parameter, Tensor, no_grad

from conftest import param


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def naive_conv(x, w, b, stride, padding):
    """Direct loop over every output position and kernel tap."""
    nd = x.ndim - 1
    xp = np.pad(x, [(padding, padding)] * nd + [(0, 0)])
    kernel = w.shape[:nd]
    out_sp = [(x.shape[d] + 2 * padding - kernel[d]) // stride + 1 for d in range(nd)]
    out = np.zeros(out_sp + [w.shape[-1]])
    for pos in itertools.product(*[range(n) for n in out_sp]):
        acc = b.copy()
        for off in itertools.product(*[range(k) for k in kernel]):
            src = tuple(p * stride + o for p, o in zip(pos, off))
            acc += xp[src] @ w[off]
        out[pos] = acc
    return out


class TestMatmul:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(x)).data, x)

    def test_hand_case(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_triple_loop_oracle(self, rng):
        a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12)

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))

    def test_batched_gradient(self, rng):
        a, b = param(rng, 2, 3, 4, name="a"), param(rng, 4, 2, name="b")
        report = check_gradients(lambda: T.tsum(T.matmul(a, b) ** 2), [a, b])
        assert report.passed()


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_single_element(self):
        np.testing.assert_array_equal(T.softmax(Tensor([[5.0], [-2.0]]), axis=-1).data, [[1.0], [1.0]])

    def test_large_logits_do_not_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-300)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
    def test_rows_sum_to_one(self, x):
        np.testing.assert_allclose(T.softmax(Tensor(x), axis=1).data.sum(axis=1), 1.0, atol=1e-12)

    def test_gradient(self, rng):
        x = param(rng, 3, 4)
        w = rng.normal(size=(3, 4))
        assert check_gradients(lambda: T.tsum(T.softmax(x, axis=0) * w), [x]).passed()


class TestLayerNorm:
    def test_constant_slice_is_zero(self):
        out = T.layer_norm(Tensor(np.full((2, 4), 3.7)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_two_element_slice(self):
        # variance is 1, so the exact value is +-1/sqrt(1 + eps)
        out = T.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
        expected = np.array([-1.0, 1.0]) / np.sqrt(1.0 + T.LN_EPS)
        np.testing.assert_allclose(out, expected, atol=1e-15)
        np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-5)

    def test_mean_equals_bias(self, rng):
        bias = rng.normal(size=6)
        out = T.layer_norm(Tensor(rng.normal(size=(5, 6)) * 4 + 2), Tensor(np.ones(6)), Tensor(bias))
        np.testing.assert_allclose(out.data.mean(axis=-1), bias.mean(), atol=1e-12)

    def test_gradient(self, rng):
        x, g, b = param(rng, 3, 5, name="x"), param(rng, 5, name="g"), param(rng, 5, name="b")
        w = rng.normal(size=(3, 5))
        assert check_gradients(lambda: T.tsum(T.layer_norm(x, g, b) * w), [x, g, b]).passed()


class TestChannelNorm:
    def test_loop_oracle(self, rng):
        x = rng.normal(size=(4, 3, 2, 5)) * 3 + 1
        g, b = rng.normal(size=5), rng.normal(size=5)
        expected = np.empty_like(x)
        for c in range(5):
            v = x[..., c]
            expected[..., c] = (v - v.mean()) / np.sqrt(v.var() + T.LN_EPS) * g[c] + b[c]
        np.testing.assert_allclose(T.channel_norm(Tensor(x), Tensor(g), Tensor(b)).data, expected, atol=1e-12)

    def test_zero_volume_stays_zero(self):
        out = T.channel_norm(Tensor(np.zeros((4, 4, 2, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_empty_cells_share_one_value(self, rng):
        x = np.zeros((6, 6, 2))
        x[2, 3] = rng.normal(size=2)
        out = T.channel_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
        empty = np.delete(out.reshape(-1, 2), 2 * 6 + 3, axis=0)
        np.testing.assert_array_equal(empty, np.broadcast_to(empty[0], empty.shape))

    def test_affine_shape_checked(self):
        with pytest.raises(DimensionError):
            T.channel_norm(Tensor(np.zeros((2, 2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(3)))

    def test_gradient(self, rng):
        x, g, b = param(rng, 3, 4, 2, name="x"), param(rng, 2, name="g"), param(rng, 2, name="b")
        w = rng.normal(size=(3, 4, 2))
        assert check_gradients(lambda: T.tsum(T.channel_norm(x, g, b) * w), [x, g, b]).passed()


class TestElementwiseGradients:
    @pytest.mark.parametrize("fn", [
        lambda a, b: a + b, lambda a, b: a - b, lambda a, b: a * b, lambda a, b: a / (b * b + 1.0),
        lambda a, b: T.exp(a) * b, lambda a, b: T.log(a * a + 1.0) + b, lambda a, b: T.sigmoid(a) * b,
        lambda a, b: T.relu(a) * b, lambda a, b: T.tabs(a) + b, lambda a, b: a ** 3 + b,
    ])
    def test_binary_and_unary(self, rng, fn):
        a = Parameter(rng.uniform(0.2, 1.5, (3, 4)) * rng.choice([-1, 1], (3, 4)), "a")
        b = param(rng, 4, name="b")   # broadcast along rows
        assert check_gradients(lambda: T.tsum(fn(a, b)), [a, b]).passed()

    def test_clip_blocks_gradient_outside(self):
        a = Parameter(np.array([-2.0, 0.5, 2.0]))
        T.tsum(T.clip(a, 0.0, 1.0)).backward()
        np.testing.assert_array_equal(a.grad, [0.0, 1.0, 0.0])

    def test_sigmoid_extremes_are_finite(self):
        out = T.sigmoid(Tensor([-800.0, 0.0, 800.0])).data
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])

    def test_shared_node_accumulates(self):
        a = Parameter(np.array([2.0]))
        y = a * a + a
        y.backward()
        np.testing.assert_array_equal(a.grad, [5.0])


class TestShapeOps:
    def test_reshape_transpose_take_concat_gradients(self, rng):
        a, b = param(rng, 2, 3, 4, name="a"), param(rng, 2, 1, 4, name="b")
        w = rng.normal(size=(4, 4, 2))

        def f():
            c = T.concat([a, b], axis=1)
            t = T.transpose(c, (2, 1, 0))
            return T.tsum(T.take(t, (slice(None), [0, 2, 2, 3])) * w)

        assert check_gradients(f, [a, b]).passed()

    def test_take_repeated_index_accumulates(self):
        a = Parameter(np.arange(3.0))
        T.tsum(a[[0, 0, 2]]).backward()
        np.testing.assert_array_equal(a.grad, [2.0, 0.0, 1.0])

    def test_mean_and_sum(self, rng):
        a = param(rng, 3, 4)
        np.testing.assert_allclose(T.mean(a, axis=0).data, a.data.mean(axis=0), atol=1e-15)
        assert check_gradients(lambda: T.tsum(T.mean(a, axis=1, keepdims=True) ** 2), [a]).passed()


class TestBlocks:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
    def test_fold_unfold_identity(self, nx, ny, bx, by, c):
        x = np.random.default_rng(nx * 7 + ny).normal(size=(nx * bx, ny * by, c))
        cols = T.unfold_blocks(Tensor(x), (bx, by))
        assert cols.shape == (nx * ny, bx * by * c)
        back = T.fold_blocks(cols, x.shape[:2], (bx, by), c)
        np.testing.assert_array_equal(back.data, x)

    def test_block_order_is_row_major(self):
        x = np.arange(16.0).reshape(4, 4, 1)
        cols = T.unfold_blocks(Tensor(x), (2, 2)).data
        np.testing.assert_array_equal(cols[0], [0, 1, 4, 5])
        np.testing.assert_array_equal(cols[1], [2, 3, 6, 7])
        np.testing.assert_array_equal(cols[2], [8, 9, 12, 13])

    def test_untileable(self):
        with pytest.raises(DimensionError):
            T.unfold_blocks(Tensor(np.zeros((5, 4, 1))), (2, 2))


class TestConv:
    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_conv2d_matches_loop(self, rng, stride, padding):
        x, w, b = rng.normal(size=(7, 6, 3)), rng.normal(size=(3, 3, 3, 4)), rng.normal(size=4)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding)
        np.testing.assert_allclose(out.data, naive_conv(x, w, b, stride, padding), atol=1e-12)

    def test_conv3d_matches_loop(self, rng):
        x, w, b = rng.normal(size=(6, 5, 4, 2)), rng.normal(size=(3, 3, 3, 2, 3)), rng.normal(size=3)
        out = T.conv3d(Tensor(x), Tensor(w), Tensor(b), 2, 1)
        np.testing.assert_allclose(out.data, naive_conv(x, w, b, 2, 1), atol=1e-12)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_sparse_path_matches_loop_and_dense_gradient(self, rng, stride):
        x = np.zeros((10, 10, 6, 2))
        idx = rng.choice(x[..., 0].size, 12, replace=False)
        x.reshape(-1, 2)[idx] = rng.normal(size=(12, 2))
        w, b = Parameter(rng.normal(size=(3, 3, 3, 2, 3))), Parameter(rng.normal(size=3))
        g = rng.normal(size=naive_conv(x, w.data, b.data, stride, 1).shape)

        sparse = T.conv3d(Tensor(x), w, b, stride, 1)
        np.testing.assert_allclose(sparse.data, naive_conv(x, w.data, b.data, stride, 1), atol=1e-12)
        sparse.backward(g)
        gw_sparse = w.grad.copy()

        w.grad = b.grad = None
        xg = Parameter(x)   # an input that needs gradients forces the dense path
        T.conv3d(xg, w, b, stride, 1).backward(g)
        np.testing.assert_allclose(gw_sparse, w.grad, atol=1e-12)

    def test_gradients(self, rng):
        x, w, b = param(rng, 5, 4, 2, name="x"), param(rng, 3, 3, 2, 3, name="w"), param(rng, 3, name="b")
        assert check_gradients(lambda: T.tsum(T.conv2d(x, w, b, 2, 1) ** 2), [x, w, b]).passed()

    def test_channel_mismatch(self, rng):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.zeros((4, 4, 2))), Tensor(np.zeros((3, 3, 3, 1))))


class TestGraph:
    def test_no_grad_records_nothing(self):
        a = Parameter(np.ones(3))
        with no_grad():
            y = a * 2.0
        assert not y.requires_grad and y._backward is None

    def test_backward_needs_scalar(self):
        with pytest.raises(DimensionError):
            (Parameter(np.ones(3)) * 2.0).backward()


class TestGradCheck:
    def test_quadratic(self):
        x = Parameter(np.array([1.0, 2.0]), "x")
        report = check_gradients(lambda: T.tsum(x * x), [x])
        assert report.max_rel_error < 1e-6
        assert report.n_checked == 2

    def test_constant_function(self):
        x = Parameter(np.array([1.0, 2.0]), "x")

        def f():
            return T.tsum(x * 0.0) + 3.0

        f().backward()
        np.testing.assert_array_equal(x.grad, 0.0)
        assert check_gradients(f, [x]).max_rel_error == 0.0

    def test_detects_a_wrong_gradient(self):
        x = Parameter(np.array([1.0, -2.0]), "x")

        def bad_square(a):
            return T._make(a.data ** 2, (a,), lambda g: (g * a.data,))   # missing factor 2

        report = check_gradients(lambda: T.tsum(bad_square(x)), [x])
        assert not report.passed()
        assert report.worst == "x"

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_raises(self):
        x = Parameter(np.array([-1.0]))
        with pytest.raises(NumericError):
            check_gradients(lambda: T.tsum(T.log(x)), [x])

    def test_eps_bounds(self):
        x = Parameter(np.ones(1))
        with pytest.raises(ValueError):
            check_gradients(lambda: T.tsum(x), [x], eps=0.1)
