import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shortfall.errors import EmbeddingIndexError, ShapeError
from shortfall.nn import tensor as T
from shortfall.nn.tensor import Tensor


def finite_diff(fn, arrays, index, eps=1e-6):
    """Central-difference gradient of scalar fn w.r.t. arrays[index]."""
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[index])
    flat = g.reshape(-1)
    src = base[index].reshape(-1)
    for i in range(src.size):
        orig = src[i]
        src[i] = orig + eps
        up = fn(*base)
        src[i] = orig - eps
        down = fn(*base)
        src[i] = orig
        flat[i] = (up - down) / (2 * eps)
    return g


def check_op(build, *shapes, seed=0, tol=1e-6, low=-1.0, high=1.0):
    """Compare autodiff gradients of sum(op(...)) against finite differences."""
    rng = np.random.default_rng(seed)
    arrays = [rng.uniform(low, high, s) for s in shapes]

    def scalar(*arrs):
        out = build(*[Tensor(a.copy()) for a in arrs])
        return float(T.tsum(out).data)

    tensors = [Tensor(a.copy()) for a in arrays]
    loss = T.tsum(build(*tensors))
    T.backward(loss)
    for i, t in enumerate(tensors):
        fd = finite_diff(scalar, arrays, i)
        denom = max(np.abs(fd).max(), 1e-8)
        rel = np.abs(t.grad - fd).max() / denom
        assert rel < tol, f"input {i}: rel error {rel}"


class TestPrimitives:
    def test_add(self):
        check_op(T.add, (3, 4), (3, 4))

    def test_add_bias(self):
        check_op(T.add_bias, (5, 3), (3,))

    def test_add_expand(self):
        check_op(T.add_expand, (2, 4, 3), (2, 3))

    def test_sub_mul(self):
        check_op(lambda a, b: T.mul(T.sub(a, b), a), (4, 4), (4, 4))

    def test_cmul_neg(self):
        check_op(lambda a: T.neg(T.cmul(a, 2.5)), (6,))

    def test_matmul_2d_2d(self):
        check_op(T.matmul, (3, 4), (4, 5))

    def test_matmul_2d_1d(self):
        check_op(T.matmul, (3, 4), (4,))

    def test_matmul_1d_2d(self):
        check_op(T.matmul, (4,), (4, 3))

    def test_matmul_3d_2d(self):
        check_op(T.matmul, (2, 3, 4), (4, 5))

    def test_matmul_3d_1d(self):
        check_op(T.matmul, (2, 3, 4), (4,))

    def test_tanh_sigmoid(self):
        check_op(lambda a: T.sigmoid(T.tanh(a)), (3, 3))

    def test_log(self):
        check_op(T.log, (5,), low=0.2, high=2.0)

    def test_square(self):
        check_op(T.square, (3, 2))

    def test_softmax(self):
        # Sum of a softmax row is identically 1, so probe the Jacobian
        # through a fixed random linear functional instead.
        c = np.random.default_rng(9).normal(size=(4, 5))
        check_op(lambda a: T.mul(T.softmax(a), Tensor(c)), (4, 5))

    def test_clip_passthrough_region(self):
        check_op(lambda a: T.clip(a, -10.0, 10.0), (4,))

    def test_clip_zero_gradient_outside(self):
        x = Tensor(np.array([-5.0, 0.0, 5.0]))
        out = T.clip(x, -1.0, 1.0)
        T.backward(T.tsum(out))
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])

    def test_concat_stack(self):
        check_op(lambda a, b: T.concat([a, b]), (3,), (4,))
        check_op(lambda a, b: T.stack([a, b]), (3,), (3,))

    def test_sum_mean_axes(self):
        check_op(lambda a: T.tsum(a, axis=0), (3, 4))
        check_op(T.tmean, (3, 4))

    def test_weighted_sum(self):
        check_op(T.weighted_sum, (5,), (5, 3))
        check_op(T.weighted_sum, (2, 5), (2, 5, 3))

    def test_select_time(self):
        check_op(lambda a: T.select_time(a, 1), (4, 3))

    def test_embedding_gradient_scatters(self):
        table = Tensor(np.arange(12.0).reshape(4, 3))
        out = T.embedding(table, np.array([1, 1, 3]))
        T.backward(T.tsum(out))
        expected = np.zeros((4, 3))
        expected[1] = 2.0
        expected[3] = 1.0
        np.testing.assert_allclose(table.grad, expected)

    def test_embedding_range_check(self):
        table = Tensor(np.zeros((4, 3)))
        with pytest.raises(EmbeddingIndexError):
            T.embedding(table, np.array([4]))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            T.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


class TestGraphMechanics:
    def test_fanout_accumulates(self):
        # d/dx [x*x + x] = 2x + 1 with x reused by two consumers.
        x = Tensor(np.array([3.0]))
        out = T.add(T.mul(x, x), x)
        T.backward(T.tsum(out))
        np.testing.assert_allclose(x.grad, [7.0])

    def test_repeated_backward_accumulates_leaf_grads(self):
        x = Tensor(np.array([2.0]))
        for _ in range(2):
            T.backward(T.tsum(T.square(x)))
        np.testing.assert_allclose(x.grad, [8.0])

    def test_backward_requires_scalar(self):
        with pytest.raises(ShapeError):
            T.backward(Tensor(np.zeros(3)))

    def test_deep_chain_does_not_recurse(self):
        # Far deeper than Python's default recursion limit.
        x = Tensor(np.array(1.0))
        node = x
        for _ in range(5000):
            node = T.cmul(node, 1.0001)
        T.backward(node)
        assert x.grad is not None and np.isfinite(x.grad)

    def test_float64_everywhere(self):
        t = T.sigmoid(Tensor(np.zeros((2, 2), dtype=np.float32)))
        assert t.data.dtype == np.float64


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 10 ** 6))
def test_matmul_grad_property(n, m, seed):
    check_op(T.matmul, (n, m), (m, n), seed=seed)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10 ** 6))
def test_softmax_rows_sum_to_one(n, seed):
    rng = np.random.default_rng(seed)
    out = T.softmax(Tensor(rng.normal(size=(3, n))))
    np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
