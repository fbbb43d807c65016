"""Finite-difference checks for every reverse-mode op.

Each op's gradient is compared against central differences on random inputs
before anything downstream (the transformer, training) is trusted.
"""

import numpy as np
import pytest

from streamdec.autodiff import (
    Tensor,
    add,
    embedding,
    layer_norm,
    log_softmax,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    sum_all,
    transpose,
)


def fd_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f w.r.t. array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def check(op_of, x: np.ndarray, rtol: float = 1e-6):
    """Backprop through scalar = sum(weights * op(x)) and compare to FD."""
    rng = np.random.default_rng(7)

    def build(arr):
        t = Tensor(arr, requires_grad=True)
        out = op_of(t)
        w = rng.normal(size=out.data.shape)
        return t, sum_all(mul(out, Tensor(w))), w

    t, loss, w = build(x)
    loss.backward()

    def f(arr):
        t2 = Tensor(arr, requires_grad=True)
        out2 = op_of(t2)
        return float(np.sum(w * out2.data))

    num = fd_grad(f, x)
    np.testing.assert_allclose(t.grad, num, rtol=rtol, atol=1e-7)


class TestElementwiseOps:
    def test_add_same_shape(self, rng):
        x = rng.normal(size=(3, 4))
        y = rng.normal(size=(3, 4))
        check(lambda t: add(t, Tensor(y)), x)

    def test_add_broadcast_bias(self, rng):
        # (3,4) + (4,): bias grad must sum over the broadcast axis
        x = rng.normal(size=(4,))
        other = rng.normal(size=(3, 4))
        check(lambda t: add(Tensor(other), t), x)

    def test_mul(self, rng):
        x = rng.normal(size=(2, 5))
        y = rng.normal(size=(2, 5))
        check(lambda t: mul(t, Tensor(y)), x)

    def test_mul_both_sides_require_grad(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        y = Tensor(rng.normal(size=(3,)), requires_grad=True)
        loss = sum_all(mul(x, y))
        loss.backward()
        np.testing.assert_allclose(x.grad, y.data)
        np.testing.assert_allclose(y.grad, x.data)

    def test_scale(self, rng):
        x = rng.normal(size=(3, 3))
        check(lambda t: scale(t, -2.5), x)

    def test_relu(self, rng):
        x = rng.normal(size=(4, 4)) + 0.05  # keep away from the kink
        check(lambda t: relu(t), x)

    def test_relu_zero_blocks_grad(self):
        t = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        sum_all(relu(t)).backward()
        np.testing.assert_allclose(t.grad, [0.0, 1.0])


class TestMatmul:
    def test_2d(self, rng):
        x = rng.normal(size=(3, 4))
        y = rng.normal(size=(4, 2))
        check(lambda t: matmul(t, Tensor(y)), x)
        check(lambda t: matmul(Tensor(x), t), y)

    def test_batched(self, rng):
        x = rng.normal(size=(2, 3, 4))
        y = rng.normal(size=(2, 4, 5))
        check(lambda t: matmul(t, Tensor(y)), x)
        check(lambda t: matmul(Tensor(x), t), y)

    def test_broadcast_batch(self, rng):
        # (2,3,4) @ (4,5): shared right operand accumulates over the batch
        x = rng.normal(size=(4, 5))
        other = rng.normal(size=(2, 3, 4))
        check(lambda t: matmul(Tensor(other), t), x)


class TestShapeOps:
    def test_reshape(self, rng):
        x = rng.normal(size=(2, 6))
        check(lambda t: reshape(t, (3, 4)), x)

    def test_transpose(self, rng):
        x = rng.normal(size=(2, 3, 4))
        check(lambda t: transpose(t, (2, 0, 1)), x)


class TestSoftmaxFamily:
    def test_softmax_rows_sum_to_one(self, rng):
        x = rng.normal(size=(3, 5))
        y = softmax(Tensor(x))
        np.testing.assert_allclose(y.data.sum(axis=-1), np.ones(3))

    def test_softmax_grad(self, rng):
        x = rng.normal(size=(3, 5))
        check(lambda t: softmax(t), x, rtol=1e-5)

    def test_log_softmax_grad(self, rng):
        x = rng.normal(size=(2, 7))
        check(lambda t: log_softmax(t), x, rtol=1e-5)

    def test_log_softmax_normalized(self, rng):
        x = rng.normal(size=(4, 6)) * 3
        y = log_softmax(Tensor(x))
        np.testing.assert_allclose(
            np.log(np.sum(np.exp(y.data), axis=-1)), np.zeros(4), atol=1e-12
        )

    def test_softmax_shift_invariance(self, rng):
        x = rng.normal(size=(2, 5))
        a = softmax(Tensor(x)).data
        b = softmax(Tensor(x + 1000.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestLayerNorm:
    def test_grad_x(self, rng):
        x = rng.normal(size=(3, 6))
        gain = rng.normal(size=(6,))
        bias = rng.normal(size=(6,))
        check(lambda t: layer_norm(t, Tensor(gain), Tensor(bias)), x, rtol=1e-5)

    def test_grad_gain_bias(self, rng):
        x = rng.normal(size=(3, 6))
        gain = rng.normal(size=(6,))
        bias = rng.normal(size=(6,))
        check(lambda t: layer_norm(Tensor(x), t, Tensor(bias)), gain, rtol=1e-5)
        check(lambda t: layer_norm(Tensor(x), Tensor(gain), t), bias, rtol=1e-5)

    def test_normalizes(self, rng):
        x = rng.normal(size=(4, 8)) * 5 + 3
        y = layer_norm(
            Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8))
        ).data
        np.testing.assert_allclose(y.mean(axis=-1), np.zeros(4), atol=1e-10)
        np.testing.assert_allclose(y.std(axis=-1), np.ones(4), atol=1e-4)


class TestEmbedding:
    def test_scatter_accumulates_repeats(self, rng):
        table = rng.normal(size=(5, 3))
        ids = np.array([[1, 1, 4]])
        t = Tensor(table, requires_grad=True)
        sum_all(embedding(t, ids)).backward()
        np.testing.assert_allclose(t.grad[1], np.full(3, 2.0))
        np.testing.assert_allclose(t.grad[4], np.full(3, 1.0))
        np.testing.assert_allclose(t.grad[0], np.zeros(3))

    def test_lookup_values(self, rng):
        table = rng.normal(size=(4, 2))
        ids = np.array([[3, 0]])
        out = embedding(Tensor(table), ids)
        np.testing.assert_allclose(out.data[0, 0], table[3])
        np.testing.assert_allclose(out.data[0, 1], table[0])


class TestGraphMechanics:
    def test_diamond_graph_accumulates(self, rng):
        # x feeds two branches that rejoin: grads must sum, and each node's
        # backward must run only after all its consumers
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        a = mul(x, x)
        b = add(a, x)
        c = add(a, b)  # c = 2x^2 + x
        sum_all(c).backward()
        np.testing.assert_allclose(x.grad, 4 * x.data + 1)

    def test_backward_requires_scalar(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        with pytest.raises(ValueError):
            mul(x, x).backward()

    def test_no_grad_leaf_stays_none(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        y = Tensor(rng.normal(size=(3,)))
        sum_all(mul(x, y)).backward()
        assert y.grad is None

    def test_operator_overloads(self, rng):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = Tensor(np.array([3.0]))
        z = sum_all(x * y + x)
        z.backward()
        np.testing.assert_allclose(x.grad, [4.0])
