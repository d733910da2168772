"""Autodiff primitives: forward values, gradients vs finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vground.errors import NumericsError
from vground.numerics import tensor as T
from vground.numerics.tensor import Tensor


@pytest.fixture(autouse=True)
def float64_mode():
    # gradient comparisons need 64-bit headroom
    with T.using_dtype(np.float64):
        yield


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar f at array x, element by element."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


def check_grad(build_loss, *leaves, tol=1e-7):
    for leaf in leaves:
        leaf.grad = None
    loss = build_loss()
    loss.backward()
    for leaf in leaves:
        got = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        want = numeric_grad(lambda: build_loss().item(), leaf.data)
        np.testing.assert_allclose(got, want, atol=tol, rtol=tol)


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestPrimitives:
    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(0)
        a, b = leaf(rng, 3, 4), leaf(rng, 4)
        check_grad(lambda: T.tsum((a + b) * b), a, b)

    def test_sub_div(self):
        rng = np.random.default_rng(1)
        a, b = leaf(rng, 2, 3), Tensor(rng.standard_normal((2, 3)) + 3.0, requires_grad=True)
        check_grad(lambda: T.tsum(a / b - b), a, b)

    def test_matmul(self):
        rng = np.random.default_rng(2)
        a, b = leaf(rng, 3, 5), leaf(rng, 5, 2)
        check_grad(lambda: T.tsum(a @ b), a, b)

    def test_linear_loss_outer_product_structure(self):
        # L = sum(M @ x): dL/dM[i,j] = x[j] for every row i
        rng = np.random.default_rng(3)
        m = leaf(rng, 4, 3)
        x = Tensor(rng.standard_normal((3, 1)))
        loss = T.tsum(m @ x)
        loss.backward()
        np.testing.assert_allclose(m.grad, np.tile(x.data.T, (4, 1)), rtol=1e-12)

    def test_activations(self):
        rng = np.random.default_rng(4)
        a = leaf(rng, 6)
        check_grad(lambda: T.tsum(T.sigmoid(a) * T.tanh(a)), a)

    def test_sqrt_abs(self):
        rng = np.random.default_rng(5)
        a = Tensor(np.abs(rng.standard_normal(5)) + 0.5, requires_grad=True)
        b = Tensor(rng.standard_normal(5) + 0.1, requires_grad=True)
        check_grad(lambda: T.tsum(T.sqrt(a) + T.absolute(b)), a, b)

    def test_mean_axes(self):
        rng = np.random.default_rng(6)
        a = leaf(rng, 4, 3)
        check_grad(lambda: T.tsum(T.tmean(a, axis=0) * T.tmean(a, axis=0)), a)

    def test_take_rows_scatter(self):
        rng = np.random.default_rng(7)
        table = leaf(rng, 5, 3)
        ids = np.array([1, 1, 4])
        check_grad(lambda: T.tsum(T.take_rows(table, ids) * 2.0), table)
        # repeated id accumulates
        loss = T.tsum(T.take_rows(table, ids))
        table.grad = None
        loss.backward()
        assert table.grad[1].sum() == pytest.approx(6.0)
        assert table.grad[0].sum() == 0.0

    def test_take_rows_out_of_range(self):
        table = Tensor(np.zeros((2, 2)))
        with pytest.raises(IndexError):
            T.take_rows(table, np.array([2]))

    def test_transpose_is_view(self):
        a = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3), requires_grad=True)
        at = a.T
        assert np.shares_memory(at.data, a.data)  # shared storage, not a copy
        a.data[0, 0] = 99.0
        assert at.data[0, 0] == 99.0
        check_grad(lambda: T.tsum(a.T @ a), a)

    def test_constant_path_zero_gradient(self):
        rng = np.random.default_rng(8)
        a = leaf(rng, 3)
        c = Tensor(rng.standard_normal(3))
        loss = T.tsum(c * c) + T.tsum(a)
        loss.backward()
        np.testing.assert_array_equal(a.grad, np.ones(3))
        assert c.grad is None

    def test_shared_node_accumulates(self):
        a = Tensor(np.array([2.0]), requires_grad=True)
        loss = T.tsum(a * a + a)
        loss.backward()
        assert a.grad[0] == pytest.approx(5.0)


class TestUsage:
    def test_backward_requires_scalar(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(NumericsError):
            (a * 2.0).backward()

    def test_backward_without_graph(self):
        with pytest.raises(NumericsError):
            Tensor(np.ones(1)).backward()

    def test_nonfinite_input_rejected(self):
        with pytest.raises(NumericsError):
            Tensor(np.array([np.nan]))

    def test_nonfinite_op_result_rejected(self):
        a = Tensor(np.array([0.0]))
        b = Tensor(np.array([0.0]))
        with pytest.raises(NumericsError):
            a / b


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_ln_v(self):
        logits = Tensor(np.zeros((3, 4)), requires_grad=True)
        loss = T.softmax_cross_entropy(logits, np.array([0, 1, 3]))
        assert loss.item() == pytest.approx(np.log(4.0), rel=1e-9)

    def test_saturated_target(self):
        z = np.zeros((1, 5))
        z[0, 2] = 100.0
        loss = T.softmax_cross_entropy(Tensor(z, requires_grad=True), np.array([2]))
        assert loss.item() < 1e-6

    def test_rows_sum_to_one_and_shift_invariance(self):
        rng = np.random.default_rng(9)
        z = rng.standard_normal((4, 7))
        p = T.softmax(z)
        np.testing.assert_allclose(p.sum(axis=1), np.ones(4), atol=1e-6)
        np.testing.assert_allclose(T.softmax(z + 13.7), p, atol=1e-9)

    def test_all_masked_errors(self):
        with pytest.raises(NumericsError):
            T.softmax_cross_entropy(Tensor(np.zeros((2, 3)), requires_grad=True),
                                    np.array([0, 1]), mask=np.zeros(2))

    def test_masked_mean_matches_manual(self):
        rng = np.random.default_rng(10)
        z = rng.standard_normal((4, 6))
        ids = np.array([0, 5, 2, 3])
        mask = np.array([1.0, 0.0, 1.0, 1.0])
        loss = T.softmax_cross_entropy(Tensor(z), ids, mask)
        p = T.softmax(z)
        manual = -np.log(p[np.arange(4), ids])
        assert loss.item() == pytest.approx((manual * mask).sum() / 3.0, rel=1e-9)

    def test_gradient(self):
        rng = np.random.default_rng(11)
        z = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
        ids = np.array([1, 0, 4])
        mask = np.array([1.0, 1.0, 0.0])
        check_grad(lambda: T.softmax_cross_entropy(z, ids, mask), z)


class TestSigmoidBce:
    def test_zero_logit_ln2(self):
        loss = T.sigmoid_bce(Tensor(np.zeros(4), requires_grad=True),
                             np.array([0.0, 1.0, 0.0, 1.0]))
        assert loss.item() == pytest.approx(np.log(2.0), rel=1e-12)

    def test_confident_correct(self):
        loss = T.sigmoid_bce(Tensor(np.array([100.0])), np.array([1.0]))
        assert loss.item() < 1e-6

    def test_confident_wrong_is_linear(self):
        # -log(1 - sigmoid(x)) ~ x for large x
        loss = T.sigmoid_bce(Tensor(np.array([100.0])), np.array([0.0]))
        assert loss.item() == pytest.approx(100.0, abs=1e-6)

    def test_gradient(self):
        rng = np.random.default_rng(12)
        z = Tensor(rng.standard_normal(6), requires_grad=True)
        y = np.array([1.0, 0, 1, 0, 0, 1])
        check_grad(lambda: T.sigmoid_bce(z, y), z)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.floats(-50, 50))
def test_softmax_shift_invariance_property(row, shift):
    with T.using_dtype(np.float64):
        z = np.array([row])
        np.testing.assert_allclose(T.softmax(z + shift), T.softmax(z), atol=1e-9)
        assert T.softmax(z).sum() == pytest.approx(1.0, abs=1e-9)
