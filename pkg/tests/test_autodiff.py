import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dsgrl import autodiff as ad
from dsgrl.autodiff import Tensor
from dsgrl.errors import DegenerateBatchError, DegenerateRowError, LifecycleError, ShapeError
from dsgrl.sparse import CSR

from . import gradcheck


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def small_matrix(max_side=6):
    shape = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shape.flatmap(
        lambda s: arrays(np.float64, s, elements=st.floats(-1, 1, allow_nan=False, width=64))
    )


class TestMatmul:
    def test_identity(self):
        out = ad.matmul(Tensor([[1, 2], [3, 4]]), Tensor(np.eye(2)))
        assert out.data.tolist() == [[1, 2], [3, 4]]

    def test_zero(self):
        out = ad.matmul(Tensor([[1, 0], [0, 0]]), Tensor([[0, 0], [0, 1]]))
        assert out.data.tolist() == [[0, 0], [0, 0]]

    def test_hand_arithmetic(self):
        assert ad.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).item() == 1 * 3 + 2 * 4

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_associativity(self, rng):
        for _ in range(20):
            a, b, c = (Tensor(rng.uniform(-1, 1, s)) for s in [(3, 4), (4, 5), (5, 2)])
            left = ad.matmul(ad.matmul(a, b), c).data
            right = ad.matmul(a, ad.matmul(b, c)).data
            assert np.max(np.abs(left - right)) < 1e-10

    def test_operator_sugar(self):
        a, b = Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])
        assert (a @ b).item() == 11.0
        assert (a + 1).data.tolist() == [[2.0, 3.0]]
        assert (a * 2).data.tolist() == [[2.0, 4.0]]
        assert (-a).data.tolist() == [[-1.0, -2.0]]
        assert a.T.shape == (2, 1)


class TestRelu:
    def test_sign_split(self):
        assert ad.relu(Tensor([[-1, 2]])).data.tolist() == [[0, 2]]

    def test_zero(self):
        assert ad.relu(Tensor([[0, 0]])).data.tolist() == [[0, 0]]

    def test_gradient_gate(self):
        x = leaf([[-1, 2]])
        with ad.recording():
            ad.backward(ad.sum(ad.relu(x)))
        assert x.grad.tolist() == [[0, 1]]
        numeric = gradcheck.numeric(lambda: ad.sum(ad.relu(x)), [x])[0]
        assert np.allclose(numeric, [[0, 1]])


class TestColumnVariance:
    def test_hand_value(self):
        assert ad.column_variance(Tensor([[0, 0], [2, 0]])).data.tolist() == [[2, 0]]

    def test_repeated_row(self):
        z = np.tile([[0.3, -1.2, 4.0]], (5, 1))
        assert np.all(ad.column_variance(Tensor(z)).data == 0)

    def test_standardized(self, rng):
        z = rng.standard_normal((10, 4))
        z = (z - z.mean(0)) / z.std(0, ddof=1)
        assert np.allclose(ad.column_variance(Tensor(z)).data, 1.0, atol=1e-12)

    def test_brute_force(self, rng):
        z = rng.standard_normal((7, 3))
        want = [sum((z[i, j] - z[:, j].mean()) ** 2 for i in range(7)) / 6 for j in range(3)]
        assert np.allclose(ad.column_variance(Tensor(z)).data[0], want, atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateBatchError):
            ad.column_variance(Tensor([[1.0, 2.0]]))

    @given(small_matrix(), arrays(np.float64, 6, elements=st.floats(-5, 5, allow_nan=False)))
    def test_shift_invariance(self, z, shift):
        if z.shape[0] < 2:
            return
        shifted = z + shift[: z.shape[1]]
        a = ad.column_variance(Tensor(z)).data
        b = ad.column_variance(Tensor(shifted)).data
        assert np.max(np.abs(a - b)) < 1e-10


class TestBackward:
    def test_sum_of_squares(self):
        x = leaf([[1, 2]])
        with ad.recording():
            ad.backward(ad.sum(ad.square(x)))
        assert x.grad.tolist() == [[2, 4]]

    def test_disconnected_leaf(self):
        x, y = leaf([[1, 2]]), leaf([[5.0]])
        with ad.recording():
            _ = ad.scale(y, 3.0)
            ad.backward(ad.sum(x))
        assert y.grad.tolist() == [[0.0]]

    def test_frobenius_gradient(self):
        x = leaf([[3, 4]])
        with ad.recording():
            ad.backward(ad.frobenius_norm(x))
        assert np.allclose(x.grad, [[0.6, 0.8]], atol=1e-15)
        numeric = gradcheck.numeric(lambda: ad.frobenius_norm(x), [x])[0]
        assert np.allclose(numeric, [[0.6, 0.8]], atol=1e-9)

    def test_non_scalar(self):
        x = leaf([[1, 2]])
        with ad.recording():
            with pytest.raises(ShapeError):
                ad.backward(ad.scale(x, 2.0))

    def test_consumed_tape(self):
        x = leaf([[1, 2]])
        with ad.recording():
            loss = ad.sum(x)
            ad.backward(loss)
            with pytest.raises(LifecycleError):
                ad.backward(loss)

    def test_untracked_loss(self):
        with pytest.raises(LifecycleError):
            ad.backward(ad.sum(Tensor([[1.0]])))

    def test_no_grad_records_nothing(self):
        x = leaf([[1.0]])
        with ad.no_grad():
            y = ad.scale(x, 2.0)
        assert y._node is None and not y.requires_grad

    def test_sum_of_losses_adds_gradients(self, rng):
        x = leaf(rng.uniform(-1, 1, (3, 3)))

        def f1():
            return ad.sum(ad.square(ad.matmul(x, x)))

        def f2():
            return ad.frobenius_norm(ad.relu(x))

        g1 = gradcheck.analytic(f1, [x])[0]
        g2 = gradcheck.analytic(f2, [x])[0]
        g12 = gradcheck.analytic(lambda: ad.add(f1(), f2()), [x])[0]
        assert np.allclose(g12, g1 + g2, atol=1e-12)

    def test_each_node_visited_once(self):
        x = leaf([[2.0]])
        with ad.recording() as tape:
            y = ad.add(x, x)
            loss = ad.sum(ad.hadamard(y, y))
            assert len(tape) == 3
            ad.backward(loss)
        assert x.grad.tolist() == [[16.0]]  # d/dx (2x)^2

    def test_tape_is_thread_local(self):
        seen = {}

        def worker():
            seen["tape"] = ad.active_tape()

        t = threading.Thread(target=worker)
        t.start()
        t.join()
        assert seen["tape"] is not ad.active_tape()


class TestDegenerateInputs:
    def test_zero_row_normalize(self):
        with pytest.raises(DegenerateRowError):
            ad.row_l2_normalize(Tensor([[0.0, 0.0], [1.0, 0.0]]))

    def test_zero_norm_gradient_is_zero(self):
        x = leaf([[0.0, 0.0]])
        with ad.recording():
            ad.backward(ad.frobenius_norm(x))
        assert x.grad.tolist() == [[0.0, 0.0]]

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            ad.add(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 2, 2)))


OPS = {
    "add": lambda a, b: ad.add(a, b),
    "sub": lambda a, b: ad.sub(a, b),
    "hadamard": lambda a, b: ad.hadamard(a, b),
    "scale": lambda a, b: ad.scale(a, -1.7),
    "add_scalar": lambda a, b: ad.add_scalar(a, 0.3),
    "transpose": lambda a, b: ad.transpose(a),
    "row_sum": lambda a, b: ad.row_sum(a),
    "mean_center": lambda a, b: ad.mean_center_columns(a),
    "row_l2_normalize": lambda a, b: ad.row_l2_normalize(a),
    "sqrt": lambda a, b: ad.sqrt(ad.add_scalar(ad.square(a), 0.5)),
    "square": lambda a, b: ad.square(a),
    "maximum": lambda a, b: ad.maximum(a, 0.1),
    "relu": lambda a, b: ad.relu(a),
    "frobenius": lambda a, b: ad.frobenius_norm(a),
    "column_variance": lambda a, b: ad.column_variance(a),
    "concat": lambda a, b: ad.concat_cols(a, b),
    "vstack": lambda a, b: ad.vstack(a, b),
    "gather": lambda a, b: ad.gather_rows(a, np.array([2, 0, 2])),
    "segment_sum": lambda a, b: ad.segment_sum(a, np.array([0, 1, 1, 0]), 2),
    "segment_mean": lambda a, b: ad.segment_mean(a, np.array([0, 1, 1, 1]), 2),
    "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    """Every differentiable op against central differences on random 4x3 inputs."""
    for _ in range(5):
        a = leaf(rng.uniform(-1, 1, (4, 3)))
        b = leaf(rng.uniform(-1, 1, (4, 3)))
        # a fixed random projection turns any output into a generic scalar
        probe = rng.standard_normal((8, 8))

        def fn():
            out = OPS[name](a, b)
            return ad.sum(ad.hadamard(out, probe[: out.rows, : out.cols]))

        gradcheck.check(fn, [a, b])


def test_sparse_op_gradients(backend, rng):
    n = 6
    dense = (rng.random((n, n)) < 0.4) * rng.uniform(-1, 1, (n, n))
    dense[np.arange(n), np.arange(n)] = 1.0
    pattern = CSR.from_dense(np.abs(dense) > 0)
    for _ in range(5):
        x = leaf(rng.uniform(-1, 1, (n, 3)))
        y = leaf(rng.uniform(-1, 1, (n, 3)))
        vals = leaf(rng.uniform(0.5, 1.5, (1, pattern.nnz)))
        probe = rng.standard_normal((n, 3))

        def via_values():
            adj = ad.SparseTensor(pattern, ad.sym_normalize(pattern, vals))
            return ad.sum(ad.hadamard(ad.spmm(adj, x), probe))

        def via_sddmm():
            s = ad.sddmm(pattern, x, y)
            adj = ad.SparseTensor(pattern, s)
            return ad.sum(ad.hadamard(ad.spmm(adj, y), probe))

        gradcheck.check(via_values, [vals, x])
        gradcheck.check(via_sddmm, [x, y])


def test_sym_normalize_matches_dense(backend, rng):
    n = 5
    w = rng.uniform(0.1, 2.0, (n, n))
    w = w + w.T
    pattern = CSR.from_dense(np.ones((n, n)))
    out = ad.sym_normalize(pattern, Tensor(w.ravel()[None, :]))
    d = np.abs(w).sum(1)
    want = w / np.sqrt(np.outer(d, d))
    assert np.allclose(out.data.reshape(n, n), want, atol=1e-14)


@given(small_matrix(), small_matrix())
def test_matmul_matches_numpy(a, b):
    b = np.resize(b, (a.shape[1], b.shape[1]))
    assert np.array_equal(ad.matmul(Tensor(a), Tensor(b)).data, a @ b)


@given(small_matrix())
def test_relu_idempotent(x):
    once = ad.relu(Tensor(x)).data
    assert np.array_equal(ad.relu(Tensor(once)).data, once)
    assert np.all(once >= 0)
