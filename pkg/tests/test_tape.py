import numpy as np
import pytest

from parsepool import tape
from parsepool.graphs import normalized_adjacency
from parsepool.tape import Value

from .conftest import random_graph


class TestScalarOps:
    def test_sigmoid_at_zero(self):
        x = Value(np.zeros((1, 1)))
        s = tape.sigmoid(x)
        assert s.data[0, 0] == 0.5
        tape.backward(s)
        assert x.grad[0, 0] == 0.25

    def test_mse_of_identical_inputs(self):
        x = Value(np.arange(6.0).reshape(2, 3))
        loss = tape.mse(x, np.arange(6.0).reshape(2, 3))
        assert loss.data == 0.0
        tape.backward(loss)
        assert np.all(x.grad == 0.0)

    def test_cross_entropy_of_uniform_logits(self):
        for k in (2, 3, 7):
            logits = Value(np.zeros((1, k)))
            loss = tape.softmax_cross_entropy(logits, np.array([k - 1]))
            assert np.isclose(float(loss.data), np.log(k))

    def test_relu_dead_region_gradient(self):
        x = Value(np.array([[-2.0, 3.0]]))
        out = tape.relu(x)
        tape.backward(tape.mse(out, np.zeros((1, 2))))
        assert x.grad[0, 0] == 0.0
        assert x.grad[0, 1] != 0.0


class TestMatrixOps:
    def test_matmul_gradients(self, rng):
        a = Value(rng.standard_normal((3, 4)))
        b = Value(rng.standard_normal((4, 2)))
        loss = tape.mse(tape.matmul(a, b), np.zeros((3, 2)))
        tape.backward(loss)
        expected_a = (2.0 / 6.0) * (a.data @ b.data) @ b.data.T
        assert np.allclose(a.grad, expected_a)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="matmul"):
            tape.matmul(Value(np.zeros((2, 3))), Value(np.zeros((2, 3))))
        with pytest.raises(ValueError, match="add"):
            tape.add(Value(np.zeros((2, 3))), Value(np.zeros((3, 2))))

    def test_scatter_with_identity_assignment_is_noop(self, rng):
        x = Value(rng.standard_normal((5, 3)))
        out = tape.scatter_add_rows(x, np.arange(5), 5)
        assert np.array_equal(out.data, x.data)

    def test_gather_scatter_adjointness(self, rng):
        # <scatter(x), y> == <x, gather(y)> for random vectors.
        for _ in range(20):
            n, p, d = 8, 3, 4
            idx = rng.integers(0, p, size=n)
            x = rng.standard_normal((n, d))
            y = rng.standard_normal((p, d))
            sx = tape.scatter_add_rows(Value(x), idx, p)
            gy = tape.gather_rows(Value(y), idx)
            assert np.isclose((sx.data * y).sum(), (x * gy.data).sum())

    def test_spmm_matches_dense(self, rng):
        g = random_graph(rng)
        norm = normalized_adjacency(g.adj)
        x = Value(rng.standard_normal((g.n, 3)))
        out = tape.spmm_symmetric(norm, x)
        dense = np.zeros((g.n, g.n))
        r, c, v = norm.to_coo()
        dense[r, c] = v
        assert np.allclose(out.data, dense @ x.data)

    def test_broadcast_col(self, rng):
        v = Value(rng.standard_normal((4, 1)))
        out = tape.broadcast_col(v, 3)
        assert out.data.shape == (4, 3)
        tape.backward(tape.mse(out, np.zeros((4, 3))))
        assert np.allclose(v.grad, (2.0 / 12.0) * 3 * v.data)

    def test_concat_cols_splits_gradient(self, rng):
        a = Value(rng.standard_normal((3, 2)))
        b = Value(rng.standard_normal((3, 4)))
        out = tape.concat_cols(a, b)
        assert out.data.shape == (3, 6)
        tape.backward(tape.mse(out, np.zeros((3, 6))))
        assert a.grad.shape == (3, 2) and b.grad.shape == (3, 4)


class TestBackward:
    def test_requires_scalar_root(self):
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(Value(np.zeros((2, 2))))

    def test_diamond_graph_accumulates_once_per_path(self):
        # loss = sum((x + x) * x) has derivative 4x per entry... checked vs FD.
        x = Value(np.array([[1.5]]))
        out = tape.elementwise_mul(tape.add(x, x), x)
        tape.backward(out)
        assert np.isclose(x.grad[0, 0], 4.0 * 1.5)

    def test_grad_accumulation_across_backward_calls(self):
        x = Value(np.array([[2.0]]))
        for _ in range(3):
            loss = tape.mse(x, np.zeros((1, 1)))
            tape.backward(loss)
        assert np.isclose(x.grad[0, 0], 3 * 2 * 2.0)
        tape.zero_grads([x])
        assert x.grad is None

    def test_deep_chain_does_not_recurse(self):
        x = Value(np.ones((1, 1)))
        y = x
        for _ in range(5000):
            y = tape.add_const(y, 0.0)
        tape.backward(y)
        assert x.grad[0, 0] == 1.0


class TestFiniteDifference:
    def test_square_function(self):
        x = Value(np.array([[3.0]]))

        def f():
            return tape.elementwise_mul(x, x)

        err, name = tape.finite_difference_check(f, {"x": x})
        assert err < 1e-8
        assert name == "x"
        # Analytic derivative of x^2 at 3.
        assert np.isclose(tape.autodiff_grads(f, {"x": x})["x"][0, 0], 6.0)

    def test_linear_regression_loss(self, rng):
        w = Value(rng.standard_normal((3, 2)))
        b = Value(np.zeros((1, 2)))
        data = rng.standard_normal((5, 3))
        target = rng.standard_normal((5, 2))

        def f():
            return tape.mse(tape.add_bias(tape.matmul(Value(data), w), b), target)

        err, _ = tape.finite_difference_check(f, {"w": w, "b": b})
        assert err < 1e-6

    def test_dead_relu_region(self):
        x = Value(np.array([[-5.0]]))

        def f():
            return tape.mse(tape.relu(x), np.zeros((1, 1)))

        err, _ = tape.finite_difference_check(f, {"x": x})
        assert err == 0.0

    def test_compare_grads_detects_corruption(self, rng):
        w = Value(rng.standard_normal((2, 2)))

        def f():
            return tape.mse(w, np.zeros((2, 2)))

        ad = tape.autodiff_grads(f, {"w": w})
        fd = tape.central_difference_grads(f, {"w": w})
        ad["w"] = ad["w"] + 1.0
        err, _ = tape.compare_grads(ad, fd)
        assert err > 1e-2

    def test_non_finite_reported(self):
        bad = {"w": np.array([[np.nan]])}
        good = {"w": np.array([[1.0]])}
        with pytest.raises(FloatingPointError, match="w"):
            tape.compare_grads(bad, good)


class TestDropout:
    def test_zero_ratio_identity(self, rng):
        x = Value(rng.standard_normal((4, 4)))
        assert tape.dropout(x, 0.0, rng) is x

    def test_scaling_preserves_expectation(self):
        rng = np.random.default_rng(0)
        x = Value(np.ones((2000, 1)))
        out = tape.dropout(x, 0.3, rng)
        assert abs(out.data.mean() - 1.0) < 0.05
