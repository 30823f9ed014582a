import numpy as np
import pytest

from oivae import diffcore as dc
from oivae.diffcore import DimensionError

from conftest import finite_difference_errors


class TestForward:
    def test_affine_identity(self):
        out = dc.affine(np.array([[3.0, 4.0]]), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(out.value, [[3.0, 4.0]])

    def test_affine_hand_sum(self):
        out = dc.affine(np.array([[2.0, 3.0]]), np.array([[1.0, 1.0]]), np.array([1.0]))
        np.testing.assert_array_equal(out.value, [[6.0]])

    def test_affine_shape_error_names_op_and_shapes(self):
        with pytest.raises(DimensionError, match=r"affine.*\(1, 3\).*\(2, 2\)"):
            dc.affine(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))

    def test_affine_bias_shape_error(self):
        with pytest.raises(DimensionError, match="bias"):
            dc.affine(np.ones((1, 2)), np.ones((2, 2)), np.zeros(3))

    def test_elementwise(self):
        assert dc.tanh_op(np.array(0.0)).value == 0.0
        np.testing.assert_array_equal(dc.relu_op(np.array([-1.0, 2.0])).value, [0.0, 2.0])
        assert dc.exp_op(np.array(0.0)).value == 1.0

    def test_broadcast_error(self):
        with pytest.raises(DimensionError, match="add"):
            dc.add(np.ones((2, 3)), np.ones((2, 2)))

    def test_concat_shapes(self):
        out = dc.concat([np.ones((4, 2)), np.zeros((4, 3))])
        assert out.shape == (4, 5)

    def test_forward_determinism(self, rng):
        x = rng.normal(size=(16, 5))
        w = rng.normal(size=(3, 5))
        b = rng.normal(size=3)
        a = dc.tanh_op(dc.affine(x, w, b)).value
        c = dc.tanh_op(dc.affine(x, w, b)).value
        assert a.tobytes() == c.tobytes()


class TestBackward:
    def test_sum_of_squares(self):
        w = dc.parameter([1.0, 2.0, 3.0])
        dc.backward(dc.sum_op(dc.mul(w, w)))
        np.testing.assert_array_equal(w.grad, [2.0, 4.0, 6.0])

    def test_tanh_at_zero(self):
        w = dc.parameter(0.0)
        dc.backward(dc.tanh_op(w))
        assert w.grad == 1.0

    def test_affine_bias_gradient_is_ones(self, rng):
        x = dc.parameter(rng.normal(size=(5, 3)))
        w = dc.parameter(rng.normal(size=(4, 3)))
        b = dc.parameter(np.zeros(4))
        dc.backward(dc.sum_op(dc.affine(x, w, b)))
        np.testing.assert_array_equal(b.grad, np.full(4, 5.0))

    def test_bias_grad_single_row_is_all_ones(self):
        b = dc.parameter(np.zeros(3))
        dc.backward(dc.sum_op(dc.affine(np.ones((1, 2)), np.ones((3, 2)), b)))
        np.testing.assert_array_equal(b.grad, np.ones(3))

    def test_non_scalar_root_rejected(self):
        w = dc.parameter([1.0, 2.0])
        with pytest.raises(ValueError, match="scalar"):
            dc.backward(dc.mul(w, w))

    def test_gradients_accumulate_until_zeroed(self):
        w = dc.parameter([1.0, -2.0])
        dc.backward(dc.sum_op(dc.square(w)))
        dc.backward(dc.sum_op(dc.square(w)))
        np.testing.assert_array_equal(w.grad, [4.0, -8.0])
        dc.zero_grad([w])
        dc.backward(dc.sum_op(dc.square(w)))
        np.testing.assert_array_equal(w.grad, [2.0, -4.0])

    def test_shared_subexpression(self):
        # f = sum(t * t) with t = w + w  ->  df/dw = 8 w
        w = dc.parameter([0.5, -1.5])
        t = dc.add(w, w)
        dc.backward(dc.sum_op(dc.mul(t, t)))
        np.testing.assert_allclose(w.grad, 8 * np.array([0.5, -1.5]))

    def test_constants_receive_no_gradient(self):
        c = dc.constant([1.0, 2.0])
        w = dc.parameter([3.0, 4.0])
        dc.backward(dc.sum_op(dc.mul(c, w)))
        assert c.grad is None
        np.testing.assert_array_equal(w.grad, [1.0, 2.0])

    def test_deep_chain_does_not_recurse(self):
        w = dc.parameter(1.0)
        h = w
        for _ in range(5000):
            h = dc.scale(h, 1.0)
        dc.backward(h)
        assert w.grad == 1.0


def _layer_losses():
    def affine_loss(p):
        x, w, b = p
        return dc.sum_op(dc.square(dc.affine(x, w, b)))

    def tanh_loss(p):
        x, w, b = p
        return dc.sum_op(dc.tanh_op(dc.affine(x, w, b)))

    def relu_loss(p):
        x, w, b = p
        return dc.sum_op(dc.square(dc.relu_op(dc.affine(x, w, b))))

    def exp_log_loss(p):
        x, w, b = p
        h = dc.exp_op(dc.scale(dc.affine(x, w, b), 0.3))
        return dc.sum_op(dc.log_op(dc.add(h, 1.0)))

    def arithmetic_loss(p):
        x, w, b = p
        h = dc.affine(x, w, b)
        y = dc.sub(dc.mul(h, b), dc.neg(h))
        return dc.sum_op(dc.sum_op(dc.concat([y, dc.square(h)]), axis=1))

    return {
        "affine": affine_loss,
        "tanh": tanh_loss,
        "relu": relu_loss,
        "exp-log": exp_log_loss,
        "arithmetic": arithmetic_loss,
    }


@pytest.mark.parametrize("name", sorted(_layer_losses()))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_layer_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    batch, n, m = rng.integers(1, 6), rng.integers(1, 5), rng.integers(1, 5)
    arrays = [rng.normal(size=(batch, n)), rng.normal(size=(m, n)), rng.normal(size=m)]
    errors = finite_difference_errors(_layer_losses()[name], arrays, 30, rng)
    assert errors.max() < 1e-4


def test_backward_cost_is_linear_in_nodes():
    import time

    def run(n):
        w = dc.parameter(np.ones(4))
        h = w
        for _ in range(n):
            h = dc.tanh_op(dc.add(h, 0.1))
        t = time.perf_counter()
        dc.backward(dc.sum_op(h))
        return time.perf_counter() - t

    run(200)
    small = min(run(2000) for _ in range(3))
    large = min(run(8000) for _ in range(3))
    assert large < 10 * small
