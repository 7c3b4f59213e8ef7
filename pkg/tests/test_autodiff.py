import zlib

import numpy as np
import pytest

from tepinn import autodiff as ad
from tepinn.autodiff import (
    Node,
    NonFiniteValueError,
    NonScalarLossError,
    ShapeMismatchError,
)


def fd_check(build, params, eps=1e-5):
    """Max relative error of analytic vs central-difference gradients."""
    return ad.grad_check(build, params, eps)


def rand_param(rng, shape, scale=1.0):
    return ad.parameter(scale * rng.standard_normal(shape))


class TestForwardSemantics:
    def test_softmax_uniform(self):
        out = ad.softmax(ad.constant([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.value, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-15)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        out = ad.softmax(ad.constant(rng.standard_normal((5, 7))))
        np.testing.assert_allclose(out.value.sum(axis=1), np.ones(5), atol=1e-12)

    def test_layer_norm_constant_row_is_zero(self):
        out = ad.layer_norm(ad.constant([[3.0, 3.0, 3.0, 3.0]]))
        np.testing.assert_allclose(out.value, np.zeros((1, 4)), atol=1e-6)

    def test_layer_norm_standardizes(self):
        rng = np.random.default_rng(1)
        out = ad.layer_norm(ad.constant(rng.standard_normal((4, 16))))
        np.testing.assert_allclose(out.value.mean(axis=1), np.zeros(4), atol=1e-12)
        np.testing.assert_allclose(out.value.std(axis=1), np.ones(4), atol=1e-6)

    def test_matmul_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((4, 5))
        b = rng.standard_normal((5, 3))
        expected = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                for k in range(5):
                    expected[i, j] += a[i, k] * b[k, j]
        out = ad.matmul(ad.constant(a), ad.constant(b))
        np.testing.assert_allclose(out.value, expected, atol=1e-12)

    def test_concat_narrow_round_trip(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((3, 2)), rng.standard_normal((3, 4))
        cat = ad.concat([ad.constant(a), ad.constant(b)], axis=1)
        np.testing.assert_array_equal(ad.narrow(cat, 1, 2, 6).value, b)

    def test_shape_mismatch_message_has_both_shapes(self):
        with pytest.raises(ShapeMismatchError, match=r"\(2, 3\).*\(3, 2\)"):
            ad.add(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros((3, 2))))

    def test_nan_guard_raises(self):
        with pytest.raises(NonFiniteValueError):
            ad.div(ad.constant([1.0]), ad.constant([0.0]))

    def test_nan_guard_can_be_disabled(self):
        ad.set_nan_guard(False)
        try:
            out = ad.div(ad.constant([1.0]), ad.constant([0.0]))
            assert np.isinf(out.value[0])
        finally:
            ad.set_nan_guard(True)


class TestBackward:
    def test_product_rule(self):
        x = ad.parameter([2.0])
        y = ad.parameter([3.0])
        ad.total(ad.mul(x, y)).backward()
        np.testing.assert_allclose(x.grad, [3.0], atol=0)
        np.testing.assert_allclose(y.grad, [2.0], atol=0)

    def test_softmax_row_sums_have_zero_gradient(self):
        x = ad.parameter(np.random.default_rng(4).standard_normal((3, 5)))
        ad.total(ad.softmax(x)).backward()
        np.testing.assert_allclose(x.grad, np.zeros((3, 5)), atol=1e-12)

    def test_fanout_accumulates(self):
        x = ad.parameter([1.5])
        y = ad.add(x, x)
        ad.total(y).backward()
        np.testing.assert_allclose(x.grad, [2.0], atol=0)

    def test_non_scalar_loss_rejected(self):
        x = ad.parameter(np.ones((2, 2)))
        with pytest.raises(NonScalarLossError):
            ad.mul(x, x).backward()

    def test_two_backward_passes_identical(self):
        rng = np.random.default_rng(5)
        x = ad.parameter(rng.standard_normal((3, 3)))
        loss = ad.mean(ad.exp(ad.mul(x, x)))
        loss.backward()
        first = x.grad.copy()
        loss.backward()
        np.testing.assert_array_equal(x.grad, first)

    def test_ops_do_not_mutate_parents(self):
        rng = np.random.default_rng(6)
        x = ad.parameter(rng.standard_normal((4, 4)))
        before = x.value.copy()
        h = ad.relu(ad.add(ad.softmax(x), ad.layer_norm(x)))
        ad.mean(ad.mul(h, ad.tanh(x))).backward()
        np.testing.assert_array_equal(x.value, before)


# every op gets a central-difference check on random small tensors
_OP_CASES = {
    "add": lambda a, b: ad.add(a, b),
    "sub": lambda a, b: ad.sub(a, b),
    "mul": lambda a, b: ad.mul(a, b),
    "div": lambda a, b: ad.div(a, b),
    "matmul": lambda a, b: ad.matmul(a, b),
}


@pytest.mark.parametrize("name", sorted(_OP_CASES))
def test_binary_op_gradient(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    a = rand_param(rng, (3, 4))
    b = rand_param(rng, (4, 5)) if name == "matmul" else rand_param(rng, (3, 4))
    if name == "div":
        b.value = b.value + 3.0 * np.sign(b.value)  # keep away from zero
    w = ad.constant(rng.standard_normal(_OP_CASES[name](a, b).value.shape))

    def build():
        return ad.total(ad.mul(_OP_CASES[name](a, b), w))

    assert fd_check(build, [a, b]) < 1e-4


_UNARY_CASES = {
    "relu": ad.relu,
    "tanh": ad.tanh,
    "exp": ad.exp,
    "sqrt": ad.sqrt,
    "softmax": ad.softmax,
    "layer_norm": ad.layer_norm,
    "transpose": ad.transpose,
    "mean": ad.mean,
    "total": ad.total,
    "mul_scalar": lambda a: ad.mul_scalar(a, -2.5),
    "div_scalar": lambda a: ad.div_scalar(a, 1.7),
    "add_scalar": lambda a: ad.add_scalar(a, 0.3),
    "narrow_rows": lambda a: ad.narrow(a, 0, 1, 3),
    "narrow_cols": lambda a: ad.narrow(a, 1, 0, 2),
}


@pytest.mark.parametrize("name", sorted(_UNARY_CASES))
def test_unary_op_gradient(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    a = rand_param(rng, (4, 5))
    if name == "sqrt":
        a.value = np.abs(a.value) + 0.5
    if name == "relu":
        a.value = a.value + 0.2 * np.sign(a.value)  # stay off the kink
    out_shape = _UNARY_CASES[name](a).value.shape
    w = ad.constant(rng.standard_normal(out_shape))

    def build():
        return ad.total(ad.mul(_UNARY_CASES[name](a), w))

    assert fd_check(build, [a]) < 1e-4


@pytest.mark.parametrize("name", ["broadcast_add", "broadcast_mul", "concat"])
def test_structural_op_gradient(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    a = rand_param(rng, (4, 5))
    b = rand_param(rng, (5,)) if name.startswith("broadcast") else rand_param(rng, (2, 5))

    def build():
        if name == "broadcast_add":
            out = ad.broadcast_add(a, b)
        elif name == "broadcast_mul":
            out = ad.broadcast_mul(a, b)
        else:
            out = ad.concat([a, b], axis=0)
        return ad.total(ad.mul(out, out))

    assert fd_check(build, [a, b]) < 1e-4


class TestGradCheck:
    def test_linear_function_is_exact(self):
        rng = np.random.default_rng(7)
        x = rand_param(rng, (3, 3))
        w = ad.constant(rng.standard_normal((3, 3)))
        # linear: central differences are exact for any step, so a large
        # step sidesteps subtractive cancellation entirely
        assert ad.grad_check(lambda: ad.total(ad.mul(x, w)), [x], eps=1e-2) < 1e-10

    def test_detects_wrong_gradient(self):
        x = ad.parameter([1.0, 2.0])
        # sabotage: a "square" with a broken backward rule
        def bad_square(a):
            def backward(g):
                a._accum(g)  # should be 2 a g

            return Node(a.value * a.value, (a,), backward)

        err = ad.grad_check(lambda: ad.total(bad_square(x)), [x])
        assert err > 0.1
