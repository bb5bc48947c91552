import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdnet import numerics as nm


def rand(rng, *shape):
    return rng.normal(size=shape)


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    a = nm.constant([[1.0, 2.0], [3.0, 4.0]])
    out = nm.matmul(nm.constant(np.eye(2)), a)
    np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_hand():
    out = nm.matmul(nm.constant([[1.0, 1.0]]), nm.constant([[2.0], [3.0]]))
    np.testing.assert_array_equal(out.data, [[5.0]])


def test_matmul_annihilator():
    out = nm.matmul(nm.constant(np.zeros((2, 3))), nm.constant(np.ones((3, 4))))
    np.testing.assert_array_equal(out.data, np.zeros((2, 4)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(nm.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nm.matmul(nm.constant(np.ones((2, 3))), nm.constant(np.ones((2, 3))))


def test_matmul_adjoint_identity():
    # <A x, y> == <x, A^T y> exercised through the tape
    rng = np.random.default_rng(0)
    for _ in range(20):
        A = nm.parameter(rand(rng, 5, 3))
        x = nm.constant(rand(rng, 3, 1))
        y = rand(rng, 5, 1)
        with nm.GradientTape() as tape:
            tape.watch(A)
            loss = nm.sum_all(nm.mul(nm.matmul(A, x), nm.constant(y)))
        g = tape.backward(loss)[A]
        # d<Ax, y>/dA == y x^T
        np.testing.assert_allclose(g, y @ x.data.T, atol=1e-10)


# ---------------------------------------------------------------------------
# elementwise


def test_mul_hand():
    out = nm.mul(nm.constant([2.0, 3.0]), nm.constant([4.0, 5.0]))
    np.testing.assert_array_equal(out.data, [8.0, 15.0])


def test_mul_ones_identity():
    x = np.array([1.5, -2.0, 0.0])
    out = nm.mul(nm.constant(x), nm.constant(np.ones(3)))
    np.testing.assert_array_equal(out.data, x)


def test_add_zeros_identity():
    x = np.array([[1.0, -7.0]])
    out = nm.add(nm.constant(x), nm.constant(np.zeros((1, 2))))
    np.testing.assert_array_equal(out.data, x)


def test_elementwise_shape_mismatch():
    with pytest.raises(nm.DimensionError):
        nm.add(nm.constant(np.ones((2, 2))), nm.constant(np.ones((2, 3))))


def test_scalar_broadcast_is_allowed_and_correct():
    x = nm.parameter(np.array([[1.0, 2.0], [3.0, 4.0]]))
    with nm.GradientTape() as tape:
        tape.watch(x)
        loss = nm.sum_all(nm.mul(x, 3.0))
    g = tape.backward(loss)[x]
    np.testing.assert_array_equal(g, np.full((2, 2), 3.0))


# ---------------------------------------------------------------------------
# activations


def test_sigmoid_at_zero():
    assert nm.sigmoid(nm.constant(0.0)).item() == 0.5


def test_softmax_symmetry():
    out = nm.softmax(nm.constant([[0.0], [0.0]]), axis=0)
    np.testing.assert_allclose(out.data, [[0.5], [0.5]])


def test_elu_offset_at_zero():
    assert nm.elu_offset(nm.constant(0.0)).item() == pytest.approx(1.0 + 1e-15)


def test_elu_offset_strictly_positive_extreme():
    assert nm.elu_offset(nm.constant(-1e6)).item() > 0.0


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=30))
def test_elu_offset_positive_property(xs):
    out = nm.elu_offset(nm.constant(np.array(xs)))
    assert (out.data > 0).all()


@given(
    st.integers(2, 6),
    st.integers(1, 5),
    st.integers(0, 1),
    st.integers(0, 2**31 - 1),
)
@settings(max_examples=60)
def test_softmax_sums_to_one_property(n, m, axis, seed):
    x = np.random.default_rng(seed).normal(scale=10, size=(n, m))
    out = nm.softmax(nm.constant(x), axis=axis)
    np.testing.assert_allclose(np.sum(out.data, axis=axis), 1.0, atol=1e-9)


def test_softmax_invalid_axis():
    with pytest.raises(nm.DimensionError):
        nm.softmax(nm.constant(np.ones((2, 2))), axis=2)


# ---------------------------------------------------------------------------
# backward contract


def test_backward_polynomial():
    x = nm.parameter(3.0)
    with nm.GradientTape() as tape:
        tape.watch(x)
        loss = nm.mul(x, x)
    assert tape.backward(loss)[x] == pytest.approx(6.0)


def test_backward_sigmoid_derivative_at_zero():
    x = nm.parameter(0.0)
    with nm.GradientTape() as tape:
        tape.watch(x)
        loss = nm.sigmoid(x)
    assert tape.backward(loss)[x] == pytest.approx(0.25)


def test_backward_rejects_non_scalar_loss():
    x = nm.parameter(np.ones((2, 2)))
    with nm.GradientTape() as tape:
        tape.watch(x)
        y = nm.mul(x, 2.0)
    with pytest.raises(nm.ContractError):
        tape.backward(y)


def test_backward_rejects_second_call():
    x = nm.parameter(1.0)
    with nm.GradientTape() as tape:
        tape.watch(x)
        loss = nm.mul(x, x)
    tape.backward(loss)
    with pytest.raises(nm.ContractError):
        tape.backward(loss)


def test_unreachable_parameter_gets_zero_gradient():
    x = nm.parameter(np.ones((2, 1)))
    unused = nm.parameter(np.ones((3, 1)))
    with nm.GradientTape() as tape:
        tape.watch(x, unused)
        loss = nm.sum_all(x)
    grads = tape.backward(loss)
    np.testing.assert_array_equal(grads[unused], np.zeros((3, 1)))
    np.testing.assert_array_equal(grads[x], np.ones((2, 1)))


def test_gradient_shapes_match_parameters():
    rng = np.random.default_rng(1)
    W = nm.parameter(rand(rng, 4, 3))
    b = nm.parameter(rand(rng, 4, 1))
    x = nm.constant(rand(rng, 3, 7))
    with nm.GradientTape() as tape:
        tape.watch(W, b)
        loss = nm.mean_all(nm.tanh(nm.add(nm.matmul(W, x), nm.tile_cols(b, 7))))
    grads = tape.backward(loss)
    assert grads[W].shape == (4, 3)
    assert grads[b].shape == (4, 1)


# ---------------------------------------------------------------------------
# shape ops


def test_concat_slice_roundtrip_gradients():
    rng = np.random.default_rng(2)
    a = nm.parameter(rand(rng, 2, 3))
    b = nm.parameter(rand(rng, 4, 3))
    sel = nm.constant(rand(rng, 6, 3))
    with nm.GradientTape() as tape:
        tape.watch(a, b)
        cat = nm.concat_rows([a, b])
        loss = nm.sum_all(nm.mul(cat, sel))
    grads = tape.backward(loss)
    np.testing.assert_allclose(grads[a], sel.data[:2])
    np.testing.assert_allclose(grads[b], sel.data[2:])


def test_slice_cols_gradient_scatters():
    x = nm.parameter(np.arange(12.0).reshape(3, 4))
    with nm.GradientTape() as tape:
        tape.watch(x)
        loss = nm.sum_all(nm.slice_cols(x, 1, 3))
    g = tape.backward(loss)[x]
    expected = np.zeros((3, 4))
    expected[:, 1:3] = 1.0
    np.testing.assert_array_equal(g, expected)


def test_reshape_transpose_gradients():
    x = nm.parameter(np.arange(6.0).reshape(2, 3))
    sel = np.arange(6.0).reshape(3, 2)
    with nm.GradientTape() as tape:
        tape.watch(x)
        loss = nm.sum_all(nm.mul(nm.transpose(x), nm.constant(sel)))
    g = tape.backward(loss)[x]
    np.testing.assert_array_equal(g, sel.T)


# ---------------------------------------------------------------------------
# finite differences


def test_finite_diff_linear_is_exact():
    rng = np.random.default_rng(3)
    W = nm.parameter(rand(rng, 3, 4))
    x = nm.constant(rand(rng, 4, 2))

    def f():
        return nm.sum_all(nm.matmul(W, x))

    assert nm.finite_diff_check(f, {"W": W}) < 1e-8


def test_finite_diff_composite():
    rng = np.random.default_rng(4)
    W = nm.parameter(rand(rng, 4, 4) * 0.5)
    b = nm.parameter(rand(rng, 4, 1) * 0.5)
    x = nm.constant(rand(rng, 4, 3))

    def f():
        h = nm.sigmoid(nm.add(nm.matmul(W, x), nm.tile_cols(b, 3)))
        s = nm.softmax(h, axis=0)
        return nm.mean_all(nm.mul(s, s))

    assert nm.finite_diff_check(f, {"W": W, "b": b}) < 1e-6


def test_finite_diff_rejects_nondeterministic():
    rng = np.random.default_rng(5)
    W = nm.parameter(np.ones((1, 1)))

    def f():
        return nm.mul(nm.sum_all(W), float(rng.random()))

    with pytest.raises(nm.ContractError):
        nm.finite_diff_check(f, {"W": W})
