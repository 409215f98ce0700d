import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bnit import tensor
from bnit.tensor import ShapeError


def test_matmul_examples():
    np.testing.assert_array_equal(tensor.matmul(np.eye(2), np.array([[2.0], [3.0]])), [[2], [3]])
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(tensor.matmul(a, np.zeros((2, 1))), [[0], [0]])
    np.testing.assert_array_equal(tensor.matmul(a, np.array([[5.0], [6.0]])), [[17], [39]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        tensor.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_transpose():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(tensor.transpose(a), [[1, 3], [2, 4]])
    np.testing.assert_array_equal(tensor.transpose(tensor.transpose(a)), a)
    assert tensor.transpose(np.ones((1, 3))).shape == (3, 1)


def test_add_col_broadcast():
    a = np.array([[1.0, 1.0], [2.0, 2.0]])
    np.testing.assert_array_equal(tensor.add_col_broadcast(a, np.zeros((2, 1))), a)
    np.testing.assert_array_equal(tensor.add_col_broadcast(a, np.array([[10.0], [20.0]])), [[11, 11], [22, 22]])
    np.testing.assert_array_equal(tensor.add_col_broadcast(np.array([[1.5]]), np.array([[2.0]])), [[3.5]])
    with pytest.raises(ShapeError):
        tensor.add_col_broadcast(a, np.zeros((3, 1)))


def test_elementwise_helpers():
    a = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(tensor.hadamard(a, np.ones_like(a)), a)
    np.testing.assert_array_equal(tensor.rowsum(np.array([[1.0, 2.0, 3.0]])), [[6]])
    np.testing.assert_array_equal(tensor.scale(a, 0), np.zeros_like(a))
    np.testing.assert_array_equal(tensor.map(a, np.square), a ** 2)
    with pytest.raises(ShapeError):
        tensor.hadamard(a, np.ones((3, 2)))


def test_as_matrix_promotes_vectors():
    m = tensor.as_matrix([1, 2, 3])
    assert m.shape == (3, 1) and m.dtype == np.float64
    with pytest.raises(ShapeError):
        tensor.as_matrix(np.zeros((2, 2, 2)))


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.data())
def test_matmul_associative(m, k, l, n, data):
    a = data.draw(arrays(np.float64, (m, k), elements=finite))
    b = data.draw(arrays(np.float64, (k, l), elements=finite))
    c = data.draw(arrays(np.float64, (l, n), elements=finite))
    left = tensor.matmul(tensor.matmul(a, b), c)
    right = tensor.matmul(a, tensor.matmul(b, c))
    scale = tensor.matmul(tensor.matmul(np.abs(a), np.abs(b)), np.abs(c))
    assert np.all(np.abs(left - right) <= 1e-9 * np.maximum(scale, 1.0))


def test_bit_reproducible(rng):
    a, b = rng.standard_normal((64, 300)), rng.standard_normal((300, 50))
    assert tensor.matmul(a, b).tobytes() == tensor.matmul(a, b).tobytes()
    assert tensor.rowsum(a).tobytes() == tensor.rowsum(a).tobytes()
