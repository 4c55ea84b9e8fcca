import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msml.errors import ShapeMismatch, ZeroNormError
from msml.linalg import (
    add,
    gemm,
    l2_norm,
    l2_normalize,
    l2_normalize_backward,
    normalize_rows,
    normalize_rows_backward,
    scale,
)

from helpers import central_diff, naive_norm, rel_err

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_l2_norm_examples():
    assert l2_norm([3.0, 4.0]) == 5.0
    assert l2_norm([0.0, 0.0, 0.0]) == 0.0
    v = np.random.default_rng(0).normal(size=8)
    assert abs(l2_norm(v) - naive_norm(v)) < 1e-12


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(l2_normalize(u), u)
    with pytest.raises(ZeroNormError):
        l2_normalize([1e-20, 0.0])


def test_backward_examples():
    np.testing.assert_allclose(l2_normalize_backward([1.0, 0.0], [0.0, 1.0]), [0.0, 1.0])
    np.testing.assert_allclose(l2_normalize_backward([1.0, 0.0], [1.0, 0.0]), [0.0, 0.0])
    with pytest.raises(ZeroNormError):
        l2_normalize_backward([0.0, 0.0], [1.0, 0.0])


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(20):
        v = rng.normal(size=6)
        up = rng.normal(size=6)
        numeric = central_diff(lambda w: float(np.dot(l2_normalize(w), up)), v)
        assert rel_err(l2_normalize_backward(v, up), numeric) < 1e-6


def test_row_variants_match_vector_versions():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 3))
    up = rng.normal(size=(5, 3))
    np.testing.assert_allclose(normalize_rows(x), [l2_normalize(r) for r in x], atol=1e-15)
    np.testing.assert_allclose(
        normalize_rows_backward(x, up),
        [l2_normalize_backward(r, u) for r, u in zip(x, up)],
        atol=1e-14,
    )
    x[2] = 0.0
    with pytest.raises(ZeroNormError):
        normalize_rows(x)


def test_gemm_examples():
    m = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(gemm(np.eye(2), m), m)
    assert gemm([[2.0]], [[3.0]])[0, 0] == 6.0
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 5))
    naive = [[sum(a[i, t] * b[t, j] for t in range(3)) for j in range(5)] for i in range(4)]
    np.testing.assert_allclose(gemm(a, b), naive, atol=1e-12)
    with pytest.raises(ShapeMismatch):
        gemm(a, a)
    with pytest.raises(ShapeMismatch):
        add(a, b)


@settings(max_examples=150)
@given(arrays(np.float64, st.integers(1, 10), elements=finite))
def test_normalize_has_unit_norm(v):
    if l2_norm(v) <= 1e-12:
        with pytest.raises(ZeroNormError):
            l2_normalize(v)
        return
    assert abs(l2_norm(l2_normalize(v)) - 1.0) < 1e-12


@settings(max_examples=150)
@given(
    arrays(np.float64, 5, elements=finite),
    arrays(np.float64, 5, elements=finite),
)
def test_backward_is_orthogonal_to_output(v, up):
    n = l2_norm(v)
    if n <= 1e-6:
        return
    g = l2_normalize_backward(v, up)
    # orthogonality is exact up to rounding relative to |up| / |v|
    tol = 1e-10 * max(1.0, np.linalg.norm(up) / n)
    assert abs(np.dot(g, l2_normalize(v))) < tol


@settings(max_examples=100)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_gemm_identity_and_distributivity(r, c, k, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(r, c))
    b1, b2 = rng.normal(size=(c, k)), rng.normal(size=(c, k))
    np.testing.assert_allclose(gemm(np.eye(r), a), a, atol=1e-10)
    np.testing.assert_allclose(gemm(a, np.eye(c)), a, atol=1e-10)
    np.testing.assert_allclose(gemm(a, add(b1, b2)), add(gemm(a, b1), gemm(a, b2)), atol=1e-10)
    np.testing.assert_allclose(scale(a, 2.0), a + a)
