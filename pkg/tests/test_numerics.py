import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamformer.numerics import (Activation, matmul, pairwise_sq_euclid,
                                   row_softmax, soft_activation)


def naive_matmul(a, b):
    """Triple-loop reference, independent of the library product."""
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols), dtype=np.float64)
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for c in range(inner):
                acc += float(a[i, c]) * float(b[c, j])
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), m), m)

    def test_orthogonal_vectors(self):
        out = matmul(np.array([[1.0, 0.0]]), np.array([[0.0], [1.0]]))
        np.testing.assert_array_equal(out, [[0.0]])

    @pytest.mark.parametrize("shape", [(3, 4, 2), (5, 3, 7), (1, 6, 1)])
    def test_against_naive_loop(self, shape):
        rows, inner, cols = shape
        rng = np.random.default_rng(42)
        a = rng.standard_normal((rows, inner))
        b = rng.standard_normal((inner, cols))
        np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b),
                                   rtol=1e-13, atol=1e-13)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_bit_identical_across_invocations(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((17, 23))
        b = rng.standard_normal((23, 11))
        first = matmul(a, b)
        second = matmul(a.copy(), b.copy())
        assert first.tobytes() == second.tobytes()

    def test_nonfinite_result_raises(self):
        big = np.full((2, 2), 1e300)
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            matmul(big, big)


class TestRowSoftmax:
    def test_symmetric_row(self):
        np.testing.assert_allclose(row_softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]])

    def test_single_column_forces_one(self):
        np.testing.assert_array_equal(row_softmax(np.array([[123.4]])), [[1.0]])

    def test_large_values_stable(self):
        out = row_softmax(np.array([[1000.0, 1000.0, 999.0]]))
        # direct shifted evaluation is the reference
        e = [math.exp(0.0), math.exp(0.0), math.exp(-1.0)]
        ref = np.array([e]) / sum(e)
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, ref, rtol=1e-15)

    def test_nonfinite_input(self):
        with pytest.raises(FloatingPointError):
            row_softmax(np.array([[np.inf, 0.0]]))

    @settings(max_examples=50, deadline=None)
    @given(rows=st.integers(1, 6), cols=st.integers(1, 8), seed=st.integers(0, 2**31))
    def test_rows_sum_to_one(self, rows, cols, seed):
        scores = np.random.default_rng(seed).normal(0, 10, size=(rows, cols))
        sums = row_softmax(scores).sum(axis=1)
        np.testing.assert_allclose(sums, np.ones(rows), atol=1e-6)


class TestPairwiseSqEuclid:
    def test_self_distance_zero(self):
        np.testing.assert_array_equal(pairwise_sq_euclid([[1.0, 2.0]], [[1.0, 2.0]]), [[0.0]])

    def test_unit_vectors(self):
        np.testing.assert_allclose(
            pairwise_sq_euclid([[1.0, 0.0]], [[0.0, 1.0]]), [[2.0]])

    def test_diagonal_of_self_is_zero(self):
        x = np.random.default_rng(0).standard_normal((6, 3))
        np.testing.assert_array_equal(np.diag(pairwise_sq_euclid(x, x)), np.zeros(6))

    def test_expansion_oracle(self):
        rng = np.random.default_rng(9)
        q = rng.standard_normal((4, 3))
        k = rng.standard_normal((5, 3))
        # independent route: ||q||^2 + ||k||^2 - 2 q.k
        ref = ((q ** 2).sum(1)[:, None] + (k ** 2).sum(1)[None, :] - 2 * q @ k.T)
        np.testing.assert_allclose(pairwise_sq_euclid(q, k), ref, atol=1e-6)
        assert np.all(pairwise_sq_euclid(q, k) >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            pairwise_sq_euclid(np.zeros((2, 3)), np.zeros((2, 4)))


class TestSoftActivation:
    def test_identical_rows_give_one(self):
        x = np.random.default_rng(1).standard_normal((4, 8))
        np.testing.assert_allclose(np.diag(soft_activation(x, x, 8)), np.ones(4))

    def test_direct_value(self):
        out = soft_activation([[1.0, 0, 0, 0]], [[0.0, 1, 0, 0]], 4)
        # distance 2, scale 2*sqrt(4)=4 -> exp(-0.5)
        np.testing.assert_allclose(out, [[math.exp(-0.5)]], rtol=1e-12)
        assert abs(out[0, 0] - 0.60653) < 1e-5

    def test_entries_in_unit_interval(self):
        rng = np.random.default_rng(2)
        w = soft_activation(rng.standard_normal((5, 4)), rng.standard_normal((7, 4)), 4)
        assert np.all(w > 0) and np.all(w <= 1)

    def test_zero_head_dim(self):
        with pytest.raises(ValueError):
            soft_activation(np.zeros((1, 0)), np.zeros((1, 0)), 0)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), split=st.integers(1, 5))
    def test_weighted_sum_splits_over_key_partition(self, seed, split):
        rng = np.random.default_rng(seed)
        q = rng.standard_normal((3, 4))
        k = rng.standard_normal((6, 4))
        v = rng.standard_normal((6, 4))
        whole = soft_activation(q, k, 4) @ v
        parts = (soft_activation(q, k[:split], 4) @ v[:split]
                 + soft_activation(q, k[split:], 4) @ v[split:])
        np.testing.assert_allclose(whole, parts, atol=1e-6)

    def test_softmax_does_not_split(self):
        # negative control: the same partition test must fail for softmax
        rng = np.random.default_rng(3)
        q = rng.standard_normal((3, 4))
        k = rng.standard_normal((6, 4))
        v = rng.standard_normal((6, 4))

        def softmax_attend(kk, vv):
            return row_softmax((q @ kk.T) / 2.0) @ vv

        whole = softmax_attend(k, v)
        parts = softmax_attend(k[:3], v[:3]) + softmax_attend(k[3:], v[3:])
        assert np.max(np.abs(whole - parts)) > 1e-3


def test_activation_enum_round_trips_strings():
    assert Activation("softmax") is Activation.SOFTMAX
    assert Activation("soft") is Activation.SOFT
