import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamformer.positional import recycling_embed, rope_rotate, rope_rotate_rows


class TestRope:
    def test_position_zero_is_identity(self):
        x = np.random.default_rng(0).standard_normal(8)
        np.testing.assert_array_equal(rope_rotate(x, 0), x)

    @pytest.mark.parametrize("p", [1, 3, 17, 250])
    def test_two_dims_is_plain_rotation(self, p):
        out = rope_rotate(np.array([1.0, 0.0]), p)
        np.testing.assert_allclose(out, [np.cos(p), np.sin(p)], rtol=1e-12)

    def test_norm_preserved(self):
        rng = np.random.default_rng(5)
        for p in (1, 40, 999):
            x = rng.standard_normal(16)
            assert abs(np.linalg.norm(rope_rotate(x, p)) - np.linalg.norm(x)) < 1e-6

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31), m=st.integers(0, 300),
           n=st.integers(0, 300), shift=st.integers(1, 500))
    def test_scores_depend_only_on_index_difference(self, seed, m, n, shift):
        rng = np.random.default_rng(seed)
        q = rng.standard_normal(8)
        k = rng.standard_normal(8)
        a = np.dot(rope_rotate(q, m), rope_rotate(k, n))
        b = np.dot(rope_rotate(q, m + shift), rope_rotate(k, n + shift))
        assert abs(a - b) < 1e-6

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            rope_rotate(np.zeros(3), 1)

    def test_row_form_matches_vector_form(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((5, 6))
        pos = np.array([0, 2, 4, 6, 8])
        rows = rope_rotate_rows(X, pos)
        for i in range(5):
            np.testing.assert_array_equal(rows[i], rope_rotate(X[i], pos[i]))


class TestRecycling:
    def test_zero_table_is_identity(self):
        token = np.arange(4.0)
        np.testing.assert_array_equal(recycling_embed(token, 3, np.zeros((8, 4))), token)

    def test_wraps_at_period(self):
        table = np.random.default_rng(1).standard_normal((8, 4))
        token = np.zeros(4)
        np.testing.assert_array_equal(recycling_embed(token, 8, table),
                                      recycling_embed(token, 0, table))

    def test_indexes_directly(self):
        table = np.random.default_rng(2).standard_normal((8, 4))
        token = np.ones(4)
        np.testing.assert_array_equal(recycling_embed(token, 3, table), token + table[3])

    @settings(max_examples=40, deadline=None)
    @given(step=st.integers(0, 10_000), period=st.integers(1, 16))
    def test_periodicity_exact(self, step, period):
        table = np.random.default_rng(period).standard_normal((period, 3))
        token = np.zeros(3)
        np.testing.assert_array_equal(
            recycling_embed(token, step, table),
            recycling_embed(token, step % period, table))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            recycling_embed(np.zeros(5), 0, np.zeros((4, 3)))
