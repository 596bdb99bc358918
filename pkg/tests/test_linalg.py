"""Tests for the small symmetric solver layer."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topodesc import linalg
from topodesc.errors import InvalidInputError, SingularSystemError


def gram_bruteforce(diffs):
    """Double-loop dot products, the obvious quadratic-time reference."""
    k = diffs.shape[0]
    s = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            s[i, j] = float(np.dot(diffs[i], diffs[j]))
    return s


class TestGram:
    def test_matches_bruteforce(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            k = int(rng.integers(1, 9))
            d = int(rng.integers(1, 17))
            diffs = rng.standard_normal((k, d))
            np.testing.assert_allclose(
                linalg.gram(diffs), gram_bruteforce(diffs), rtol=1e-12, atol=1e-12
            )

    def test_bitwise_symmetric(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            s = linalg.gram(rng.standard_normal((6, 3)))
            assert np.array_equal(s, s.T)

    def test_rejects_non_finite(self):
        diffs = np.ones((3, 2))
        diffs[1, 0] = np.nan
        with pytest.raises(InvalidInputError):
            linalg.gram(diffs)

    def test_rejects_wrong_rank(self):
        with pytest.raises(InvalidInputError):
            linalg.gram(np.ones(4))


class TestRegularizedSystem:
    def test_trace_relative_term(self):
        s = np.array([[2.0, 0.0], [0.0, 6.0]])
        out = linalg.regularized_system(s, 0.5)
        # trace 8, k 2 -> adds 0.5 * 4 = 2 on the diagonal
        np.testing.assert_allclose(out, np.array([[4.0, 0.0], [0.0, 8.0]]))

    def test_zero_trace_falls_back_to_plain_eps(self):
        s = np.zeros((3, 3))
        out = linalg.regularized_system(s, 1e-3)
        np.testing.assert_allclose(out, 1e-3 * np.eye(3))

    def test_eps_zero_is_identity_transform(self):
        s = np.array([[1.0, 0.5], [0.5, 2.0]])
        assert np.array_equal(linalg.regularized_system(s, 0.0), s)


class TestSolve:
    def test_matches_dense_inverse_for_small_systems(self):
        """Well-conditioned eps=0 solves agree with explicit inversion."""
        rng = np.random.default_rng(21)
        for k in [1, 2, 3, 5, 8, 13, 21, 32]:
            a = rng.standard_normal((k, k + 4))
            s = a @ a.T + np.eye(k)
            rhs = rng.standard_normal(k)
            got = linalg.solve_spd_regularized(s, rhs, eps=0.0)
            want = np.linalg.inv(s) @ rhs
            np.testing.assert_allclose(got.solution, want, rtol=1e-10)
            assert not got.conditioning_applied
            assert got.regularizer_eps == 0.0

    def test_explicit_two_by_two(self):
        s = np.array([[2.0, 1.0], [1.0, 2.0]])
        rhs = np.ones(2)
        got = linalg.solve_spd_regularized(s, rhs, eps=0.0)
        # inverse of [[2,1],[1,2]] is [[2,-1],[-1,2]]/3; times ones -> 1/3, 1/3
        np.testing.assert_allclose(got.solution, np.array([1 / 3, 1 / 3]), rtol=1e-14)

    def test_eps_zero_retries_with_default(self):
        # rank-1 matrix: plain Cholesky fails, the conditioned retry succeeds
        v = np.array([1.0, 2.0, 3.0])
        s = np.outer(v, v)
        got = linalg.solve_spd_regularized(s, np.ones(3), eps=0.0)
        assert got.conditioning_applied
        assert got.regularizer_eps == linalg.DEFAULT_EPS
        m = linalg.regularized_system(s, linalg.DEFAULT_EPS)
        np.testing.assert_allclose(m @ got.solution, np.ones(3), rtol=1e-8)

    def test_positive_eps_marks_conditioning(self):
        s = np.eye(2) * 4.0
        got = linalg.solve_spd_regularized(s, np.ones(2), eps=0.5)
        assert got.conditioning_applied
        # regularized matrix is 4 + 0.5*4 = 6 on the diagonal
        np.testing.assert_allclose(got.solution, np.full(2, 1 / 6), rtol=1e-14)

    def test_hopeless_matrix_raises(self):
        with pytest.raises(SingularSystemError):
            linalg.solve_spd_regularized(-np.eye(3), np.ones(3), eps=1e-3)

    def test_shape_validation(self):
        with pytest.raises(InvalidInputError):
            linalg.solve_spd_regularized(np.ones((2, 3)), np.ones(2), eps=0.0)
        with pytest.raises(InvalidInputError):
            linalg.solve_spd_regularized(np.eye(2), np.ones(3), eps=0.0)
        with pytest.raises(InvalidInputError):
            linalg.solve_spd_regularized(np.eye(2), np.ones(2), eps=-1.0)

    def test_rejects_non_finite(self):
        s = np.eye(2)
        s[0, 0] = np.inf
        with pytest.raises(InvalidInputError):
            linalg.solve_spd_regularized(s, np.ones(2), eps=0.0)

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 16))
    def test_residual_property(self, seed, k):
        """The returned solution solves the (possibly regularized) system."""
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((k, k + 2))
        s = a @ a.T + 0.1 * np.eye(k)
        rhs = rng.standard_normal(k)
        got = linalg.solve_spd_regularized(s, rhs, eps=1e-3)
        m = linalg.regularized_system(s, 1e-3)
        np.testing.assert_allclose(m @ got.solution, rhs, rtol=1e-7, atol=1e-9)


class TestL2Norm:
    def test_against_fsum(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            v = rng.standard_normal(int(rng.integers(1, 50)))
            want = math.sqrt(math.fsum(float(x) * float(x) for x in v))
            assert abs(linalg.l2_norm(v) - want) <= 1e-12 * max(1.0, want)

    def test_zero_vector(self):
        assert linalg.l2_norm(np.zeros(5)) == 0.0
