import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from svqvae.numeric import (
    NotPositiveDefiniteError, Rng, ShapeError, activate, affine, cholesky, covariance,
    finite_diff_grad, gaussian, matmul, mse,
)


def naive_matmul(a, b):
    out = [[0.0] * len(b[0]) for _ in a]
    for i in range(len(a)):
        for j in range(len(b[0])):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return np.array(out)


small = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)),
               elements=st.floats(-10, 10, allow_nan=False))


class TestMatmul:
    def test_identity_and_zero(self):
        a = np.array([[1.5, -2.0], [0.25, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), a), a)
        np.testing.assert_array_equal(matmul(np.zeros((2, 2)), a), np.zeros((2, 2)))

    def test_hand_case(self):
        a, b = [[1, 2], [3, 4]], [[5, 6], [7, 8]]
        np.testing.assert_array_equal(naive_matmul(a, b), [[19, 22], [43, 50]])
        np.testing.assert_array_equal(matmul(a, b), naive_matmul(a, b))

    def test_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match="2x3 by 2x2"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))

    @given(small, st.data())
    def test_identity_and_distributivity(self, a, data):
        n = a.shape[1]
        b = data.draw(arrays(np.float64, (n, 3), elements=st.floats(-10, 10)))
        c = data.draw(arrays(np.float64, (n, 3), elements=st.floats(-10, 10)))
        np.testing.assert_allclose(matmul(a, np.eye(n)), a, atol=1e-12)
        np.testing.assert_allclose(matmul(a, b + c), matmul(a, b) + matmul(a, c), atol=1e-12)
        np.testing.assert_allclose(matmul(a, b), naive_matmul(a.tolist(), b.tolist()), atol=1e-12)


class TestAffine:
    def test_zero_bias_is_matmul(self):
        x = np.arange(6.0).reshape(2, 3)
        w = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(affine(x, w, np.zeros(2)), matmul(x, w))

    def test_zero_input_replicates_bias(self):
        np.testing.assert_array_equal(affine(np.zeros((3, 2)), np.ones((2, 4)), np.arange(4.0)),
                                      np.tile(np.arange(4.0), (3, 1)))

    def test_random_against_oracle(self):
        rng = np.random.default_rng(3)
        x, w, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 2)), rng.normal(size=2)
        expected = naive_matmul(x.tolist(), w.tolist()) + b
        np.testing.assert_allclose(affine(x, w, b), expected, atol=1e-14)

    def test_bias_mismatch(self):
        with pytest.raises(ShapeError):
            affine(np.zeros((1, 2)), np.zeros((2, 3)), np.zeros(2))


class TestActivate:
    def test_trivial_values(self):
        assert activate("tanh", [0.0])[0] == 0.0
        assert activate("relu", [-1.0])[0] == 0.0
        assert activate("tanh", [0.0], "derivative")[0] == 1.0

    def test_tanh_one_matches_series(self):
        # tanh(1) = (e^2 - 1) / (e^2 + 1) with e^2 from its Taylor series
        e2 = sum(2.0**n / math.factorial(n) for n in range(40))
        assert abs(activate("tanh", [1.0])[0] - (e2 - 1) / (e2 + 1)) < 1e-12

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            activate("sigmoid", [0.0])

    @pytest.mark.parametrize("kind", ["tanh", "relu", "linear"])
    def test_derivative_matches_finite_differences(self, kind):
        x = np.random.default_rng(1).uniform(-3, 3, size=200)
        if kind == "relu":
            x = x[np.abs(x) > 1e-3]
        eps = 1e-6
        numeric = (activate(kind, x + eps) - activate(kind, x - eps)) / (2 * eps)
        np.testing.assert_allclose(activate(kind, x, "derivative"), numeric, atol=1e-6)


def test_mse():
    assert mse(np.ones((2, 2)), np.ones((2, 2))) == 0.0
    assert mse(np.zeros(4), np.ones(4)) == 1.0
    assert mse([0.0, 0.0], [1.0, 3.0]) == 5.0
    with pytest.raises(ShapeError):
        mse(np.zeros(2), np.zeros(3))


class TestRng:
    def test_same_seed_same_stream(self):
        a, b = Rng(42), Rng(42)
        np.testing.assert_array_equal(a.raw(10), b.raw(10))
        np.testing.assert_array_equal(a.normal((3, 3)), b.normal((3, 3)))

    def test_first_raw_words_are_pinned(self):
        # guards against silent changes of the underlying generator
        expected = np.random.PCG64(0).random_raw(3)
        np.testing.assert_array_equal(Rng(0).raw(3), expected)

    def test_uniform_range_and_moments(self):
        u = Rng(1).uniform(100_000)
        assert u.min() >= 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) < 3 * math.sqrt(1 / 12 / u.size)

    def test_normal_moments(self):
        z = Rng(2).normal(100_000)
        assert abs(z.mean()) < 3 / math.sqrt(z.size)
        assert abs(z.var() - 1.0) < 0.02

    def test_permutation_is_permutation(self):
        p = Rng(3).permutation(1000)
        np.testing.assert_array_equal(np.sort(p), np.arange(1000))

    def test_choice_respects_zero_weight(self):
        idx = Rng(4).choice(np.array([1.0, 0.0, 3.0]), 10_000)
        assert not np.any(idx == 1)
        assert abs(np.mean(idx == 2) - 0.75) < 0.02

    def test_seed_bounds(self):
        with pytest.raises(ValueError):
            Rng(-1)


class TestGaussian:
    def test_zero_stddev_returns_mean(self):
        mean = np.array([1.0, -2.0, 3.5])
        np.testing.assert_array_equal(gaussian(Rng(0), mean, np.zeros(3)), mean)

    def test_fixed_seed_bit_stable(self):
        mean, f = np.zeros(4), np.ones(4)
        np.testing.assert_array_equal(gaussian(Rng(9), mean, f, 5), gaussian(Rng(9), mean, f, 5))

    def test_monte_carlo_mean(self):
        mean = np.array([1.0, -1.0])
        factor = cholesky(np.array([[2.0, 0.5], [0.5, 1.0]]))
        draws = gaussian(Rng(5), mean, factor, 100_000)
        sd = np.sqrt(np.diag(factor @ factor.T))
        assert np.all(np.abs(draws.mean(axis=0) - mean) <= 3 * sd / math.sqrt(draws.shape[0]))
        np.testing.assert_allclose(np.cov(draws.T), factor @ factor.T, atol=0.03)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            gaussian(Rng(0), np.zeros(3), np.ones(2))


class TestCovariance:
    def test_identical_rows(self):
        np.testing.assert_array_equal(covariance(np.ones((4, 3)), "full"), np.zeros((3, 3)))

    def test_two_points(self):
        assert covariance(np.array([[0.0], [2.0]]))[0] == 2.0

    def test_single_sample_is_zero(self):
        np.testing.assert_array_equal(covariance(np.array([[1.0, 2.0]])), np.zeros(2))

    def test_full_diagonal_matches_diagonal_mode(self):
        x = np.random.default_rng(0).normal(size=(20, 4))
        np.testing.assert_allclose(np.diag(covariance(x, "full")), covariance(x, "diagonal"), rtol=1e-14)
        np.testing.assert_allclose(covariance(x, "full"), np.cov(x.T), rtol=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            covariance(np.zeros((0, 2)))


class TestCholesky:
    def test_analytic_cases(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))
        np.testing.assert_array_equal(cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefiniteError, match="jitter"):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))

    @settings(max_examples=50)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_reconstructs_random_spd(self, d, seed):
        a = np.random.default_rng(seed).normal(size=(d, d))
        s = a.T @ a + np.eye(d)
        low = cholesky(s)
        assert np.max(np.abs(low @ low.T - s)) <= 1e-9
        np.testing.assert_array_equal(low, np.tril(low))


class TestFiniteDiff:
    def test_constant(self):
        np.testing.assert_array_equal(finite_diff_grad(lambda p: 3.0, np.ones(4), 1e-3), np.zeros(4))

    def test_squared_norm(self):
        p = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(finite_diff_grad(lambda v: float(v @ v), p, 1e-4), 2 * p, atol=1e-8)

    def test_eps_positive(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda p: 0.0, np.ones(1), 0.0)
