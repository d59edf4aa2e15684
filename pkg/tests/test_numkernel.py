import numpy as np
import pytest

from mmhash.errors import DimensionMismatch, InvalidValue
from mmhash.numkernel import as_matrix, as_vector, matvec, svd_small


class TestMatvec:
    def test_identity(self):
        assert np.array_equal(matvec(np.eye(3), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])

    def test_zero_matrix_annihilates(self):
        assert np.array_equal(matvec(np.zeros((2, 3)), [4.0, -1.0, 7.0]), [0.0, 0.0])

    def test_hand_multiplication(self):
        # [[1,2],[3,4]] @ (1,1) worked out by hand: (1+2, 3+4)
        assert np.array_equal(matvec([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0]), [3.0, 7.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            matvec(np.eye(3), [1.0, 2.0])

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidValue):
            matvec([[np.nan, 0.0]], [1.0, 1.0])
        with pytest.raises(InvalidValue):
            matvec(np.eye(2), [np.inf, 0.0])

    @pytest.mark.parametrize("trial", range(20))
    def test_linearity(self, trial):
        rng = np.random.default_rng(trial)
        m = rng.standard_normal((5, 7))
        u = rng.standard_normal(7)
        v = rng.standard_normal(7)
        a, b = rng.standard_normal(2)
        lhs = matvec(m, a * u + b * v)
        rhs = a * matvec(m, u) + b * matvec(m, v)
        scale = max(1.0, float(np.abs(lhs).max()))
        assert np.abs(lhs - rhs).max() / scale < 1e-12


class TestValidation:
    def test_as_matrix_shape(self):
        with pytest.raises(DimensionMismatch):
            as_matrix([1.0, 2.0])

    def test_as_vector_shape(self):
        with pytest.raises(DimensionMismatch):
            as_vector([[1.0]])


class TestSvdSmall:
    def test_diagonal(self):
        u, s, v = svd_small(np.diag([3.0, 1.0]))
        assert np.allclose(s, [3.0, 1.0])
        assert np.allclose(np.abs(u), np.eye(2), atol=1e-12)
        assert np.allclose(np.abs(v), np.eye(2), atol=1e-12)

    def test_rank_one(self):
        m = np.outer([1.0, 0.0], [1.0, 0.0])
        u, s, v = svd_small(m)
        assert np.allclose(s, [1.0, 0.0], atol=1e-12)
        assert np.allclose(np.abs(u[:, 0]), [1.0, 0.0], atol=1e-12)
        assert np.allclose(np.abs(v[:, 0]), [1.0, 0.0], atol=1e-12)

    def test_reconstruction_random_4x3(self):
        m = np.random.default_rng(7).standard_normal((4, 3))
        u, s, v = svd_small(m)
        err = np.linalg.norm(m - u @ np.diag(s) @ v.T)
        assert err < 1e-9

    @pytest.mark.parametrize("shape", [(1, 1), (2, 5), (5, 2), (6, 6), (17, 3), (3, 17)])
    def test_matches_numpy_singular_values(self, shape):
        m = np.random.default_rng(hash(shape) % 2**32).standard_normal(shape)
        _, s, _ = svd_small(m)
        expected = np.linalg.svd(m, compute_uv=False)
        assert np.allclose(s, expected, atol=1e-10)

    @pytest.mark.parametrize("trial", range(10))
    def test_orthonormal_and_ordered(self, trial):
        rng = np.random.default_rng(100 + trial)
        rows, cols = rng.integers(1, 9, size=2)
        m = rng.standard_normal((rows, cols))
        u, s, v = svd_small(m)
        k = min(rows, cols)
        assert np.all(s >= 0)
        assert np.all(np.diff(s) <= 0)
        assert np.abs(u.T @ u - np.eye(k)).max() < 1e-10
        assert np.abs(v.T @ v - np.eye(k)).max() < 1e-10
        assert np.linalg.norm(m - u @ np.diag(s) @ v.T) < 1e-9

    def test_rank_deficient_basis_completion(self):
        # Duplicate columns give a null singular direction; U must still be
        # orthonormal.
        m = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        u, s, v = svd_small(m)
        assert s[1] < 1e-12
        assert np.abs(u.T @ u - np.eye(2)).max() < 1e-10
        assert np.abs(v.T @ v - np.eye(2)).max() < 1e-10

    def test_zero_matrix(self):
        u, s, v = svd_small(np.zeros((3, 2)))
        assert np.allclose(s, 0.0)
        assert np.abs(u.T @ u - np.eye(2)).max() < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(InvalidValue):
            svd_small(np.zeros((0, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidValue):
            svd_small([[np.nan]])
