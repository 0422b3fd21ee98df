import numpy as np
import pytest
import scipy.sparse as sp

from hdgadapt.linsolve import (Factorization, SingularMatrixError, factorize,
                               solve)


class TestFactorize:
    def test_identity(self):
        rhs = np.arange(10.0)
        x = solve(sp.eye(10, format="csc"), rhs)
        assert np.array_equal(x, rhs)

    def test_hand_2x2(self):
        A = sp.csc_matrix(np.array([[2.0, 1.0], [1.0, 3.0]]))
        x = solve(A, np.array([5.0, 10.0]))
        assert x == pytest.approx([1.0, 3.0], rel=1e-14)

    def test_zero_row_reports_index(self):
        A = sp.csc_matrix(np.array([[1.0, 2.0, 0.0],
                                    [0.0, 0.0, 0.0],
                                    [0.0, 1.0, 1.0]]))
        with pytest.raises(SingularMatrixError) as err:
            factorize(A)
        assert err.value.index == 1

    def test_numerically_singular(self):
        A = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
        with pytest.raises(SingularMatrixError):
            factorize(A).solve(np.ones(2))

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            factorize(sp.csc_matrix(np.ones((2, 3))))

    def test_fill_and_pivot_reported(self):
        rng = np.random.default_rng(0)
        A = sp.random(40, 40, density=0.2, random_state=rng, format="csc") \
            + 10 * sp.eye(40, format="csc")
        fac = factorize(A)
        assert fac.fill_factor >= 1.0
        assert fac.pivot_min > 0.0


class TestSolve:
    def test_zero_rhs(self):
        A = sp.csc_matrix(np.array([[2.0, 1.0], [1.0, 3.0]]))
        fac = factorize(A)
        x = fac.solve(np.zeros(2))
        assert np.array_equal(x, np.zeros(2))
        assert fac.last_residual == 0.0

    def test_random_spd_residual(self):
        rng = np.random.default_rng(1)
        M = rng.standard_normal((50, 50))
        A = sp.csc_matrix(M.T @ M + np.eye(50))
        b = rng.standard_normal(50)
        fac = factorize(A)
        x = fac.solve(b)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) < 1e-11
        assert fac.last_residual < 1e-11

    def test_dimension_mismatch(self):
        fac = factorize(sp.eye(4, format="csc"))
        with pytest.raises(ValueError):
            fac.solve(np.ones(5))

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        M = rng.standard_normal((30, 30))
        A = sp.csc_matrix(M + 31 * np.eye(30))
        b = rng.standard_normal(30)
        x1 = factorize(A).solve(b)
        x2 = factorize(A).solve(b)
        assert np.array_equal(x1, x2)

    def test_concurrent_style_multiple_rhs(self):
        rng = np.random.default_rng(3)
        A = sp.csc_matrix(np.diag(np.arange(1.0, 21.0)))
        fac = factorize(A)
        for _ in range(4):
            b = rng.standard_normal(20)
            assert np.linalg.norm(A @ fac.solve(b) - b) < 1e-12
