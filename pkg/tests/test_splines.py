import numpy as np
import pytest

from gradmatch import (DomainError, InvalidArgumentError, basis_matrix,
                       design_matrix, eval_basis, make_knots, ols_coefficients)


def midpoint_design(n):
    return (2.0 * np.arange(1, n + 1) - 1.0) / (2.0 * n)


class TestMakeKnots:
    def test_quartic_interior(self):
        kv = make_knots(4, 4)
        np.testing.assert_allclose(kv.interior_knots, [0.25, 0.5, 0.75])
        assert kv.dimension == 7
        assert len(kv.knots) == 4 - 1 + 2 * 4
        assert kv.meshwidth == 0.25

    def test_degenerate_single_interval(self):
        kv = make_knots(1, 1)
        assert kv.dimension == 1
        assert kv.interior_knots.size == 0
        # the single basis function is the indicator of [0, 1]
        for t in [0.0, 0.3, 1.0]:
            np.testing.assert_allclose(eval_basis(kv, t), [1.0])

    def test_dimension_arithmetic(self):
        kv = make_knots(10, 5)
        assert kv.dimension == 14
        assert len(kv.knots) == 9 + 10

    def test_knot_structure(self):
        kv = make_knots(6, 5)
        assert np.all(np.diff(kv.knots) >= 0)
        np.testing.assert_array_equal(kv.knots[:5], 0.0)
        np.testing.assert_array_equal(kv.knots[-5:], 1.0)

    @pytest.mark.parametrize("k_n,m", [(0, 4), (4, 0), (-1, 2), (2, -3)])
    def test_rejects_nonpositive(self, k_n, m):
        with pytest.raises(InvalidArgumentError):
            make_knots(k_n, m)


class TestEvalBasis:
    @pytest.mark.parametrize("k_n,m", [(1, 1), (2, 1), (4, 4), (6, 5), (10, 3)])
    def test_partition_of_unity(self, k_n, m):
        kv = make_knots(k_n, m)
        t = np.concatenate([np.linspace(0, 1, 101), kv.interior_knots])
        sums = basis_matrix(kv, t, 0).sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_piecewise_constant_conventions(self):
        kv = make_knots(2, 1)
        np.testing.assert_allclose(eval_basis(kv, 0.3), [1.0, 0.0])
        # right-continuous at the interior knot, left limit at t = 1
        np.testing.assert_allclose(eval_basis(kv, 0.5), [0.0, 1.0])
        np.testing.assert_allclose(eval_basis(kv, 1.0), [0.0, 1.0])

    def test_first_derivative_matches_finite_differences(self):
        kv = make_knots(4, 4)
        h = 1e-6
        fd = (eval_basis(kv, 0.4 + h) - eval_basis(kv, 0.4 - h)) / (2.0 * h)
        np.testing.assert_allclose(eval_basis(kv, 0.4, 1), fd, atol=1e-5)

    def test_higher_derivatives_consistent(self):
        # derivative of order r tracks finite differences of order r-1 values
        kv = make_knots(5, 5)
        rng = np.random.default_rng(7)
        ts = rng.uniform(0.05, 0.95, size=40)
        ts = ts[np.min(np.abs(ts[:, None] - kv.interior_knots[None, :]), axis=1) > 0.01]
        h = 1e-6
        for r in (1, 2):
            lo = basis_matrix(kv, ts - h, r - 1)
            hi = basis_matrix(kv, ts + h, r - 1)
            fd = (hi - lo) / (2.0 * h)
            vals = basis_matrix(kv, ts, r)
            scale = np.abs(vals).max()
            np.testing.assert_allclose(vals, fd, atol=1e-5 * scale)

    def test_local_support(self):
        kv = make_knots(8, 4)
        vals = basis_matrix(kv, np.linspace(0, 1, 301), 0)
        assert int((np.abs(vals) > 1e-14).sum(axis=1).max()) <= kv.order

    def test_domain_and_order_errors(self):
        kv = make_knots(4, 4)
        with pytest.raises(DomainError):
            eval_basis(kv, 1.2)
        with pytest.raises(DomainError):
            eval_basis(kv, -0.1)
        with pytest.raises(InvalidArgumentError):
            eval_basis(kv, 0.5, deriv_order=4)


class TestDesignMatrix:
    def test_constant_basis_column_of_ones(self):
        kv = make_knots(1, 1)
        dm = design_matrix(kv, np.array([1 / 6, 1 / 2, 5 / 6]))
        np.testing.assert_allclose(dm.values, np.ones((3, 1)))

    def test_rows_sum_to_one(self):
        kv = make_knots(6, 5)
        dm = design_matrix(kv, midpoint_design(50))
        np.testing.assert_allclose(dm.values.sum(axis=1), 1.0, atol=1e-12)

    def test_gram_eigenvalues_scale_with_meshwidth(self):
        # dense eigensolve oracle: eigenvalues of XtX/n are of order 1/k_n
        kv = make_knots(8, 5)
        dm = design_matrix(kv, midpoint_design(500))
        eigs = np.linalg.eigvalsh(dm.gram() / dm.n)
        assert eigs.min() > 0.005 / 8
        assert eigs.max() < 2.0 / 8

    def test_banded_rows(self):
        kv = make_knots(7, 5)
        dm = design_matrix(kv, midpoint_design(60))
        assert int((np.abs(dm.values) > 1e-14).sum(axis=1).max()) <= kv.order

    def test_rejects_bad_designs(self):
        kv = make_knots(4, 4)
        with pytest.raises(InvalidArgumentError):
            design_matrix(kv, np.array([0.4, 0.2, 0.9]))
        with pytest.raises(InvalidArgumentError):
            design_matrix(kv, np.array([0.1, 0.5, 1.3]))

    def test_warns_on_imbalanced_design(self):
        kv = make_knots(5, 3)
        clustered = np.linspace(0.0, 0.15, 40)
        with pytest.warns(UserWarning, match="imbalance"):
            design_matrix(kv, clustered)

    def test_spline_reproduction_at_design_points(self):
        # least squares recovers any curve already in the spline span
        kv = make_knots(6, 5)
        dm = design_matrix(kv, midpoint_design(80))
        rng = np.random.default_rng(3)
        beta = rng.normal(size=kv.dimension)
        fitted = dm.values @ ols_coefficients(dm, dm.values @ beta)
        np.testing.assert_allclose(fitted, dm.values @ beta, atol=1e-10)
