import sys
from pathlib import Path

import numpy as np
import pytest

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import NotInImageError
from beta_ensembles.model.analytic import AnalyticFunction
from beta_ensembles.model.models import build_domain
from beta_ensembles.operators.fredholm import MasterInverse, build_fredholm, fredholm_series_det, invert_K
from beta_ensembles.operators.master import MasterOperator
from beta_ensembles.operators.realline import RealDensity, RealLineOperator, invert_T_real


@pytest.fixture(scope="module")
def gaussian_op(gaussian_eq):
    """Fixture to provide the master operator of the semicircle"""
    return MasterOperator(gaussian_eq)


@pytest.fixture(scope="module")
def pair_op(pair_eq):
    """Fixture to provide the master operator of the two-body model"""
    return MasterOperator(pair_eq)


def inverse_square(op: MasterOperator) -> AnalyticFunction:
    return AnalyticFunction.from_callable(op.family, lambda x: 1.0 / x**2, level=0, decay=2)


class TestMasterOperator:
    def test_one_body_has_no_coupling(self, gaussian_op):
        """Test that O and L vanish for r = 1"""
        phi = inverse_square(gaussian_op)

        assert not np.any(gaussian_op.op_O(phi)(np.array([2.0, 1.0j])))
        assert np.allclose(gaussian_op.op_L(phi)(np.array([3.0])), 0.0)
        assert not np.any(gaussian_op.L_matrix(1))

    def test_K_on_semicircle(self, gaussian_op):
        """Test K[phi] = -2 (s phi)_- with s = sqrt(x^2 - 2) for the Gaussian model"""
        phi = inverse_square(gaussian_op)
        x = np.array([3.0, 2.0 + 1.0j])
        s = np.sqrt(x - np.sqrt(2.0)) * np.sqrt(x + np.sqrt(2.0))
        # s / x^2 = 1/x + O(1/x^3) has no polynomial part
        np.testing.assert_allclose(gaussian_op.op_K(phi)(x), -2.0 * s / x**2, atol=1e-8)

    def test_factorization(self, gaussian_op, pair_op):
        """Test (id + L - P) = sigma_S^{-1/2} I K on a decaying function"""
        assert gaussian_op.factorization_residual(inverse_square(gaussian_op)) < 1e-8
        assert pair_op.factorization_residual(inverse_square(pair_op)) < 1e-6

    def test_projector(self, gaussian_op):
        """Test that the discretized P is a projector of rank g + 1"""
        defect, rank = gaussian_op.projector_defect(1)

        assert defect < 1e-8
        assert rank == 1

    def test_coupling_operator(self, pair_op):
        """Test O[phi] = -0.3 oint xi phi for the x y coupling and a period-free phi"""
        phi = inverse_square(pair_op)

        np.testing.assert_allclose(pair_op.op_O(phi)(np.array([2.0, 0.5j])), -0.3, atol=1e-8)

    def test_I_inverse(self, gaussian_op):
        """Test that I^-1 undoes I"""
        phi = inverse_square(gaussian_op)
        back = gaussian_op.op_I_inv(gaussian_op.op_I(phi))

        assert back(np.array([3.0]))[0] == pytest.approx(1.0 / 9.0, abs=1e-8)

    def test_L_matrix_needs_inner_level(self, gaussian_op):
        """Test that the Nystrom kernel of L is not defined on the innermost contour"""
        with pytest.raises(ValueError):
            gaussian_op.L_matrix(0)


class TestFredholm:
    def test_system(self, gaussian_op):
        """Test the assembled Fredholm system of the one-cut model"""
        system = build_fredholm(gaussian_op, 1)

        assert system.rows == 1
        assert system.size == 1 + gaussian_op.family.space(1).size
        assert abs(system.determinant) > 1e-12
        assert set(system.summary()) == {
            "level",
            "determinant_abs",
            "determinant_arg",
            "period_condition",
            "matrix_condition",
        }

    def test_series_determinant(self):
        """Test that the full Fredholm series of a small matrix is det(id + K)"""
        K = np.random.default_rng(1).normal(size=(4, 4)) * 0.3

        assert fredholm_series_det(K, order=4) == pytest.approx(np.linalg.det(np.eye(4) + K))

    def test_inverse_recovers_source(self, gaussian_op):
        """Test that K^-1 K is the identity on period-free functions"""
        phi = inverse_square(gaussian_op)
        inverse = MasterInverse(gaussian_op)
        result = inverse.solve(gaussian_op.op_K(phi))

        assert result.residual < inverse.tol
        assert result.phi.level == 2
        assert result.phi(np.array([3.0]))[0] == pytest.approx(1.0 / 9.0, abs=1e-8)
        assert invert_K(inverse, gaussian_op.op_K(phi))(np.array([2.5]))[0] == pytest.approx(0.16, abs=1e-8)

    def test_mass_derivative_arguments(self, gaussian_op):
        """Test that period vectors must match the cuts and sum to zero"""
        inverse = MasterInverse(gaussian_op)

        with pytest.raises(ValueError):
            inverse.mass_derivative([1.0])
        with pytest.raises(ValueError):
            inverse.mass_derivative([0.5, -0.5])

    @pytest.mark.slow
    def test_mass_derivative_two_cut(self, two_cut_eq):
        """Test that the filling-fraction derivative carries the prescribed periods"""
        inverse = MasterInverse(MasterOperator(two_cut_eq))
        phi = inverse.mass_derivative([1.0, -1.0])

        np.testing.assert_allclose(phi.period_map(), [1.0, -1.0], atol=1e-8)
        assert inverse.kernel_check(phi) < 1e-3


class TestRealLine:
    def test_invert_linear(self):
        """Test that T[phi] = x is solved by T_1(t)/(2 pi sqrt(1 - t^2))"""
        op = RealLineOperator(build_domain([[-1.0, 1.0]]), 2.0)
        phi = op.invert(lambda x: x)

        assert phi.coeffs[0, 1] == pytest.approx(1.0 / (2.0 * np.pi), abs=1e-8)
        np.testing.assert_allclose(np.delete(phi.coeffs[0], 1), 0.0, atol=1e-8)
        np.testing.assert_allclose(phi.masses, [0.0], atol=1e-12)

    def test_apply(self):
        """Test that apply reproduces the right-hand side minus its mean"""
        op = RealLineOperator(build_domain([[-1.0, 1.0]]), 2.0)
        phi = invert_T_real(op, lambda x: x**2)
        x = np.array([-0.5, 0.0, 0.7])

        np.testing.assert_allclose(op.apply(phi, x), x**2 - 1.0 / 3.0, atol=1e-6)

    def test_density_values(self):
        """Test evaluation of a Chebyshev density inside and outside its segment"""
        phi = RealDensity(build_domain([[0.0, 2.0]]), np.array([[1.0, 0.0]]))

        np.testing.assert_allclose(phi(np.array([1.0, 3.0])), [1.0, 0.0])
        assert phi.masses[0] == pytest.approx(np.pi)

    def test_not_in_image(self):
        """Test that a kink cannot be reproduced by the discretization"""
        op = RealLineOperator(build_domain([[-1.0, 1.0]]), 2.0)

        with pytest.raises(NotInImageError):
            op.invert(np.abs, tol=1e-12)

    def test_from_equilibrium(self, gaussian_eq):
        """Test that the operator inherits domain and beta"""
        op = RealLineOperator.from_equilibrium(gaussian_eq)

        assert op.domain == gaussian_eq.domain
        assert op.beta == 2.0
