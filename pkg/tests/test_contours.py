import sys
from pathlib import Path

import numpy as np
import pytest

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import ContourExhausted, EvaluationError
from beta_ensembles.model.analytic import AnalyticFunction, LaurentTensor, as_function
from beta_ensembles.model.contours import (
    ContourFamily,
    Region,
    bernstein_limit,
    circle_space,
    contour_integral,
    inverse_joukowski,
    joukowski,
    segment_integrals,
)
from beta_ensembles.model.models import build_domain


@pytest.fixture(scope="module")
def family():
    """Fixture to provide the contour family around [-1, 1]"""
    return ContourFamily(build_domain([[-1.0, 1.0]]))


@pytest.fixture(scope="module")
def two_segment_family():
    """Fixture to provide the contour family around [-2, -1] and [1, 2]"""
    return ContourFamily(build_domain([[-2.0, -1.0], [1.0, 2.0]]))


class TestRegion:
    def test_contains(self):
        """Test membership in a strip intersected with a half plane"""
        region = Region(strip=1.0, re_min=0.0)

        assert region.contains(np.array([1.0 + 0.5j, -1.0, 2.0 + 2j])).tolist() == [True, False, False]

    def test_intersect(self):
        """Test that intersecting keeps the tightest bounds"""
        region = Region(strip=np.pi).intersect(Region(strip=1.0, re_max=4.0))

        assert region == Region(strip=1.0, re_min=None, re_max=4.0)

    def test_bernstein_limit_strip(self):
        """Test that the limiting ellipse touches the strip"""
        rho = bernstein_limit(0.0, 1.0, Region(strip=0.5))

        assert 0.5 * (rho - 1.0 / rho) == pytest.approx(0.5)

    def test_bernstein_limit_touching(self):
        """Test that a segment reaching the region boundary is refused"""
        with pytest.raises(EvaluationError):
            bernstein_limit(0.5, 0.5, Region(re_min=0.0))

    def test_joukowski_inverse(self):
        """Test that the inverse map recovers points outside the unit circle"""
        w = np.array([1.5, 2.0j, -1.2 - 0.3j])

        np.testing.assert_allclose(inverse_joukowski(joukowski(w, 0.5, 2.0), 0.5, 2.0), w)


class TestContourFamily:
    def test_levels_are_nested(self, family):
        """Test that contour parameters grow with the level and stay below the cap"""
        rhos = [family.rho(i)[0] for i in range(family.i_max + 1)]

        assert rhos[0] > 1.0
        assert np.all(np.diff(rhos) > 0)
        assert rhos[-1] < family.caps[0]

    def test_level_bounds(self, family):
        """Test that negative levels and levels past i_max are refused"""
        with pytest.raises(ValueError):
            family.rho(-1)
        with pytest.raises(ContourExhausted):
            family.rho(family.i_max + 1)

    def test_caps_keep_ellipses_apart(self, two_segment_family):
        """Test that neighbouring ellipses at the cap do not meet"""
        rho = two_segment_family.caps[0]
        reach = 0.5 * 0.5 * (rho + 1.0 / rho)

        assert -1.5 + reach < 0.0

    def test_contour_integral_residue(self, family):
        """Test that the normalized integral of 1/x around the segment is 1"""
        space = family.space(0)

        assert contour_integral(1.0 / space.x, space) == pytest.approx(1.0)

    def test_contour_integral_size_mismatch(self, family):
        """Test that values must be sampled on the node space"""
        with pytest.raises(ValueError):
            contour_integral(np.ones(3), family.space(0))

    def test_segment_integrals(self, two_segment_family):
        """Test that each segment only sees the poles it encloses"""
        space = two_segment_family.space(2)
        periods = segment_integrals(1.0 / (space.x - 1.5), space)

        np.testing.assert_allclose(periods, [0.0, 1.0], atol=1e-10)

    def test_circle_space(self):
        """Test a residue on a plain circle"""
        space = circle_space(0.0, 1.0, 64)

        assert contour_integral(1.0 / (space.x - 0.2), space) == pytest.approx(1.0)


class TestAnalyticFunction:
    def test_from_callable(self, family):
        """Test the exterior representation of 1/x"""
        f = AnalyticFunction.from_callable(family, lambda x: 1.0 / x)

        np.testing.assert_allclose(f.period_map(), [1.0], atol=1e-10)
        assert f.leading() == pytest.approx(1.0)
        assert f(3.0) == pytest.approx(1.0 / 3.0)
        assert f.derivative(3.0) == pytest.approx(-1.0 / 9.0)

    def test_check_decay(self, family):
        """Test that H^2 members have no 1/x term"""
        square = AnalyticFunction.from_callable(family, lambda x: 1.0 / x**2, decay=2)
        inverse = AnalyticFunction.from_callable(family, lambda x: 1.0 / x, decay=2)

        assert square.check_decay()
        assert not inverse.check_decay()

    def test_not_finite(self, family):
        """Test that non-finite samples are refused"""
        with pytest.raises(EvaluationError):
            AnalyticFunction.from_callable(family, lambda x: np.full(x.shape, np.inf))


class TestLaurentTensor:
    def test_two_slot_grid(self, family):
        """Test that a product of exterior functions is recovered on a grid"""
        space = family.space(0)
        values = np.outer(1.0 / space.x, 1.0 / space.x)
        tensor = LaurentTensor.from_samples(family, space, values)

        assert tensor.arity == 2
        assert tensor.grid(np.array([3.0]), np.array([2.0]))[0, 0] == pytest.approx(1.0 / 6.0)
        np.testing.assert_allclose(tensor.period_values(0)[0, :], tensor.period_values(1)[:, 0], atol=1e-10)
        np.testing.assert_allclose(tensor.period_values(0)[0, :], 1.0 / tensor.level_space().x, atol=1e-10)

    def test_chopped(self, family):
        """Test that coefficients at round-off size on the level are dropped"""
        K = family.degree
        coeffs = np.zeros(K, dtype=complex)
        coeffs[0], coeffs[1] = 1.0, 0.5
        coeffs[K - 1] = 1e-16 * family.rho(0)[0] ** K
        tensor = LaurentTensor(family, coeffs, K, level=0).chopped()

        assert tensor.coeffs[K - 1] == 0
        assert tensor.coeffs[0] == 1.0
        assert tensor.coeffs[1] == 0.5

    def test_sup_on_level(self, family):
        """Test the sup norm of 1/x on its own contour level"""
        f = AnalyticFunction.from_callable(family, lambda x: 1.0 / x, level=2)
        x = f.level_space().x

        assert f.sup_on_level() == pytest.approx(np.abs(1.0 / x).max(), rel=1e-8)

    def test_argument_checks(self, family):
        """Test that the slot count and degrees must agree"""
        tensor = LaurentTensor.zeros(family, 2)

        assert tensor.is_zero()
        with pytest.raises(ValueError):
            tensor.grid(np.array([2.0]))
        with pytest.raises(ValueError):
            tensor + LaurentTensor.zeros(family, 2, degree=10)
        with pytest.raises(ValueError):
            as_function(tensor)
