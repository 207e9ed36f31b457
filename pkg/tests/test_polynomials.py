import sys
from pathlib import Path

import numpy as np
import pytest
from numpy.polynomial import Polynomial

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import ConfigurationError
from beta_ensembles.model.polynomials import divided_diff, divided_diff_coeffs, sigma_poly, sqrt_series, sqrt_sigma


class TestSigma:
    def test_sigma_poly(self):
        """Test that sigma is the monic polynomial with the given roots"""
        p = sigma_poly([0.0, 1.0, 2.0])

        np.testing.assert_allclose(p.coef, [0.0, 2.0, -3.0, 1.0])

    def test_empty_product(self):
        """Test that no edges give the constant 1"""
        assert sigma_poly([])(5.0) == 1.0

    def test_duplicate_roots(self):
        """Test that repeated edges are rejected"""
        with pytest.raises(ConfigurationError):
            sigma_poly([1.0, 1.0])

    def test_sqrt_sigma_branch(self):
        """Test that the square root is cut on the support and grows like x^{n/2}"""
        edges = [-1.0, 1.0]
        x = np.array([3.0, -3.0, 2.0j])
        s = sqrt_sigma(x, edges)

        np.testing.assert_allclose(s**2, x**2 - 1)
        # sign of x at infinity on both sides
        assert s[0].real > 0 and s[1].real < 0
        above = sqrt_sigma(np.array([0.5 + 1e-12j]), edges)
        below = sqrt_sigma(np.array([0.5 - 1e-12j]), edges)
        np.testing.assert_allclose(above, -below, atol=1e-9)

    def test_sqrt_series(self):
        """Test the large-x expansion of sigma^{1/2}"""
        edges = [-1.0, 1.0]
        S = sqrt_series(edges, 4)
        x = 10.0
        approx = x * sum(S[n] * x ** (-n) for n in range(5))

        assert approx == pytest.approx(np.sqrt(x**2 - 1), rel=1e-6)


class TestDividedDifferences:
    def test_first_order(self):
        """Test p^[1](x, xi) = (p(x) - p(xi)) / (x - xi)"""
        p = Polynomial([1.0, -2.0, 0.5, 3.0])
        x, xi = 1.3, -0.4

        assert divided_diff(p, 1, x, xi) == pytest.approx((p(x) - p(xi)) / (x - xi))

    def test_first_order_diagonal(self):
        """Test that coincident points give the derivative"""
        p = Polynomial([1.0, -2.0, 0.5, 3.0])

        assert divided_diff(p, 1, 0.7, 0.7) == pytest.approx(p.deriv()(0.7))

    def test_second_order(self):
        """Test p^[2](x; a, b) = (p^[1](x, a) - p^[1](x, b)) / (a - b)"""
        p = sigma_poly([-1.0, 0.5, 2.0])
        x, a, b = 0.3, 1.1, -0.6
        expected = (divided_diff(p, 1, x, a) - divided_diff(p, 1, x, b)) / (a - b)

        assert divided_diff(p, 2, x, a, b) == pytest.approx(expected)

    def test_constant_polynomial(self):
        """Test that constants have vanishing divided differences"""
        assert np.all(divided_diff_coeffs(Polynomial([1.0]), 2) == 0)

    def test_argument_count(self):
        """Test that the number of points must match the order"""
        with pytest.raises(ValueError):
            divided_diff(Polynomial([0.0, 1.0]), 1, 0.0)
        with pytest.raises(ValueError):
            divided_diff_coeffs(Polynomial([0.0, 1.0]), 3)
