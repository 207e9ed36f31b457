import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
from numpy.polynomial import Polynomial

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import EvaluationError, PotentialError
from beta_ensembles.model.models import ModelConfig, PotentialSpec, build_domain
from beta_ensembles.model.potential import (
    PolyFactor,
    RBodyPotential,
    SeparableTerm,
    build_potential,
    dlog_sinhc,
    eval_potential,
    log_sinhc,
    one_body_term,
    truncate_domain,
)


def point_mass(x: float) -> SimpleNamespace:
    return SimpleNamespace(nodes=np.array([x], dtype=complex), weights=np.array([1.0]))


@pytest.fixture
def pair_potential(pair_config):
    """Fixture to provide -0.3 x y + (-x^2 - y^2) as a two-body potential"""
    return build_potential(pair_config.potential, 2, 2.0, pair_config.domain)


class TestEvaluation:
    def test_one_body(self, gaussian_config):
        """Test that a one-body potential reduces to its polynomial at r = 1"""
        T = build_potential(gaussian_config.potential, 1, 2.0, gaussian_config.domain)

        assert eval_potential(T, [np.array(2.0)]) == pytest.approx(-4.0)
        assert eval_potential(T, [np.array(2.0)], derivative=True) == pytest.approx(-4.0)
        assert not T.couples_particles()

    def test_separable_product(self):
        """Test that x y is symmetrized without rescaling"""
        spec = PotentialSpec(type="polynomial_sum", terms=[{"coeff": 1.0, "polys": [[0, 1], [0, 1]]}])
        T = build_potential(spec, 2, 2.0, build_domain([[-1.0, 1.0]]))

        assert eval_potential(T, [np.array(2.0), np.array(3.0)]) == pytest.approx(6.0)
        assert T.couples_particles()

    def test_one_body_term_is_arity_independent(self):
        """Test that the one-body embedding gives f(x) + f(y) at r = 2"""
        f = PolyFactor(Polynomial([0.0, 0.0, -1.0]))
        T = RBodyPotential(r=2, terms=(one_body_term(2, f),))

        assert T(np.array(1.0), np.array(0.5)) == pytest.approx(-1.25)

    def test_reductions_against_point_mass(self, pair_potential):
        """Test that integrating against a point mass is evaluation at that point"""
        mu = point_mass(0.5)
        direct = pair_potential(np.array(1.0), np.array(0.5))

        assert direct == pytest.approx(-1.4)
        assert pair_potential.one_body(np.array(1.0), mu) == pytest.approx(direct)
        assert pair_potential.two_body(np.array(1.0), np.array(0.5), mu) == pytest.approx(direct)
        assert pair_potential.average(mu) == pytest.approx(-0.2875)

    def test_derivative(self, pair_potential):
        """Test the derivative in the first slot against a central difference"""
        h = 1e-5
        x, y = 0.7, -0.4
        upper = pair_potential(np.array(x + h), np.array(y))
        lower = pair_potential(np.array(x - h), np.array(y))
        numeric = (upper - lower) / (2 * h)

        assert pair_potential.d1(np.array(x), np.array(y)) == pytest.approx(numeric, rel=1e-6)

    def test_wrong_point_count(self, pair_potential):
        """Test that the number of points must equal the arity"""
        with pytest.raises(PotentialError):
            eval_potential(pair_potential, [np.array(1.0)])

    def test_needs_measure(self, pair_potential):
        """Test that free slots cannot be integrated without a measure"""
        with pytest.raises(PotentialError):
            pair_potential.reduce([np.array(1.0)], None)

    def test_two_body_vanishes_for_one_body_models(self, gaussian_config):
        """Test that r = 1 models have no two-body kernel"""
        T = build_potential(gaussian_config.potential, 1, 2.0, gaussian_config.domain)

        assert not np.any(T.two_body(np.array([1.0, 2.0]), np.array([0.0, 0.0]), point_mass(0.0)))

    def test_algebra(self, pair_potential, gaussian_config):
        """Test scaling and the arity check on sums"""
        x, y = np.array(0.3), np.array(-1.1)

        assert pair_potential.scaled(2.0)(x, y) == pytest.approx(2.0 * pair_potential(x, y))
        assert (pair_potential + pair_potential)(x, y) == pytest.approx(2.0 * pair_potential(x, y))
        T1 = build_potential(gaussian_config.potential, 1, 2.0, gaussian_config.domain)
        with pytest.raises(PotentialError):
            pair_potential + T1

    def test_too_many_factors(self):
        """Test that a term cannot have more factors than the arity"""
        f = PolyFactor(Polynomial([0.0, 1.0]))
        with pytest.raises(PotentialError):
            RBodyPotential(r=1, terms=(SeparableTerm(1.0, (f, f)),))


class TestKernels:
    def test_log_sinhc_branches(self):
        """Test that the series and the closed form agree around the switch"""
        z = np.array([0.5, -0.5, 2e-3, -2e-3, 1.0 + 0.5j])
        exact = np.log(np.sinh(z / 2) / (z / 2))

        np.testing.assert_allclose(log_sinhc(z), exact, rtol=1e-7, atol=1e-12)
        assert log_sinhc(np.array(5e-4)) == pytest.approx(5e-4**2 / 24, rel=1e-6)

    def test_dlog_sinhc(self):
        """Test the derivative of ln sinhc against a central difference"""
        z, h = 0.8, 1e-6
        numeric = (log_sinhc(np.array(z + h)) - log_sinhc(np.array(z - h))) / (2 * h)

        assert dlog_sinhc(np.array(z)) == pytest.approx(numeric, rel=1e-6)
        assert dlog_sinhc(np.array(-z)) == pytest.approx(-dlog_sinhc(np.array(z)))

    def test_sinh_preset(self):
        """Test that the sinh preset needs two bodies and restricts Im z"""
        spec = PotentialSpec(type="sinh")
        domain = build_domain([[-1.0, 1.0]])

        with pytest.raises(PotentialError):
            build_potential(spec, 1, 2.0, domain)
        T = build_potential(spec, 2, 2.0, domain)
        assert T.region.strip == pytest.approx(np.pi)
        with pytest.raises(EvaluationError):
            eval_potential(T, [np.array(0.1 + 4.0j), np.array(0.2)])

    def test_qdeformed_diameter(self):
        """Test that the q-deformed kernel refuses domains wider than ln(1/q)"""
        spec = PotentialSpec(type="qdeformed", q=0.5)

        with pytest.raises(PotentialError):
            build_potential(spec, 2, 2.0, build_domain([[-3.0, 3.0]]))
        T = build_potential(spec, 2, 2.0, build_domain([[-0.2, 0.2]]))
        assert T.region.re_min < -0.2 and T.region.re_max > 0.2

    def test_onmodel_positive_domain(self):
        """Test that the log-sum kernel needs a domain inside (0, inf)"""
        spec = PotentialSpec(type="onmodel", n=1.0)

        with pytest.raises(PotentialError):
            build_potential(spec, 2, 2.0, build_domain([[-1.0, 1.0]]))
        T = build_potential(spec, 2, 2.0, build_domain([[1.0, 2.0]]))
        assert T(np.array(1.0), np.array(1.0)) == pytest.approx(-np.log(2.0))


class TestTruncation:
    def test_bounded_untouched(self, gaussian_config):
        """Test that bounded models are returned as they are"""
        assert truncate_domain(gaussian_config) is gaussian_config

    def test_unbounded_gaussian(self, gaussian_dict):
        """Test that the Gaussian confines at the first trial point"""
        cfg = ModelConfig.model_validate({**gaussian_dict, "segments": [[None, None]]})

        assert truncate_domain(cfg).segments == [[-2.0, 2.0]]
