import sys
from pathlib import Path

import numpy as np
import pytest

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import EvaluationError
from beta_ensembles.partition.fluctuations import (
    Distribution,
    FluctuationData,
    clt_charfn,
    linear_stat_fluctuations,
)
from beta_ensembles.partition.theta import ThetaParams, characteristic_shift, theta


def square(x):
    return x**2


def identity(x):
    return x


class TestOneCut:
    def test_gaussian_square(self, gaussian_cache):
        """Test mean 1/2, no shift and variance 1/2 for sum lambda^2 at beta = 2"""
        fluct = linear_stat_fluctuations(square, gaussian_cache, label="x^2")

        assert fluct.mean_eq == pytest.approx(0.5, abs=1e-8)
        assert fluct.M1 == pytest.approx(0.0, abs=1e-8)
        assert fluct.M2 == pytest.approx(0.25, abs=1e-6)
        assert fluct.variance == pytest.approx(0.5, abs=1e-6)
        assert fluct.distribution is Distribution.gaussian
        assert fluct.g == 0

    def test_gaussian_linear(self, gaussian_cache):
        """Test that sum lambda has variance 1/2"""
        fluct = linear_stat_fluctuations(identity, gaussian_cache)

        assert fluct.mean_eq == pytest.approx(0.0, abs=1e-8)
        assert fluct.M2 == pytest.approx(0.25, abs=1e-6)

    def test_beta1_square(self, gaussian_beta1_cache):
        """Test mean 1/4, shift 1/4 and variance 1/4 for sum lambda^2 at beta = 1"""
        fluct = linear_stat_fluctuations(square, gaussian_beta1_cache)

        assert fluct.mean_eq == pytest.approx(0.25, abs=1e-8)
        assert fluct.M1 == pytest.approx(0.25, abs=1e-6)
        assert fluct.M2 == pytest.approx(0.125, abs=1e-6)

    def test_beta1_linear(self, gaussian_beta1_cache):
        """Test that the variance of sum lambda does not depend on beta"""
        assert linear_stat_fluctuations(identity, gaussian_beta1_cache).M2 == pytest.approx(0.25, abs=1e-6)

    def test_pair_coupling(self, pair_cache):
        """Test that -0.3 x y stiffens the centre of mass to variance 1/2.3"""
        fluct = linear_stat_fluctuations(identity, pair_cache)

        assert fluct.variance == pytest.approx(1.0 / 2.3, abs=1e-6)

    def test_singular_test_function(self, gaussian_cache):
        """Test that a test function that is not finite on the contour is refused"""
        with pytest.raises(EvaluationError):
            linear_stat_fluctuations(lambda x: np.where(np.abs(x) > 0, np.inf, 0.0), gaussian_cache)

    def test_summary(self, gaussian_cache):
        """Test the JSON-ready summary"""
        summary = linear_stat_fluctuations(square, gaussian_cache, label="x^2").summary()

        assert summary["label"] == "x^2"
        assert summary["distribution"] == "gaussian"
        assert summary["w"] == []


@pytest.mark.slow
class TestTwoCut:
    def test_odd_statistic_sees_filling(self, two_cut_cache):
        """Test that sum lambda couples to the particle numbers of each well"""
        fluct = linear_stat_fluctuations(identity, two_cut_cache)

        assert fluct.g == 1
        assert abs(fluct.w[0]) > 1e-3
        assert fluct.distribution is Distribution.gaussian_discrete

    def test_even_statistic_is_gaussian(self, two_cut_cache):
        """Test that sum lambda^2 does not distinguish the wells"""
        fluct = linear_stat_fluctuations(square, two_cut_cache)

        assert abs(fluct.w[0]) < 1e-8
        assert fluct.distribution is Distribution.gaussian


class TestCharacteristicFunction:
    def test_gaussian(self):
        """Test exp(i s M1 - s^2 M2) without filling fractions"""
        fluct = FluctuationData("phi", 0.0, 0.1, 0.5, np.zeros(0), Distribution.gaussian)

        assert clt_charfn(0.0, fluct, 100) == pytest.approx(1.0)
        assert clt_charfn(2.0, fluct, 100) == pytest.approx(np.exp(0.2j - 2.0))
        assert fluct.mean_shift(100) == 0.1

    def test_discrete_part(self):
        """Test the theta ratio of a two-cut statistic"""
        fluct = FluctuationData(
            "phi",
            0.0,
            0.0,
            0.5,
            np.array([1.0]),
            Distribution.gaussian_discrete,
            T=np.array([[4.0]]),
            v=np.array([0.0]),
            eps_star=np.array([0.5, 0.5]),
        )
        s = 0.7
        params = ThetaParams(characteristic_shift([0.5, 0.5], 101), [0.0], [[4.0]])
        expected = np.exp(-(s**2) * 0.5) * theta(params.with_v([1j * s])) / theta(params)

        assert clt_charfn(s, fluct, 101) == pytest.approx(expected)
        assert abs(clt_charfn(s, fluct, 101)) <= 1.0
        # gamma = 1/2 is symmetric, so the discrete part is centred
        assert fluct.mean_shift(101) == pytest.approx(0.0, abs=1e-12)
