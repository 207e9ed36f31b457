import sys
from pathlib import Path
from unittest.mock import PropertyMock, patch

import numpy as np
import pytest

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import ConfigurationError, VerificationError
from beta_ensembles.montecarlo.chain import ChainEnsemble, sample
from beta_ensembles.montecarlo.checks import (
    check_clt,
    check_concentration,
    escape_rate_fit,
    scaling_exponent,
)
from beta_ensembles.partition.fluctuations import Distribution, FluctuationData, linear_stat_fluctuations


def ensemble_of(samples: np.ndarray, segments: int = 1, **header) -> ChainEnsemble:
    chains, sweeps, N = samples.shape
    counts = np.zeros((chains, sweeps, segments), dtype=int)
    counts[..., 0] = N
    return ChainEnsemble(
        samples=samples,
        counts=counts,
        acceptance=np.full(chains, 0.3),
        scales=np.full((chains, segments), 0.1),
        header=header,
    )


def unit_gaussian(M2: float = 0.5) -> FluctuationData:
    return FluctuationData("x", 0.0, 0.0, M2, np.zeros(0), Distribution.gaussian)


@pytest.fixture
def inside_support():
    """Fixture to provide 20 particles spread inside the semicircle for 100 sweeps"""
    rng = np.random.default_rng(0)
    return ensemble_of(np.sort(rng.uniform(-1.2, 1.2, size=(2, 100, 20)), axis=-1))


@pytest.fixture
def normal_draws():
    """Fixture to provide iid standard normal draws of a one-particle statistic"""
    return ensemble_of(np.random.default_rng(4).standard_normal((4, 2000, 1)))


class TestConcentration:
    def test_one_cut(self, inside_support, gaussian_eq):
        """Test that one segment has no count fluctuation and nothing escapes"""
        report = check_concentration(inside_support, gaussian_eq)

        assert report.max_deviation == [0.0, 0.0]
        assert report.median_deviation == 0.0
        assert report.envelope_constant is None
        assert report.escape_fraction == 0.0
        assert report.escape_rate < 0

    def test_one_cut_rounded_filling(self, inside_support, gaussian_eq):
        """Test that a single segment reports exactly zero deviation when its mass is rounded"""
        rounded = np.array([1.0 - 1e-12])
        with patch.object(type(gaussian_eq), "segment_filling", new_callable=PropertyMock, return_value=rounded):
            report = check_concentration(inside_support, gaussian_eq)

        assert report.max_deviation == [0.0, 0.0]
        assert report.median_deviation == 0.0
        assert report.envelope_constant is None

    def test_outlier(self, inside_support, gaussian_eq):
        """Test that a particle far from the support counts as an escape"""
        inside_support.samples[0, 3, -1] = 2.5
        report = check_concentration(inside_support, gaussian_eq)

        assert report.escape_fraction == pytest.approx(1.0 / 200)

    def test_two_cut_deviation(self, two_cut_eq):
        """Test the normalized deviation of the segment counts"""
        samples = np.sort(np.random.default_rng(1).uniform(0.8, 1.8, size=(1, 10, 20)), axis=-1)
        ensemble = ensemble_of(samples, segments=2)
        ensemble.counts[..., 0] = 8
        ensemble.counts[..., 1] = 12
        report = check_concentration(ensemble, two_cut_eq)

        assert report.max_deviation[0] == pytest.approx(2.0 / np.sqrt(20 * np.log(20)), abs=1e-5)
        assert report.median_deviation == pytest.approx(2.0, abs=1e-4)
        assert report.envelope_constant is not None

    def test_fixed_filling(self, two_cut_eq):
        """Test that conditioned counts are not treated as fluctuations"""
        samples = np.sort(np.random.default_rng(1).uniform(0.8, 1.8, size=(1, 10, 20)), axis=-1)
        ensemble = ensemble_of(samples, segments=2, fixed_filling=True)
        report = check_concentration(ensemble, two_cut_eq)

        assert report.fixed_filling
        assert report.max_deviation == [0.0]

    def test_segment_mismatch(self, inside_support, two_cut_eq):
        """Test that the chain and the equilibrium must share the domain"""
        with pytest.raises(ConfigurationError):
            check_concentration(inside_support, two_cut_eq)


class TestScalingFits:
    def test_power_law(self):
        """Test the slope of a log-log fit"""
        assert scaling_exponent([10, 100, 1000], [1.0, 10.0, 100.0]) == pytest.approx(1.0)

    def test_escape_rate(self):
        """Test the exponential rate of escape fractions"""
        assert escape_rate_fit([10, 20, 30], np.exp([-1.0, -2.0, -3.0])) == pytest.approx(-0.1)

    def test_needs_two_points(self):
        """Test that fits need two usable values"""
        with pytest.raises(ConfigurationError):
            scaling_exponent([10, 20], [1.0, 0.0])
        with pytest.raises(ConfigurationError):
            escape_rate_fit([10, 20], [0.0, 0.0])


class TestCLT:
    def test_matching_law(self, normal_draws):
        """Test the sample moments and the characteristic function of a standard normal statistic"""
        report = check_clt(normal_draws, unit_gaussian(), lambda x: x)

        assert report.mean == pytest.approx(0.0, abs=0.05)
        assert report.variance == pytest.approx(1.0, abs=0.05)
        assert len(report.charfn) == 13
        assert report.ks_pvalue is not None
        assert not report.degenerate

    def test_wrong_variance(self, normal_draws):
        """Test that a variance off by a factor four fails"""
        report = check_clt(normal_draws, unit_gaussian(M2=2.0), lambda x: x)

        assert not report.passed
        assert report.ks_pvalue < 0.01

    def test_degenerate(self, normal_draws):
        """Test that a constant statistic passes trivially"""
        report = check_clt(normal_draws, unit_gaussian(), lambda x: np.zeros_like(x))

        assert report.degenerate
        assert report.passed

    def test_low_ess(self):
        """Test that too few effective samples raise"""
        ensemble = ensemble_of(np.random.default_rng(0).standard_normal((1, 100, 1)))

        with pytest.raises(VerificationError):
            check_clt(ensemble, unit_gaussian(), lambda x: x)

    def test_discrete_part_skips_ks(self, normal_draws):
        """Test that no KS test is run against a Gaussian convolved with a lattice law"""
        fluct = FluctuationData(
            "x",
            0.0,
            0.0,
            0.5,
            np.array([1.0]),
            Distribution.gaussian_discrete,
            T=np.array([[4.0]]),
            v=np.array([0.0]),
            eps_star=np.array([0.5, 0.5]),
        )
        report = check_clt(normal_draws, fluct, lambda x: x)

        assert report.ks_pvalue is None

    @pytest.mark.slow
    def test_gaussian_chain(self, gaussian_config, gaussian_cache):
        """Test the limit law of sum lambda^2 on sampled Gaussian configurations"""
        run = sample(gaussian_config, n_steps=4000, n_chains=4, seed=9, N=20)
        fluct = linear_stat_fluctuations(lambda x: x**2, gaussian_cache)
        report = check_clt(run, fluct, lambda x: x**2, min_ess=100)

        assert report.mean == pytest.approx(0.0, abs=0.1)
        assert report.variance == pytest.approx(0.5, abs=0.1)
