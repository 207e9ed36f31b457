import sys
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import ConfigurationError, EvaluationError
from beta_ensembles.model.models import build_domain
from beta_ensembles.montecarlo.chain import ChainEnsemble, sample
from beta_ensembles.montecarlo.estimators import (
    EstimatorReport,
    batch_means,
    batch_statistic,
    check_probes,
    estimate,
    estimate_correlators,
    joint_cumulant,
    resolvent_sums,
)


def synthetic_ensemble(chains: int = 2, sweeps: int = 400, N: int = 5, seed: int = 0) -> ChainEnsemble:
    rng = np.random.default_rng(seed)
    samples = np.sort(rng.uniform(-1.0, 1.0, size=(chains, sweeps, N)), axis=-1)
    return ChainEnsemble(
        samples=samples,
        counts=np.full((chains, sweeps, 1), N),
        acceptance=np.full(chains, 0.3),
        scales=np.full((chains, 1), 0.1),
        header={"N": N},
    )


def ar1(rho: float, shape, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(shape)
    out = np.empty(shape)
    out[:, 0] = noise[:, 0]
    for t in range(1, shape[1]):
        out[:, t] = rho * out[:, t - 1] + np.sqrt(1 - rho**2) * noise[:, t]
    return out


class TestEstimatorReport:
    def test_z_score(self):
        """Test that the z-score is filled in from the target"""
        report = EstimatorReport(estimand="x", estimate=1.2, std_error=0.1, ess=100, target=1.0)

        assert report.z_score == pytest.approx(2.0)
        assert report.within(3.0)
        assert not report.within(1.0)

    def test_no_target(self):
        """Test that a report without target always passes"""
        report = EstimatorReport(estimand="x", estimate=1.2, std_error=0.1, ess=100)

        assert report.z_score is None
        assert report.within()

    def test_positive_error(self):
        """Test that a zero standard error is refused"""
        with pytest.raises(ValidationError):
            EstimatorReport(estimand="x", estimate=1.0, std_error=0.0, ess=10)


class TestBatchMeans:
    def test_independent_draws(self):
        """Test that iid draws keep most of their sample size"""
        series = np.random.default_rng(0).standard_normal((4, 1000))
        mean, se, ess = batch_means(series)

        assert abs(mean) < 4 * se
        assert ess > 1000
        assert se == pytest.approx(1.0 / np.sqrt(4000), rel=0.5)

    def test_correlated_draws(self):
        """Test that autocorrelation shrinks the effective sample size"""
        series = ar1(0.9, (4, 2000))
        _, _, ess = batch_means(series)

        assert ess < series.size / 4

    def test_single_batch(self):
        """Test that one sample cannot carry an error estimate"""
        with pytest.raises(ConfigurationError):
            batch_statistic([np.ones((1, 1))], lambda cols: float(cols[0].mean()))

    def test_report(self):
        """Test the report built from a series"""
        report = estimate(np.random.default_rng(1).standard_normal((2, 500)), "noise", target=0.0)

        assert report.estimand == "noise"
        assert report.z_score is not None


class TestCumulants:
    def test_first_and_second(self):
        """Test that the first two joint cumulants are the mean and the covariance"""
        x = np.array([1.0, 2.0, 3.0, 4.0])
        y = np.array([2.0, 0.0, 1.0, 5.0])

        assert joint_cumulant([x]) == pytest.approx(2.5)
        assert joint_cumulant([x, y]) == pytest.approx(np.mean(x * y) - x.mean() * y.mean())

    def test_third(self):
        """Test the third cumulant E X^3 - 3 E X^2 E X + 2 (E X)^3"""
        x = np.array([0.0, 1.0, 1.0, 5.0])
        m1, m2, m3 = x.mean(), np.mean(x**2), np.mean(x**3)

        assert joint_cumulant([x, x, x]) == pytest.approx(m3 - 3 * m2 * m1 + 2 * m1**3)

    def test_resolvent_sums(self):
        """Test sum_i 1/(x - lambda_i) per sweep"""
        ensemble = synthetic_ensemble(chains=1, sweeps=1, N=2)
        ensemble.samples[:] = [[[0.0, 1.0]]]

        assert resolvent_sums(ensemble, 2.0)[0, 0] == pytest.approx(1.5)


class TestProbes:
    @pytest.mark.parametrize("probe", [3.05, 0.05j, -3.0])
    def test_too_close(self, probe):
        """Test that probes near the domain are refused"""
        with pytest.raises(EvaluationError):
            check_probes(build_domain([[-3.0, 3.0]]), [probe])

    def test_far_enough(self):
        """Test probes off the real axis and beyond the ends"""
        check_probes(build_domain([[-3.0, 3.0]]), [4.0, 1.0j, -3.2])


class TestCorrelatorEstimates:
    def test_one_point(self):
        """Test that W~_1 and W_1 coincide"""
        reports = estimate_correlators(synthetic_ensemble(), build_domain([[-1.0, 1.0]]), [2.0], 1)

        assert [r.estimand for r in reports] == ["W~_1(2)", "W_1(2)"]
        assert reports[0].estimate == pytest.approx(reports[1].estimate)
        assert all(r.target is None for r in reports)

    def test_two_point_tuples(self):
        """Test one report per unordered pair of probes"""
        reports = estimate_correlators(synthetic_ensemble(), build_domain([[-1.0, 1.0]]), [2.0, -2.0], 2)

        assert len(reports) == 6

    def test_independent_particles(self):
        """Test that the connected two-point function of iid uniform particles is N var(1/(x - U))"""
        ensemble = synthetic_ensemble(chains=4, sweeps=2000, N=5, seed=3)
        [_, conn] = estimate_correlators(ensemble, build_domain([[-1.0, 1.0]]), [2.0], 2)
        # E 1/(2 - U)^2 - (E 1/(2 - U))^2 for U uniform on [-1, 1]
        variance = 1.0 / 3.0 - (0.5 * np.log(3.0)) ** 2

        assert conn.estimate == pytest.approx(5 * variance, abs=5 * conn.std_error + 1e-3)

    def test_complex_probe(self):
        """Test that complex probes give real and imaginary parts"""
        reports = estimate_correlators(synthetic_ensemble(), build_domain([[-1.0, 1.0]]), [1.0j], 1)

        assert [r.estimand for r in reports] == ["W~_1(0+1j):re", "W~_1(0+1j):im", "W_1(0+1j):re", "W_1(0+1j):im"]

    def test_needs_one_variable(self):
        """Test that n = 0 is refused"""
        with pytest.raises(ConfigurationError):
            estimate_correlators(synthetic_ensemble(), build_domain([[-1.0, 1.0]]), [2.0], 0)

    @pytest.mark.slow
    def test_against_expansion(self, gaussian_config, gaussian_cache):
        """Test the sampled one- and two-point functions against the expansion"""
        run = sample(gaussian_config, n_steps=2000, n_chains=4, seed=11, N=20)
        probes = [3.5, -3.5]
        reports = estimate_correlators(run, gaussian_config.domain, probes, 1, gaussian_cache)
        reports += estimate_correlators(run, gaussian_config.domain, probes, 2, gaussian_cache)

        assert all(r.within(5.0) for r in reports)
