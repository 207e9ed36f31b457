import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import ConfigurationError
from beta_ensembles.partition.assembly import assemble_Z, bracket_factors, lattice_sum, log_z_difference, theta_params
from beta_ensembles.partition.free_energy import FreeEnergyData, free_energy_data
from beta_ensembles.partition.theta import theta_grad


def two_segment_data(third: float = 0.6, shift: float = 0.0) -> FreeEnergyData:
    return FreeEnergyData(
        beta=2.0,
        eps_star=np.array([0.5, 0.5]),
        gamma=Fraction(5, 6),
        step=0.01,
        values={-2: {(0,): -1.0}, -1: {(0,): 0.25}},
        tensors={
            (-2, 1): np.array([0.0]),
            (-2, 2): np.array([[-10.0]]),
            (-2, 3): np.array([[[third]]]),
            (-1, 1): np.array([shift]),
        },
    )


@pytest.fixture
def data():
    """Fixture to provide synthetic free-energy data on two segments"""
    return two_segment_data(shift=0.3)


class TestAssembleZ:
    def test_leading_order_is_theta(self):
        """Test that the bracket at order 0 is Theta_0(0 | 10)"""
        expansion = assemble_Z(100, two_segment_data(), k0=0)

        assert expansion.bracket.real == pytest.approx(1.0134759, abs=1e-7)
        assert expansion.gamma_N.tolist() == [0.0]
        assert len(expansion.ledger) == 1

    def test_prefactor_and_exponent(self, data):
        """Test the N^((beta/2) N + gamma) prefactor and the exponentiated coefficients"""
        expansion = assemble_Z(100, data, k0=0)

        assert expansion.log_prefactor == pytest.approx((100 + 5 / 6) * np.log(100))
        assert expansion.exponent == pytest.approx(-1.0e4 + 0.25 * 100)
        assert expansion.log_z.real == pytest.approx(
            expansion.log_prefactor + expansion.exponent + np.log(abs(expansion.bracket))
        )

    def test_odd_particle_number(self, data):
        """Test the half-integer characteristic shift for odd N"""
        assert assemble_Z(101, data).gamma_N.tolist() == [0.5]

    def test_first_correction(self, data):
        """Test the order 1/N term F^[-2],(3)/3! Theta'''/N"""
        expansion = assemble_Z(100, data, k0=1)
        params = theta_params(data, 100)

        assert bracket_factors(data, 1) == [(-2, 3)]
        assert len(expansion.ledger) == 2
        term = expansion.ledger[1]
        assert term.order == 1
        assert term.factors == ((-2, 3),)
        assert term.value == pytest.approx(0.1 * theta_grad(params, [0, 0, 0]) / 100)
        assert expansion.bracket == pytest.approx(expansion.theta + term.value)

    def test_second_order_products(self, data):
        """Test that order 2 squares the cubic term and adds the quartic one"""
        data.tensors[(-2, 4)] = np.array([[[[0.5]]]])
        expansion = assemble_Z(100, data, k0=2)

        assert bracket_factors(data, 2) == [(-2, 3), (-2, 4)]
        assert sorted(t.factors for t in expansion.ledger if t.order == 2) == [((-2, 3), (-2, 3)), ((-2, 4),)]

    def test_agrees_with_lattice_sum(self, data):
        """Test that the truncation error is of the next order"""
        assert log_z_difference(100, data, k0=1) < 1e-5
        assert log_z_difference(100, data, k0=0) < 1e-2

    def test_one_segment(self):
        """Test that one cut has no theta bracket"""
        data = FreeEnergyData(
            beta=2.0, eps_star=np.array([1.0]), gamma=Fraction(5, 12), step=0.0, values={-2: {(): -1.0}}
        )
        expansion = assemble_Z(10, data)

        assert expansion.bracket == 1.0
        assert expansion.params is None
        assert lattice_sum(10, data) == 1.0
        assert expansion.summary()["theta_params"] is None

    def test_invalid(self):
        """Test that N must be positive and F^[-2] present"""
        with pytest.raises(ConfigurationError):
            assemble_Z(0, two_segment_data())
        with pytest.raises(ConfigurationError):
            assemble_Z(10, FreeEnergyData(beta=2.0, eps_star=np.array([1.0]), gamma=Fraction(0), step=0.0))

    def test_summary(self, data):
        """Test the JSON-ready summary of the expansion"""
        summary = assemble_Z(100, data, k0=1).summary()

        assert summary["theta_params"]["g"] == 1
        assert [t["order"] for t in summary["ledger"]] == [0, 1]


@pytest.fixture(scope="module")
def two_cut_data(two_cut_config, two_cut_eq):
    """Fixture to provide the free-energy data of the double well, prepared for the 1/N correction"""
    return free_energy_data(two_cut_config, k_max=-1, k0=1, eq=two_cut_eq)


@pytest.mark.slow
class TestTwoCutAssembly:
    @pytest.mark.parametrize("N", [50, 51, 52, 53])
    def test_agrees_with_lattice_sum(self, two_cut_data, N):
        """Test the assembled bracket against the direct sum over particle numbers"""
        assert (-1, 2) in two_cut_data.tensors
        assert log_z_difference(N, two_cut_data, k0=1) < 1e-3

    def test_parity_oscillation(self, two_cut_data):
        """Test that the characteristic -N eps* mod 1 alternates between even and odd N"""
        even, odd = assemble_Z(52, two_cut_data, k0=1), assemble_Z(53, two_cut_data, k0=1)

        shift = float(even.gamma_N[0])
        assert min(shift, 1.0 - shift) < 1e-5
        assert odd.gamma_N == pytest.approx([0.5], abs=1e-5)
        assert abs(even.theta - odd.theta) > 1e-6
