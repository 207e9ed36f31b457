import json
import sys
from pathlib import Path

import pytest

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.equilibrium.solver import solve_equilibrium
from beta_ensembles.expansion.recursion import expand_correlators
from beta_ensembles.model.models import ModelConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo runs and filling-fraction grids")


def gaussian_data(beta: float = 2.0) -> dict:
    return {
        "beta": beta,
        "r": 1,
        "N": 100,
        "segments": [[-3.0, 3.0]],
        "potential": {"type": "polynomial_sum", "onebody": [0.0, 0.0, -1.0]},
    }


@pytest.fixture
def gaussian_dict():
    """Fixture to provide the Gaussian model as raw JSON data"""
    return gaussian_data()


@pytest.fixture
def gaussian_file(tmp_path, gaussian_dict):
    """Fixture to provide the Gaussian model written to a JSON file"""
    path = tmp_path / "gaussian.json"
    path.write_text(json.dumps(gaussian_dict))
    return path


@pytest.fixture(scope="session")
def gaussian_config():
    """Fixture to provide exp(-N sum lambda^2) |Delta|^2 on [-3, 3]"""
    return ModelConfig.model_validate(gaussian_data())


@pytest.fixture(scope="session")
def gaussian_beta1_config():
    """Fixture to provide exp(-N sum lambda^2) |Delta| on [-3, 3]"""
    return ModelConfig.model_validate(gaussian_data(beta=1.0))


@pytest.fixture(scope="session")
def hard_edge_config():
    """Fixture to provide the Gaussian weight restricted to [0, 3]"""
    data = gaussian_data()
    data["segments"] = [[0.0, 3.0]]
    return ModelConfig.model_validate(data)


@pytest.fixture(scope="session")
def two_cut_config():
    """Fixture to provide the symmetric double well -x^4/2 + 2x^2 on two segments"""
    return ModelConfig.model_validate(
        {
            "beta": 2.0,
            "r": 1,
            "N": 100,
            "segments": [[-3.0, -0.1], [0.1, 3.0]],
            "potential": {"type": "polynomial_sum", "onebody": [0.0, 0.0, 2.0, 0.0, -0.5]},
        }
    )


@pytest.fixture(scope="session")
def pair_config():
    """Fixture to provide a two-body model: Gaussian confinement plus -0.3 x y"""
    return ModelConfig.model_validate(
        {
            "beta": 2.0,
            "r": 2,
            "N": 100,
            "segments": [[-3.0, 3.0]],
            "potential": {
                "type": "polynomial_sum",
                "onebody": [0.0, 0.0, -1.0],
                "terms": [{"coeff": -0.3, "polys": [[0.0, 1.0], [0.0, 1.0]]}],
            },
        }
    )


@pytest.fixture(scope="session")
def gaussian_eq(gaussian_config):
    """Fixture to provide the semicircle of radius sqrt(2)"""
    return solve_equilibrium(gaussian_config)


@pytest.fixture(scope="session")
def gaussian_beta1_eq(gaussian_beta1_config):
    """Fixture to provide the semicircle of radius 1"""
    return solve_equilibrium(gaussian_beta1_config)


@pytest.fixture(scope="session")
def hard_edge_eq(hard_edge_config):
    """Fixture to provide the equilibrium measure with a hard edge at 0"""
    return solve_equilibrium(hard_edge_config)


@pytest.fixture(scope="session")
def two_cut_eq(two_cut_config):
    """Fixture to provide the two-cut equilibrium measure of the double well"""
    return solve_equilibrium(two_cut_config)


@pytest.fixture(scope="session")
def pair_eq(pair_config):
    """Fixture to provide the equilibrium measure of the two-body model"""
    return solve_equilibrium(pair_config)


@pytest.fixture(scope="session")
def gaussian_cache(gaussian_eq):
    """Fixture to provide W_1 and W_2 of the Gaussian model up to order 1"""
    return expand_correlators(gaussian_eq, n_max=2, k_max=1)


@pytest.fixture(scope="session")
def gaussian_beta1_cache(gaussian_beta1_eq):
    """Fixture to provide W_1 and W_2 of the beta = 1 Gaussian model at order 0"""
    return expand_correlators(gaussian_beta1_eq, n_max=2, k_max=0)


@pytest.fixture(scope="session")
def pair_cache(pair_eq):
    """Fixture to provide W_1 and W_2 of the two-body model at order 0"""
    return expand_correlators(pair_eq, n_max=2, k_max=0)


@pytest.fixture(scope="session")
def two_cut_cache(two_cut_eq):
    """Fixture to provide W_1 and W_2 of the two-cut model at order 0"""
    return expand_correlators(two_cut_eq, n_max=2, k_max=0)
