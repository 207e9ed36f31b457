import os
import sys
from importlib import reload
from pathlib import Path
from unittest.mock import patch

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

import beta_ensembles.core.config as config


@pytest.fixture(autouse=True)
def restore_config():
    """Fixture to reload the default configuration after every test"""
    yield
    with patch("dotenv.load_dotenv", return_value=None), patch.dict(os.environ, {}, clear=True):
        reload(config)


class TestConfig:
    def test_config_loads_env_vars(self):
        """Test that config loads environment variables correctly"""
        env = {"BE_NODES": "128", "BE_TOL_EQ": "1e-9", "BE_SEED": "11", "BE_JOBS": "3", "BE_LOG_LEVEL": "DEBUG"}
        with patch("dotenv.load_dotenv", return_value=None), patch.dict(os.environ, env, clear=True):
            reload(config)

            assert config.NODES == 128
            assert config.TOL_EQ == 1e-9
            assert config.DEFAULT_SEED == 11
            assert config.JOBS == 3
            assert config.LOG_LEVEL == "DEBUG"

    def test_config_default_values(self):
        """Test default values when environment variables are not set"""
        with patch("dotenv.load_dotenv", return_value=None), patch.dict(os.environ, {}, clear=True):
            reload(config)

            assert config.NODES == 256
            assert config.CHEB_DEGREE == 128
            assert config.INNER_NODES == 64
            assert config.THETA_TOL == 1e-12
            assert config.FD_TOL == 1e-4
            assert config.FD_STEP == 0.02
            assert config.T_NODES == 16
            assert config.DEFAULT_SEED == 7
            assert config.JOBS == (os.cpu_count() or 1)

    @pytest.mark.parametrize(
        "env, message",
        [
            ({"BE_NODES": "15"}, "BE_NODES"),
            ({"BE_NODES": "130"}, None),
            ({"BE_INNER_NODES": "33"}, "BE_INNER_NODES"),
            ({"BE_DAMPING": "0"}, "BE_DAMPING"),
            ({"BE_DAMPING": "1.5"}, "BE_DAMPING"),
        ],
    )
    def test_config_validation(self, env, message):
        """Test validation of the numerical settings"""
        with patch("dotenv.load_dotenv", return_value=None), patch.dict(os.environ, env, clear=True):
            if message is None:
                reload(config)
                assert config.NODES == 130
                return
            with pytest.raises(ValueError) as excinfo:
                reload(config)

            assert message in str(excinfo.value)
