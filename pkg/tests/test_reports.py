import json
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import ConfigurationError
from beta_ensembles.io.reports import (
    Manifest,
    charfn_table,
    emit_plot_data,
    equilibrium_report,
    expansion_report,
    file_sha256,
    read_json,
    tolerances,
    versions,
    write_json,
)
from beta_ensembles.partition.fluctuations import Distribution, FluctuationData


class TestJson:
    def test_numpy_and_complex_values(self, tmp_path):
        """Test that arrays, numpy scalars and complex numbers are written as plain JSON"""
        path = write_json(tmp_path / "sub" / "report.json", {"a": np.arange(3), "b": np.float64(0.5), "c": 1 + 2j})

        assert read_json(path) == {"a": [0, 1, 2], "b": 0.5, "c": [1.0, 2.0]}
        assert not list(path.parent.glob("*.tmp"))

    def test_sorted_keys(self, tmp_path):
        """Test that reports are byte-stable across key orders"""
        first = write_json(tmp_path / "a.json", {"z": 1, "a": 2})
        second = write_json(tmp_path / "b.json", {"a": 2, "z": 1})

        assert first.read_text() == second.read_text()

    def test_missing(self, tmp_path):
        """Test that a missing artifact is a configuration error"""
        with pytest.raises(ConfigurationError):
            read_json(tmp_path / "none.json")

    def test_invalid(self, tmp_path):
        """Test that a corrupt artifact is a configuration error"""
        path = tmp_path / "bad.json"
        path.write_text("{not json")

        with pytest.raises(ConfigurationError):
            read_json(path)

    def test_sha256(self, tmp_path):
        """Test the digest of a known content"""
        path = tmp_path / "abc.txt"
        path.write_bytes(b"abc")

        assert file_sha256(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


class TestManifest:
    def test_record_creates_stage(self):
        """Test that stages are created on first use and kept afterwards"""
        manifest = Manifest(config_path="m.json", config_sha256="0" * 64, seed=7)
        manifest.record("eqsolve").artifacts.append("out/equilibrium.json")

        assert manifest.record("eqsolve").artifacts == ["out/equilibrium.json"]
        assert manifest.model_dump()["stages"]["eqsolve"]["status"] == "ok"

    def test_environment(self):
        """Test that the manifest records versions and tolerances"""
        manifest = Manifest(config_path="m.json", config_sha256="0" * 64, seed=7, tolerances=tolerances())

        assert "python" in manifest.versions
        assert "numpy" in versions()
        assert set(manifest.tolerances) >= {"theta_tol", "fd_tol", "fd_step", "t_nodes", "max_tensor"}


class TestStageReports:
    def test_equilibrium(self, gaussian_eq):
        """Test the sampled density of the equilibrium report"""
        report = equilibrium_report(gaussian_eq, points=11)

        assert len(report["density"]["x"]) == 11
        assert np.all(report["density"]["rho"] > 0)
        assert report["edge_types"] == [["soft", "soft"]]

    def test_expansion(self, gaussian_cache):
        """Test probe values and the W_1 table of the expansion report"""
        report = expansion_report(gaussian_cache, points=21)

        assert len(report["probe_values"]) == 2 * len(gaussian_cache.entries)
        assert set(report["w1"]) == {"x", "W_eq", "W1_0", "W1_1"}
        assert np.all(np.abs(report["w1"]["x"]) > np.sqrt(2.0))

    def test_charfn_table(self):
        """Test the predicted characteristic function on the default grid"""
        fluct = FluctuationData("x", 0.0, 0.0, 0.5, np.zeros(0), Distribution.gaussian)
        table = charfn_table(fluct, 100)

        assert len(table["s"]) == 61
        assert table["re"][30] == pytest.approx(1.0)
        np.testing.assert_allclose(table["re"], np.exp(-0.5 * table["s"] ** 2))


class TestPlotData:
    def test_density_csv(self, tmp_path):
        """Test the CSV written from an equilibrium report"""
        out = emit_plot_data({"density": {"x": [0.0, 1.0], "rho": [0.5, 0.25]}}, "density", tmp_path / "d.csv")
        lines = out.read_text().splitlines()

        assert lines[0] == "x,rho"
        assert lines[1:] == ["0,0.5", "1,0.25"]

    def test_w1_columns(self, tmp_path):
        """Test that every W_1 order becomes a column"""
        path = tmp_path / "expansion.json"
        path.write_text(json.dumps({"w1": {"x": [3.0], "W_eq": [0.3], "W1_1": [0.002], "W1_0": [0.0]}}))
        out = emit_plot_data(path, "w1", tmp_path / "w1.csv")

        assert out.read_text().splitlines()[0] == "x,W_eq,W1_0,W1_1"

    def test_unknown_kind(self, tmp_path):
        """Test that only known tables can be written"""
        with pytest.raises(ConfigurationError):
            emit_plot_data({}, "histogram", tmp_path / "h.csv")

    def test_missing_table(self, tmp_path):
        """Test that an artifact without the requested table is refused"""
        with pytest.raises(ConfigurationError):
            emit_plot_data({"density": {}}, "charfn", tmp_path / "c.csv")
