import json
import sys
from pathlib import Path
from unittest.mock import patch

import pytest
from pydantic import ValidationError

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import ConfigurationError, ConvergenceError
from beta_ensembles.main import (
    STAGE_RUNNERS,
    STAGES,
    PipelineSpec,
    _numerics,
    build_parser,
    main,
    run_pipeline,
)


def read_manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text())


class TestPipelineSpec:
    def test_all_stages(self, gaussian_file, tmp_path):
        """Test that 'all' expands to every stage in pipeline order"""
        spec = PipelineSpec(config=gaussian_file, stages=["all"], out=tmp_path)

        assert spec.stages == list(STAGES)

    def test_stage_order(self, gaussian_file, tmp_path):
        """Test that stages run in pipeline order whatever order they were asked in"""
        spec = PipelineSpec(config=gaussian_file, stages=["expand", "eqsolve"], out=tmp_path)

        assert spec.stages == ["eqsolve", "expand"]

    def test_unknown_stage(self, gaussian_file, tmp_path):
        """Test that unknown stage names are refused"""
        with pytest.raises(ValidationError):
            PipelineSpec(config=gaussian_file, stages=["solve"], out=tmp_path)

    def test_missing_dependency(self, gaussian_file, tmp_path):
        """Test that a stage cannot run without the results it reads"""
        with pytest.raises(ValidationError, match="expand needs eqsolve"):
            PipelineSpec(config=gaussian_file, stages=["expand"], out=tmp_path)

    def test_dependency_from_artifact(self, gaussian_file, tmp_path):
        """Test that an artifact of an earlier run satisfies a dependency"""
        (tmp_path / "equilibrium.json").write_text("{}")

        assert PipelineSpec(config=gaussian_file, stages=["expand"], out=tmp_path).stages == ["expand"]

    def test_phi_function(self, gaussian_file, tmp_path):
        """Test the test polynomial built from its coefficients"""
        spec = PipelineSpec(config=gaussian_file, stages=["eqsolve"], out=tmp_path, phi=[1.0, 0.0, 2.0])

        assert spec.phi_function()(2.0) == pytest.approx(9.0)
        assert spec.phi_label == "poly[1.0, 0.0, 2.0]"


class TestCommandLine:
    def test_numerics(self):
        """Test that overrides are parsed as integers or floats"""
        assert _numerics(["nodes=128", "quad_tol=1e-9", "damping=0.3"]) == {
            "nodes": 128,
            "quad_tol": 1e-9,
            "damping": 0.3,
        }

    def test_numerics_without_value(self):
        """Test that an override must be key=value"""
        with pytest.raises(ConfigurationError):
            _numerics(["nodes"])

    def test_parser(self):
        """Test the options shared by the stage subcommands"""
        args = build_parser().parse_args(["all", "--config", "m.json", "--phi", "0", "1", "--set", "nodes=64"])

        assert args.command == "all"
        assert args.config == Path("m.json")
        assert args.phi == [0.0, 1.0]
        assert args.numerics == ["nodes=64"]
        assert args.out == Path("out")

    def test_plot_kind_choices(self):
        """Test that the plot subcommand only accepts known tables"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["plot", "--artifact", "a.json", "--kind", "histogram", "--out", "h.csv"])


class TestMain:
    def test_eqsolve(self, gaussian_file, tmp_path):
        """Test that the eqsolve stage writes its report, the density table and the manifest"""
        out = tmp_path / "out"

        assert main(["eqsolve", "--config", str(gaussian_file), "--out", str(out)]) == 0

        manifest = read_manifest(out)
        assert manifest["exit_code"] == 0
        assert manifest["stages"]["eqsolve"]["status"] == "ok"
        assert manifest["stages"]["eqsolve"]["checks"]["hypotheses"]
        assert (out / "equilibrium.json").exists()
        assert (out / "density.csv").read_text().startswith("x,rho")

    def test_missing_dependency(self, gaussian_file, tmp_path):
        """Test that an unsatisfied stage request exits with the configuration code"""
        assert main(["expand", "--config", str(gaussian_file), "--out", str(tmp_path)]) == 2

    def test_missing_config(self, tmp_path):
        """Test that a missing model file exits with the configuration code"""
        assert main(["eqsolve", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2

    def test_plot(self, tmp_path):
        """Test the plot subcommand on an existing report"""
        artifact = tmp_path / "equilibrium.json"
        artifact.write_text(json.dumps({"density": {"x": [0.0, 1.0], "rho": [0.3, 0.1]}}))

        code = main(["plot", "--artifact", str(artifact), "--kind", "density", "--out", str(tmp_path / "d.csv")])

        assert code == 0
        assert (tmp_path / "d.csv").exists()

    def test_failing_stage(self, gaussian_file, tmp_path):
        """Test that a numerical failure is recorded in the manifest with its exit code"""

        def diverge(state):
            raise ConvergenceError("outer iteration did not converge", {"iterations": 200})

        with patch.dict(STAGE_RUNNERS, {"eqsolve": diverge}):
            code = main(["eqsolve", "--config", str(gaussian_file), "--out", str(tmp_path)])

        assert code == 3
        record = read_manifest(tmp_path)["stages"]["eqsolve"]
        assert record["status"] == "failed"
        assert record["error"] == "ConvergenceError: outer iteration did not converge"
        assert record["diagnostics"] == {"iterations": 200}
        assert not (tmp_path / "density.csv").exists()


class TestRunPipeline:
    async def test_stages_share_state(self, gaussian_file, tmp_path):
        """Test that later stages see the results of earlier ones"""
        seen = []

        def expand(state):
            seen.append(state.eq)

        with patch.dict(STAGE_RUNNERS, {"expand": expand}), patch("beta_ensembles.main.PLOTS", {"eqsolve": "density"}):
            code = await run_pipeline(PipelineSpec(config=gaussian_file, stages=["eqsolve", "expand"], out=tmp_path))

        assert code == 0
        assert seen[0] is not None
        assert list(read_manifest(tmp_path)["stages"]) == ["eqsolve", "expand"]

    async def test_stops_after_failure(self, gaussian_file, tmp_path):
        """Test that no stage runs after a failed one"""
        calls = []

        def fail(state):
            raise ConfigurationError("bad request")

        with patch.dict(STAGE_RUNNERS, {"eqsolve": fail, "expand": calls.append}):
            code = await run_pipeline(PipelineSpec(config=gaussian_file, stages=["eqsolve", "expand"], out=tmp_path))

        assert code == 2
        assert calls == []
        assert "expand" not in read_manifest(tmp_path)["stages"]

    async def test_foreign_artifact(self, gaussian_file, tmp_path):
        """Test that an equilibrium report of another model is refused"""
        (tmp_path / "equilibrium.json").write_text(json.dumps({"config_hash": "other"}))

        code = await run_pipeline(PipelineSpec(config=gaussian_file, stages=["expand"], out=tmp_path))

        assert code == 2
        assert "different model" in read_manifest(tmp_path)["stages"]["expand"]["error"]

    async def test_numerics_override(self, gaussian_file, tmp_path):
        """Test that command-line numerics end up in the manifest tolerances"""
        with patch.dict(STAGE_RUNNERS, {"eqsolve": lambda state: None}):
            spec = PipelineSpec(config=gaussian_file, stages=["eqsolve"], out=tmp_path, numerics={"nodes": 64})
            with patch("beta_ensembles.main.PLOTS", {}):
                code = await run_pipeline(spec)

        assert code == 0
        assert read_manifest(tmp_path)["tolerances"]["nodes"] == 64

    async def test_plot_failure_keeps_exit_code(self, gaussian_file, tmp_path):
        """Test that missing plot data does not fail an otherwise successful run"""
        broken = patch("beta_ensembles.main.emit_plot_data", side_effect=OSError("disk full"))
        with patch.dict(STAGE_RUNNERS, {"eqsolve": lambda state: None}), broken:
            code = await run_pipeline(PipelineSpec(config=gaussian_file, stages=["eqsolve"], out=tmp_path))

        assert code == 0
        assert read_manifest(tmp_path)["exit_code"] == 0
