import argparse
import asyncio
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger
from numpy.polynomial import Polynomial
from pydantic import BaseModel, Field, field_validator, model_validator
from typing_extensions import Self

from beta_ensembles.core import config
from beta_ensembles.core.errors import BetaEnsembleError, ConfigurationError, VerificationError
from beta_ensembles.core.utils import TaskManager, run_with_errorhandling
from beta_ensembles.equilibrium.checks import check_hypotheses
from beta_ensembles.equilibrium.solver import EquilibriumMeasure, solve_equilibrium
from beta_ensembles.expansion.recursion import ExpansionCache, expand_correlators, sd_residual
from beta_ensembles.io.reports import (
    PLOT_KINDS,
    Manifest,
    charfn_table,
    emit_plot_data,
    equilibrium_report,
    expansion_report,
    file_sha256,
    read_json,
    tolerances,
    write_json,
    write_manifest,
)
from beta_ensembles.model.models import ModelConfig
from beta_ensembles.montecarlo.chain import ChainEnsemble, config_hash, load_chains, sample, save_chains
from beta_ensembles.montecarlo.checks import check_clt, check_concentration
from beta_ensembles.montecarlo.estimators import estimate_correlators
from beta_ensembles.partition.assembly import assemble_Z
from beta_ensembles.partition.fluctuations import FluctuationData, linear_stat_fluctuations
from beta_ensembles.partition.free_energy import FreeEnergyData, free_energy_data

STAGES = ("eqsolve", "expand", "partition", "sample", "verify")
# Stages whose results each stage reads, directly or through an artifact
REQUIRES = {
    "eqsolve": (),
    "expand": ("eqsolve",),
    "partition": ("eqsolve", "expand"),
    "sample": (),
    "verify": ("eqsolve", "expand", "partition", "sample"),
}
ARTIFACTS = {
    "eqsolve": "equilibrium.json",
    "expand": "expansion.json",
    "partition": "partition.json",
    "sample": "chains.npz",
    "verify": "verify.json",
}
MANIFEST = "manifest.json"


class PipelineSpec(BaseModel):
    """
    Represents one invocation of the pipeline.

    Attributes:
        config: Path of the JSON model file
        stages: Requested stages, in pipeline order
        out: Output directory for artifacts and the manifest
        numerics: Overrides of the model's numerics block
        seed: Base seed of the Monte Carlo chains
        N: Particle number, the model's N when omitted
        n_max, k_max: Extent of the correlator expansion
        k0: Truncation order of the partition function
        steps, chains: Recorded sweeps per chain and number of chains
        phi: Ascending polynomial coefficients of the test function
        chains_file: Chain file read by verify instead of out/chains.npz
    """

    config: Path
    stages: List[str]
    out: Path = Path("out")
    numerics: Dict[str, Any] = {}
    seed: int = Field(default_factory=lambda: config.DEFAULT_SEED)
    N: Optional[int] = Field(default=None, ge=1)
    n_max: int = Field(default=2, ge=1)
    k_max: int = Field(default=0, ge=0)
    k0: int = Field(default=0, ge=0)
    steps: int = Field(default=2000, ge=1)
    chains: int = Field(default=8, ge=1)
    phi: List[float] = [0.0, 0.0, 1.0]
    chains_file: Optional[Path] = None

    @field_validator("stages")
    @classmethod
    def known_stages(cls, value: List[str]) -> List[str]:
        if "all" in value:
            return list(STAGES)
        unknown = [s for s in value if s not in STAGES]
        if unknown:
            raise ValueError(f"unknown stage(s) {unknown}, expected {list(STAGES)} or 'all'")
        return [s for s in STAGES if s in value]

    @model_validator(mode="after")
    def dependencies_closed(self) -> Self:
        """Every stage a requested stage reads is requested too or has its artifact in out"""
        missing = []
        for stage in self.stages:
            for dep in REQUIRES[stage]:
                if dep in self.stages:
                    continue
                artifact = self.chains_file if dep == "sample" and self.chains_file else self.out / ARTIFACTS[dep]
                if not artifact.exists():
                    missing.append(f"{stage} needs {dep} ({artifact})")
        if missing:
            raise ValueError("; ".join(missing))
        return self

    def phi_function(self) -> Callable[[np.ndarray], np.ndarray]:
        return Polynomial(self.phi)

    @property
    def phi_label(self) -> str:
        return "poly" + str(self.phi)


@dataclass
class PipelineState:
    """Results shared between the stages of one run"""

    spec: PipelineSpec
    model: ModelConfig
    manifest: Manifest
    eq: Optional[EquilibriumMeasure] = None
    cache: Optional[ExpansionCache] = None
    data: Optional[FreeEnergyData] = None
    fluct: Optional[FluctuationData] = None
    ensemble: Optional[ChainEnsemble] = None

    def artifact(self, stage: str) -> Path:
        return self.spec.out / ARTIFACTS[stage]

    def written(self, stage: str, path: Path) -> None:
        self.manifest.record(stage).artifacts.append(str(path))
        logger.info(f"{stage}: wrote {path}")


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _check_artifact(state: PipelineState, stage: str) -> None:
    """An artifact from an earlier run must come from the same model file"""
    path = state.artifact(stage)
    if stage in state.spec.stages or not path.exists() or path.suffix != ".json":
        return
    recorded = read_json(path).get("config_hash")
    if recorded != config_hash(state.model):
        raise ConfigurationError(
            f"{path} was produced from a different model", {"artifact": str(path), "recorded": recorded}
        )


def ensure_equilibrium(state: PipelineState) -> EquilibriumMeasure:
    if state.eq is None:
        _check_artifact(state, "eqsolve")
        state.eq = solve_equilibrium(state.model)
    return state.eq


def ensure_cache(state: PipelineState) -> ExpansionCache:
    if state.cache is None:
        _check_artifact(state, "expand")
        state.cache = expand_correlators(ensure_equilibrium(state), n_max=state.spec.n_max, k_max=state.spec.k_max)
    return state.cache


def ensure_fluctuations(state: PipelineState) -> FluctuationData:
    if state.fluct is None:
        cache = ensure_cache(state)
        data = state.data
        if data is None and cache.eq.domain.g:
            _check_artifact(state, "partition")
            data = state.data = free_energy_data(state.model, k_max=-1, k0=state.spec.k0, eq=cache.eq)
        state.fluct = linear_stat_fluctuations(state.spec.phi_function(), cache, data, label=state.spec.phi_label)
    return state.fluct


def ensure_chains(state: PipelineState) -> ChainEnsemble:
    if state.ensemble is None:
        path = state.spec.chains_file or state.artifact("sample")
        ensemble = load_chains(path)
        if ensemble.header.get("config_hash") != config_hash(state.model):
            raise ConfigurationError(f"{path} was sampled from a different model", {"chains": str(path)})
        state.ensemble = ensemble
    return state.ensemble


def stage_eqsolve(state: PipelineState) -> None:
    eq = ensure_equilibrium(state)
    hypotheses = check_hypotheses(eq)
    record = state.manifest.record("eqsolve")
    record.checks["hypotheses"] = hypotheses.model_dump()
    report = {**equilibrium_report(eq), "config_hash": config_hash(state.model), "hypotheses": hypotheses}
    state.written("eqsolve", write_json(state.artifact("eqsolve"), report))


def stage_expand(state: PipelineState) -> None:
    cache = ensure_cache(state)
    residual = sd_residual(cache)
    record = state.manifest.record("expand")
    record.checks["loop_equation_residual"] = residual
    record.checks["vanishing_orders"] = all(
        cache.tensor(n, k) is None for n in range(1, cache.n_max + 1) for k in range(-1, n - 2)
    )
    report = {**expansion_report(cache), "config_hash": config_hash(state.model), "sd_residual": residual}
    state.written("expand", write_json(state.artifact("expand"), report))


def stage_partition(state: PipelineState) -> None:
    spec = state.spec
    eq = ensure_equilibrium(state)
    k_max = spec.k0 if eq.domain.g == 0 else -1
    state.data = free_energy_data(state.model, k_max=k_max, k0=spec.k0, eq=eq)
    N = spec.N or state.model.N
    expansion = assemble_Z(N, state.data, spec.k0)
    fluct = ensure_fluctuations(state)
    record = state.manifest.record("partition")
    record.checks.update(state.data.diagnostics)
    report = {
        "config_hash": config_hash(state.model),
        "free_energy": state.data.summary(),
        "Z": expansion.summary(),
        "fluctuations": fluct.summary(),
        "charfn": charfn_table(fluct, N),
    }
    state.written("partition", write_json(state.artifact("partition"), report))


def stage_sample(state: PipelineState) -> None:
    spec = state.spec
    eq = state.eq
    state.ensemble = sample(state.model, spec.steps, spec.chains, seed=spec.seed, N=spec.N, eq=eq)
    record = state.manifest.record("sample")
    record.checks["acceptance"] = state.ensemble.acceptance.tolist()
    state.written("sample", save_chains(state.artifact("sample"), state.ensemble))


def stage_verify(state: PipelineState) -> None:
    eq = ensure_equilibrium(state)
    cache = ensure_cache(state)
    ensemble = ensure_chains(state)
    fluct = ensure_fluctuations(state)
    lo, hi = eq.domain.hull
    probes = [hi + 0.5 * (hi - lo), lo - 0.5 * (hi - lo)]
    correlators = []
    for n in range(1, min(cache.n_max, 2) + 1):
        correlators += estimate_correlators(ensemble, eq.domain, probes, n, cache)
    concentration = check_concentration(ensemble, eq)
    clt = check_clt(ensemble, fluct, state.spec.phi_function())
    failed = [r.estimand for r in correlators if not r.within()]
    record = state.manifest.record("verify")
    record.checks["correlators_within_3se"] = not failed
    record.checks["clt_passed"] = clt.passed
    record.checks["max_concentration_deviation"] = max(concentration.max_deviation)
    report = {
        "config_hash": config_hash(state.model),
        "correlators": correlators,
        "concentration": concentration,
        "clt": clt,
        "charfn": {
            "s": [p.s for p in clt.charfn],
            "re": [p.empirical[0] for p in clt.charfn],
            "im": [p.empirical[1] for p in clt.charfn],
        },
    }
    state.written("verify", write_json(state.artifact("verify"), report))
    if failed or not clt.passed:
        raise VerificationError(
            "Monte Carlo estimates disagree with the expansion", {"correlators": failed, "clt_passed": clt.passed}
        )


STAGE_RUNNERS: Dict[str, Callable[[PipelineState], None]] = {
    "eqsolve": stage_eqsolve,
    "expand": stage_expand,
    "partition": stage_partition,
    "sample": stage_sample,
    "verify": stage_verify,
}
PLOTS = {"eqsolve": "density", "expand": "w1", "partition": "charfn"}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def load_model(spec: PipelineSpec) -> ModelConfig:
    model = ModelConfig.from_file(spec.config)
    updates: Dict[str, Any] = {}
    if spec.numerics:
        updates["numerics"] = {**model.numerics.model_dump(), **spec.numerics}
    if spec.N is not None:
        updates["N"] = spec.N
    return model.with_overrides(**updates) if updates else model


async def emit_plots(state: PipelineState) -> None:
    for stage, kind in PLOTS.items():
        if stage in state.spec.stages:
            path = emit_plot_data(state.artifact(stage), kind, state.spec.out / f"{kind}.csv")
            state.manifest.record(stage).artifacts.append(str(path))


async def run_pipeline(spec: PipelineSpec) -> int:
    """
    Run the requested stages in order and write the manifest.

    Returns:
        0 on success, otherwise the exit code of the failing stage
    """
    spec.out.mkdir(parents=True, exist_ok=True)
    model = load_model(spec)
    manifest = Manifest(
        config_path=str(spec.config),
        config_sha256=file_sha256(spec.config),
        seed=spec.seed,
        tolerances=tolerances(model.numerics),
    )
    state = PipelineState(spec=spec, model=model, manifest=manifest)
    logger.info(f"Running stage(s) {', '.join(spec.stages)} on {spec.config}")
    try:
        for stage in spec.stages:
            logger.info(f"Stage {stage}")
            async with TaskManager.in_thread(lambda s=stage: STAGE_RUNNERS[s](state), name=stage) as task:
                _, failure = await run_with_errorhandling(task.wait(), f"Stage {stage}")
            record = manifest.record(stage)
            if failure is not None:
                record.status = "failed"
                record.error = failure.message
                record.diagnostics = failure.details
                manifest.exit_code = failure.exit_code
                break
        if manifest.exit_code == 0:
            _, failure = await run_with_errorhandling(emit_plots(state), "Writing plot data")
            if failure is not None:
                logger.warning(f"Stage reports are complete but plot data is missing: {failure.message}")
    finally:
        write_manifest(spec.out / MANIFEST, manifest)
    return manifest.exit_code


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


def _numerics(items: Sequence[str]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"numerics override {item!r} is not key=value")
        out[key.strip()] = float(value) if any(c in value for c in ".eE") else int(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beta-ensembles", description="Large-N expansion of beta-ensembles")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="JSON model file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=config.DEFAULT_SEED)
    common.add_argument("--N", type=int, default=None, help="number of particles")
    common.add_argument("--nmax", type=int, default=2, help="largest number of correlator variables")
    common.add_argument("--kmax", type=int, default=0, help="largest correlator order in 1/N")
    common.add_argument("--k0", type=int, default=0, help="truncation order of the partition function")
    common.add_argument("--steps", type=int, default=2000, help="recorded sweeps per chain")
    common.add_argument("--chains", type=int, default=8)
    common.add_argument("--jobs", type=int, default=None, help="worker threads")
    common.add_argument("--phi", type=float, nargs="+", default=[0.0, 0.0, 1.0], help="test polynomial coefficients")
    common.add_argument("--chains-file", type=Path, default=None, help="chain file read by verify")
    common.add_argument("--set", dest="numerics", action="append", default=[], help="numerics override key=value")

    for name in STAGES + ("all",):
        sub.add_parser(name, parents=[common], help=f"run the {name} stage" if name != "all" else "run every stage")

    plot = sub.add_parser("plot", help="write CSV plot data from a stage report")
    plot.add_argument("--artifact", type=Path, required=True)
    plot.add_argument("--kind", choices=PLOT_KINDS, required=True)
    plot.add_argument("--out", type=Path, required=True)
    return parser


async def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "plot":
        emit_plot_data(args.artifact, args.kind, args.out)
        return 0
    if args.jobs:
        config.JOBS = args.jobs
    spec = PipelineSpec(
        config=args.config,
        stages=[args.command],
        out=args.out,
        numerics=_numerics(args.numerics),
        seed=args.seed,
        N=args.N,
        n_max=args.nmax,
        k_max=args.kmax,
        k0=args.k0,
        steps=args.steps,
        chains=args.chains,
        phi=args.phi,
        chains_file=args.chains_file,
    )
    return await run_pipeline(spec)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logger.remove()
    logger.add(sys.stderr, level=config.LOG_LEVEL)
    try:
        code = asyncio.run(run(argv))
    except BetaEnsembleError as e:
        logger.error(f"{type(e).__name__}: {e} {e.details or ''}")
        code = e.exit_code
    except ValueError as e:
        # pydantic validation of the pipeline request
        logger.error(str(e))
        code = ConfigurationError.exit_code
    return code


if __name__ == "__main__":
    sys.exit(main())
