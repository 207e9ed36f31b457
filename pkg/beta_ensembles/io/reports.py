"""JSON reports, the run manifest and CSV plot data."""

import hashlib
import json
import os
import platform
import tempfile
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field

from beta_ensembles.core import config
from beta_ensembles.core.errors import ConfigurationError
from beta_ensembles.equilibrium.solver import EquilibriumMeasure
from beta_ensembles.expansion.recursion import ExpansionCache
from beta_ensembles.partition.fluctuations import FluctuationData, clt_charfn

PLOT_KINDS = ("density", "w1", "charfn")
PACKAGES = ("beta-ensembles", "numpy", "scipy", "mpmath", "pydantic", "loguru")


def _jsonable(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump()
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: Union[str, Path], data: Any) -> Path:
    """Write data as sorted JSON through a temporary file and an atomic rename"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(data), indent=2, sort_keys=True, default=str)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text + "\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"artifact not found: {path}", {"path": str(path)})
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON: {e}") from e


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def versions() -> Dict[str, str]:
    out = {"python": platform.python_version()}
    for name in PACKAGES:
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "unknown"
    return out


class StageRecord(BaseModel):
    """
    Represents the outcome of one pipeline stage.

    Attributes:
        status: "ok" or "failed"
        artifacts: Files written by the stage
        checks: Named invariant checks with their outcome and value
        error: Exception class and message of a failure
        diagnostics: Structured payload of the failure
    """

    status: str = "ok"
    artifacts: List[str] = []
    checks: Dict[str, Any] = {}
    error: Optional[str] = None
    diagnostics: Dict[str, Any] = {}


class Manifest(BaseModel):
    """
    Represents the record of a pipeline run.

    Everything except created is a function of the config file, the seed and
    the environment, so two runs of the same inputs differ only there.
    """

    created: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    config_path: str
    config_sha256: str
    seed: int
    versions: Dict[str, str] = Field(default_factory=versions)
    tolerances: Dict[str, Any] = {}
    stages: Dict[str, StageRecord] = {}
    exit_code: int = 0

    def record(self, stage: str) -> StageRecord:
        return self.stages.setdefault(stage, StageRecord())


def tolerances(numerics: Optional[BaseModel] = None) -> Dict[str, Any]:
    out = {
        "theta_tol": config.THETA_TOL,
        "fd_tol": config.FD_TOL,
        "fd_step": config.FD_STEP,
        "t_nodes": config.T_NODES,
        "max_tensor": config.MAX_TENSOR,
    }
    if numerics is not None:
        out.update(numerics.model_dump())
    return out


def write_manifest(path: Union[str, Path], manifest: Manifest) -> Path:
    path = write_json(path, manifest.model_dump())
    logger.info(f"Manifest written to {path}")
    return path


# ---------------------------------------------------------------------------
# Stage reports
# ---------------------------------------------------------------------------


def _outside_support(eq: EquilibriumMeasure, points: int) -> np.ndarray:
    lo, hi = eq.domain.hull
    span = hi - lo
    grid = np.linspace(lo - 0.5 * span, hi + 0.5 * span, points)
    keep = np.ones(grid.shape, dtype=bool)
    for a, b in eq.edges:
        keep &= (grid < a - 1e-2 * span) | (grid > b + 1e-2 * span)
    return grid[keep]


def equilibrium_report(eq: EquilibriumMeasure, points: int = 201) -> Dict[str, Any]:
    """Summary of the equilibrium measure with its density sampled on every cut"""
    xs, rho = [], []
    for a, b in eq.edges:
        x = a + (b - a) * (np.arange(points) + 0.5) / points
        xs.append(x)
        rho.append(eq.density(x).real)
    return {**eq.summary(), "density": {"x": np.concatenate(xs), "rho": np.concatenate(rho)}}


def expansion_report(
    cache: ExpansionCache, probes: Optional[Sequence[complex]] = None, points: int = 201
) -> Dict[str, Any]:
    """
    The computed coefficients: values of W_n^[k] at probe tuples (diagonal
    tuples of the probe list) and W_1^[k] on a real grid off the support.
    """
    eq = cache.eq
    if probes is None:
        lo, hi = eq.domain.hull
        probes = [hi + 0.5 * (hi - lo), lo - 0.5 * (hi - lo)]
    values = []
    for (n, k), coeff in sorted(cache.entries.items()):
        for x in probes:
            v = complex(coeff(*([complex(x)] * n)).ravel()[0])
            values.append({"n": n, "k": k, "point": [complex(x).real, complex(x).imag], "value": [v.real, v.imag]})
    grid = _outside_support(eq, points)
    w1 = {"x": grid, "W_eq": eq.W(grid + 0j).real}
    for k in range(0, cache.k_max + 1):
        t = cache.tensor(1, k)
        if t is not None:
            w1[f"W1_{k}"] = np.real(t.grid(grid + 0j))
    return {**cache.summary(), "probe_values": values, "w1": w1}


def charfn_table(fluct: FluctuationData, N: int, s_grid: Optional[Sequence[float]] = None) -> Dict[str, Any]:
    s_grid = np.linspace(-3.0, 3.0, 61) if s_grid is None else np.asarray(s_grid, dtype=float)
    values = np.array([clt_charfn(float(s), fluct, N) for s in s_grid])
    return {"s": s_grid, "re": values.real, "im": values.imag}


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------


def emit_plot_data(artifact: Union[str, Path, Dict[str, Any]], kind: str, out: Union[str, Path]) -> Path:
    """
    Write one plottable table of a stage report as CSV.

    density: (x, rho) from an equilibrium report; w1: (x, W_eq, W1_0, ..)
    from an expansion report; charfn: (s, re, im) from a partition report.

    Raises:
        ConfigurationError: unknown kind, or the artifact does not hold that table
    """
    if kind not in PLOT_KINDS:
        raise ConfigurationError(
            f"unknown plot kind {kind!r}, expected one of {', '.join(PLOT_KINDS)}", {"kinds": list(PLOT_KINDS)}
        )
    data = read_json(artifact) if not isinstance(artifact, dict) else artifact
    if kind == "density":
        table, columns = data.get("density"), ["x", "rho"]
    elif kind == "w1":
        table = data.get("w1")
        columns = ["x", "W_eq"] + sorted(c for c in (table or {}) if c.startswith("W1_"))
    else:
        table, columns = data.get("charfn"), ["s", "re", "im"]
    if not table:
        raise ConfigurationError(f"artifact holds no {kind} data", {"kind": kind, "keys": sorted(data)})
    matrix = np.column_stack([np.asarray(table[c], dtype=float) for c in columns])
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(out, matrix, delimiter=",", header=",".join(columns), comments="", fmt="%.12g")
    logger.info(f"Wrote {kind} plot data ({matrix.shape[0]} rows) to {out}")
    return out
