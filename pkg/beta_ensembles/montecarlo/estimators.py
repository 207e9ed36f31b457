"""Batch-means estimators of correlators and linear statistics from recorded chains."""

from itertools import combinations_with_replacement
from math import factorial
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field, model_validator
from typing_extensions import Self

from beta_ensembles.core.errors import ConfigurationError, EvaluationError
from beta_ensembles.expansion.partitions import set_partitions
from beta_ensembles.expansion.recursion import ExpansionCache, correlator, disconnected
from beta_ensembles.model.models import Domain
from beta_ensembles.montecarlo.chain import ChainEnsemble

# Smallest distance between a probe point and the domain
PROBE_DISTANCE = 0.1
DEFAULT_BATCHES = 32


class EstimatorReport(BaseModel):
    """
    Represents one Monte Carlo estimate.

    The z-score is filled in from the target when one is given.
    """

    estimand: str
    estimate: float
    std_error: float = Field(gt=0)
    ess: float = Field(ge=0)
    target: Optional[float] = None
    z_score: Optional[float] = None

    @model_validator(mode="after")
    def fill_z_score(self) -> Self:
        if self.target is None:
            self.z_score = None
        elif self.z_score is None:
            self.z_score = (self.estimate - self.target) / self.std_error
        return self

    def within(self, sigmas: float = 3.0) -> bool:
        return self.z_score is None or abs(self.z_score) <= sigmas


def _batches(columns: Sequence[np.ndarray], n_batches: int) -> List[List[np.ndarray]]:
    """Split every (chains, sweeps) column into contiguous per-chain batches"""
    chains, sweeps = columns[0].shape
    per_chain = max(1, min(sweeps, -(-n_batches // chains)))
    edges = np.linspace(0, sweeps, per_chain + 1).astype(int)
    out = []
    for c in range(chains):
        for lo, hi in zip(edges[:-1], edges[1:]):
            out.append([col[c, lo:hi] for col in columns])
    return out


def _floor(se: float, estimate: float) -> float:
    return max(se, np.finfo(float).eps * max(1.0, abs(estimate)))


def batch_statistic(
    columns: Sequence[np.ndarray],
    statistic: Callable[[Sequence[np.ndarray]], float],
    n_batches: int = DEFAULT_BATCHES,
) -> Tuple[float, float]:
    """
    A statistic of the pooled samples with its batch-means standard error.

    Raises:
        ConfigurationError: fewer than two batches
    """
    columns = [np.atleast_2d(np.asarray(col)) for col in columns]
    batches = _batches(columns, n_batches)
    if len(batches) < 2:
        raise ConfigurationError("at least two batches are needed for an error estimate", {"batches": len(batches)})
    estimate = float(statistic([col.ravel() for col in columns]))
    values = np.array([statistic(b) for b in batches])
    se = float(values.std(ddof=1) / np.sqrt(len(values)))
    return estimate, _floor(se, estimate)


def batch_means(series: np.ndarray, n_batches: int = DEFAULT_BATCHES) -> Tuple[float, float, float]:
    """Mean, batch-means standard error and effective sample size of a (chains, sweeps) series"""
    series = np.atleast_2d(np.asarray(series, dtype=float))
    mean, se = batch_statistic([series], lambda cols: float(np.mean(cols[0])), n_batches)
    var = float(series.var())
    ess = var / se**2 if var > 0 else float(series.size)
    return mean, se, min(ess, float(series.size))


def estimate(
    series: np.ndarray, estimand: str, target: Optional[float] = None, n_batches: int = DEFAULT_BATCHES
) -> EstimatorReport:
    mean, se, ess = batch_means(series, n_batches)
    return EstimatorReport(estimand=estimand, estimate=mean, std_error=se, ess=ess, target=target)


def joint_moment(columns: Sequence[np.ndarray]) -> complex:
    return complex(np.mean(np.prod(np.stack(columns), axis=0)))


def joint_cumulant(columns: Sequence[np.ndarray]) -> complex:
    """
    Joint cumulant by Moebius inversion over set partitions:
    sum_pi (-1)^{|pi|-1} (|pi|-1)! prod_{B in pi} E[prod_{j in B} X_j].
    """
    total = 0j
    for partition in set_partitions(len(columns)):
        m = len(partition)
        term = (-1) ** (m - 1) * factorial(m - 1) + 0j
        for block in partition:
            term *= joint_moment([columns[j] for j in block])
        total += term
    return total


def resolvent_sums(ensemble: ChainEnsemble, x: complex) -> np.ndarray:
    """sum_i 1/(x - lambda_i) for every recorded sweep"""
    return (1.0 / (x - ensemble.samples)).sum(axis=-1)


def check_probes(domain: Domain, probes: Sequence[complex], distance: float = PROBE_DISTANCE) -> None:
    """
    Raises:
        EvaluationError: a probe lies closer than distance to the domain
    """
    for x in probes:
        x = complex(x)
        gap = min(abs(x - complex(np.clip(x.real, seg.lo, seg.hi))) for seg in domain.segments)
        if gap < distance:
            raise EvaluationError(
                "probe point too close to the domain", {"probe": [x.real, x.imag], "distance": gap, "min": distance}
            )


def _reports(
    name: str,
    columns: List[np.ndarray],
    statistic: Callable[[Sequence[np.ndarray]], complex],
    target: Optional[complex],
    complex_valued: bool,
    ess: float,
    n_batches: int,
) -> List[EstimatorReport]:
    parts = [("re", np.real)] + ([("im", np.imag)] if complex_valued else [])
    out = []
    for tag, part in parts:
        value, se = batch_statistic(columns, lambda cols: float(part(statistic(cols))), n_batches)
        out.append(
            EstimatorReport(
                estimand=f"{name}:{tag}" if complex_valued else name,
                estimate=value,
                std_error=se,
                ess=ess,
                target=None if target is None else float(part(target)),
            )
        )
    return out


def estimate_correlators(
    ensemble: ChainEnsemble,
    domain: Domain,
    probes: Sequence[complex],
    n: int,
    cache: Optional[ExpansionCache] = None,
    k_max: Optional[int] = None,
    n_batches: int = DEFAULT_BATCHES,
) -> List[EstimatorReport]:
    """
    Disconnected correlators W~_n and connected W_n at every n-tuple of probes.

    W~_n is the moment E[prod_j sum_i 1/(x_j - lambda_i)], W_n the joint
    cumulant of the same resolvent sums. With an expansion cache the reports
    carry the truncated large-N predictions as targets.

    Raises:
        EvaluationError: a probe lies closer than PROBE_DISTANCE to the domain
    """
    if n < 1:
        raise ConfigurationError("n must be at least 1", {"n": n})
    check_probes(domain, probes)
    sums = [resolvent_sums(ensemble, complex(x)) for x in probes]
    complex_valued = any(abs(complex(x).imag) > 0 for x in probes)
    if not complex_valued:
        sums = [s.real for s in sums]
    ess = min(batch_means(np.real(s), n_batches)[2] for s in sums)
    N = ensemble.N
    reports: List[EstimatorReport] = []
    for combo in combinations_with_replacement(range(len(probes)), n):
        pts = [complex(probes[i]) for i in combo]
        label = ",".join(f"{p.real:.6g}" + (f"{p.imag:+.6g}j" if p.imag else "") for p in pts)
        columns = [sums[i] for i in combo]
        tilde = disconnected(cache, pts, N, k_max) if cache is not None else None
        conn = correlator(cache, pts, N, k_max) if cache is not None else None
        reports += _reports(f"W~_{n}({label})", columns, joint_moment, tilde, complex_valued, ess, n_batches)
        reports += _reports(f"W_{n}({label})", columns, joint_cumulant, conn, complex_valued, ess, n_batches)
    worst = max((abs(r.z_score) for r in reports if r.z_score is not None), default=None)
    logger.info(
        f"Estimated {len(reports)} correlator value(s) at n={n} from {ensemble.n_chains} chain(s), ESS {ess:.0f}"
        + (f", worst |z| {worst:.2f}" if worst is not None else "")
    )
    return reports
