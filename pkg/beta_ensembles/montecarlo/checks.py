"""Empirical checks of concentration and fluctuations against the large-N predictions."""

from typing import Callable, List, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel
from scipy import stats

from beta_ensembles.core.errors import ConfigurationError, VerificationError
from beta_ensembles.equilibrium.solver import EquilibriumMeasure, effective_potential
from beta_ensembles.montecarlo.chain import ChainEnsemble
from beta_ensembles.montecarlo.estimators import DEFAULT_BATCHES, batch_means, batch_statistic
from beta_ensembles.partition.fluctuations import FluctuationData, clt_charfn

MIN_ESS = 500
KS_LEVEL = 0.01
Z_LIMIT = 3.0


class ConcentrationReport(BaseModel):
    """
    Represents the filling-fraction and outlier statistics of a run.

    Attributes:
        N: Number of particles
        fixed_filling: Whether the run conditioned the particle numbers
        eps_star: Equilibrium mass of every domain segment
        max_deviation: Largest |N~_h - N eps*_h| / sqrt(N ln N) per chain
        median_deviation: Median over sweeps of max_h |N~_h - N eps*_h|
        envelope_constant: Smallest C with P(|dev| >= t) <= exp(N ln N (C - t^2)) on the observed tail
        fattening: Distance around the support below which a particle is not an outlier
        escape_fraction: Share of sweeps with a particle outside the fattened support
        escape_rate: N sup T_eff over the domain outside the fattened support
    """

    N: int
    fixed_filling: bool
    eps_star: List[float]
    max_deviation: List[float]
    median_deviation: float
    envelope_constant: Optional[float]
    fattening: float
    escape_fraction: float
    escape_rate: Optional[float]


class CharfnPoint(BaseModel):
    s: float
    empirical: List[float]
    predicted: List[float]
    std_error: float
    z_score: float


class CLTReport(BaseModel):
    """
    Represents the comparison of a linear statistic with its limit law.

    Attributes:
        label: Name of the test function
        N: Number of particles
        ess: Effective sample size of the centered statistic
        mean, variance: Sample moments of the centered statistic
        predicted_mean, predicted_variance: M1 (+ Theta shift) and 2 M2
        charfn: Empirical against predicted characteristic function
        ks_statistic, ks_pvalue: Kolmogorov-Smirnov test, Gaussian limits only
        degenerate: The statistic is constant
        passed: Every characteristic-function point within Z_LIMIT and the KS test above KS_LEVEL
    """

    label: str
    N: int
    ess: float
    mean: float
    variance: float
    predicted_mean: float
    predicted_variance: float
    charfn: List[CharfnPoint]
    ks_statistic: Optional[float] = None
    ks_pvalue: Optional[float] = None
    degenerate: bool = False
    passed: bool


# ---------------------------------------------------------------------------
# Concentration
# ---------------------------------------------------------------------------


def _envelope_constant(deviations: np.ndarray, N: int) -> Optional[float]:
    d = np.sort(np.abs(deviations.ravel()))
    if d.size == 0 or d[-1] == 0:
        return None
    tail = 1.0 - np.arange(d.size) / d.size
    scale = N * np.log(N)
    return float(np.max(d**2 + np.log(tail) / scale))


def check_concentration(
    ensemble: ChainEnsemble, eq: EquilibriumMeasure, fattening: Optional[float] = None
) -> ConcentrationReport:
    """
    Deviations of the segment counts from N eps* on the scale sqrt(N ln N)
    and the frequency of particles away from the support.
    """
    N = ensemble.N
    if N < 2:
        raise ConfigurationError("concentration needs N >= 2", {"N": N})
    eps = eq.segment_filling
    counts = ensemble.counts
    if counts.shape[-1] != eps.size:
        raise ConfigurationError(
            "chain segments do not match the equilibrium domain", {"chains": counts.shape[-1], "domain": eps.size}
        )
    raw = counts - N * eps
    deviations = raw / np.sqrt(N * np.log(N))
    fixed = bool(ensemble.header.get("fixed_filling", False))
    if fixed or eps.size == 1:
        # conditioned counts are N_h exactly, a single segment holds all N
        deviations = np.zeros_like(deviations)
        raw = np.zeros_like(raw)
    max_dev = np.abs(deviations).max(axis=(1, 2)).tolist()
    median = float(np.median(np.abs(raw).max(axis=-1)))

    width = float(np.ptp(eq.edges))
    delta = 0.02 * width if fattening is None else fattening
    support = eq.edges
    outside = np.ones(ensemble.samples.shape, dtype=bool)
    for lo, hi in support:
        outside &= (ensemble.samples < lo - delta) | (ensemble.samples > hi + delta)
    escape = float(outside.any(axis=-1).mean())

    grid = np.concatenate([np.linspace(seg.lo, seg.hi, 801) for seg in eq.domain.segments])
    far = np.ones(grid.shape, dtype=bool)
    for lo, hi in support:
        far &= (grid < lo - delta) | (grid > hi + delta)
    rate = float(N * effective_potential(eq, grid[far]).max()) if far.any() else None

    report = ConcentrationReport(
        N=N,
        fixed_filling=fixed,
        eps_star=eps.tolist(),
        max_deviation=max_dev,
        median_deviation=median,
        envelope_constant=None if fixed or eps.size == 1 else _envelope_constant(deviations, N),
        fattening=delta,
        escape_fraction=escape,
        escape_rate=rate,
    )
    logger.info(
        f"Concentration at N={N}: max deviation {max(max_dev):.3f}, median |N~ - N eps*| {median:.2f}, "
        f"escape fraction {escape:.2e}"
    )
    return report


def scaling_exponent(sizes: Sequence[int], values: Sequence[float]) -> float:
    """Least-squares slope of ln(values) against ln(sizes)"""
    sizes = np.asarray(sizes, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0
    if keep.sum() < 2:
        raise ConfigurationError("a scaling fit needs two positive values", {"values": values.tolist()})
    slope, _ = np.polyfit(np.log(sizes[keep]), np.log(values[keep]), 1)
    return float(slope)


def escape_rate_fit(sizes: Sequence[int], fractions: Sequence[float]) -> float:
    """Slope of ln(escape fraction) against N, to set against sup T_eff"""
    sizes = np.asarray(sizes, dtype=float)
    fractions = np.asarray(fractions, dtype=float)
    keep = fractions > 0
    if keep.sum() < 2:
        raise ConfigurationError("an escape-rate fit needs two non-zero fractions", {"fractions": fractions.tolist()})
    slope, _ = np.polyfit(sizes[keep], np.log(fractions[keep]), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# Central limit theorem
# ---------------------------------------------------------------------------


def check_clt(
    ensemble: ChainEnsemble,
    fluct: FluctuationData,
    phi: Callable[[np.ndarray], np.ndarray],
    s_grid: Optional[Sequence[float]] = None,
    min_ess: float = MIN_ESS,
    n_batches: int = DEFAULT_BATCHES,
) -> CLTReport:
    """
    Compare X_N[phi] = sum_i phi(lambda_i) - N int phi dmu_eq with its limit.

    Raises:
        VerificationError: the effective sample size is below min_ess
    """
    N = ensemble.N
    X = ensemble.linear_statistic(phi) - N * fluct.mean_eq
    s_grid = np.linspace(-3.0, 3.0, 13) if s_grid is None else np.asarray(s_grid, dtype=float)
    predicted_mean = fluct.mean_shift(N)

    if np.ptp(X) <= 1e-12 * max(1.0, float(np.abs(X).max())):
        logger.info(f"Linear statistic {fluct.label} is constant, degenerate pass")
        value = float(X.ravel()[0])
        return CLTReport(
            label=fluct.label,
            N=N,
            ess=float(X.size),
            mean=value,
            variance=0.0,
            predicted_mean=predicted_mean,
            predicted_variance=fluct.variance,
            charfn=[],
            degenerate=True,
            passed=True,
        )

    mean, _, ess = batch_means(X, n_batches)
    if ess < min_ess:
        raise VerificationError(
            f"effective sample size {ess:.0f} below {min_ess:.0f}", {"ess": ess, "samples": int(X.size)}
        )

    points = []
    for s in s_grid:
        re, se_re = batch_statistic([X], lambda cols, s=s: float(np.mean(np.cos(s * cols[0]))), n_batches)
        im, se_im = batch_statistic([X], lambda cols, s=s: float(np.mean(np.sin(s * cols[0]))), n_batches)
        target = clt_charfn(float(s), fluct, N)
        se = float(np.hypot(se_re, se_im))
        z = float(abs(complex(re, im) - target) / se)
        points.append(
            CharfnPoint(s=float(s), empirical=[re, im], predicted=[target.real, target.imag], std_error=se, z_score=z)
        )
    passed = all(p.z_score <= Z_LIMIT for p in points)

    ks_stat = ks_p = None
    if fluct.g == 0 or float(np.abs(fluct.w).max(initial=0.0)) == 0.0:
        if fluct.variance <= 0:
            raise VerificationError("predicted variance is not positive", {"variance": fluct.variance})
        # thin to roughly independent draws before the iid test
        stride = max(1, int(np.ceil(X.shape[1] * X.shape[0] / ess)))
        draws = X[:, ::stride].ravel()
        ks = stats.kstest(draws, "norm", args=(predicted_mean, np.sqrt(fluct.variance)))
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
        passed = passed and ks_p > KS_LEVEL

    report = CLTReport(
        label=fluct.label,
        N=N,
        ess=ess,
        mean=mean,
        variance=float(X.var()),
        predicted_mean=predicted_mean,
        predicted_variance=fluct.variance,
        charfn=points,
        ks_statistic=ks_stat,
        ks_pvalue=ks_p,
        passed=passed,
    )
    logger.info(
        f"CLT check of {fluct.label} at N={N}: mean {mean:.4f} vs {predicted_mean:.4f}, "
        f"variance {report.variance:.4f} vs {fluct.variance:.4f}, worst z {max(p.z_score for p in points):.2f}"
        + (f", KS p-value {ks_p:.3f}" if ks_p is not None else "")
    )
    return report
