from enum import Enum
from typing import Callable, List, Optional, Sequence

import numpy as np
from loguru import logger
from numpy.polynomial.legendre import leggauss
from pydantic import BaseModel, computed_field
from scipy.integrate import quad

from beta_ensembles.core.errors import PotentialError
from beta_ensembles.equilibrium.solver import CRITICAL_TOL, EquilibriumMeasure, _critical_margin, effective_potential
from beta_ensembles.model.measure import GridMeasure
from beta_ensembles.model.models import Domain
from beta_ensembles.model.potential import RBodyPotential

UNIQUENESS_NOTE = "uniqueness of the global minimizer is assumed, not verified"


class ConvexityMode(str, Enum):
    fourier = "fourier"
    sampled = "sampled"


class HypothesisReport(BaseModel):
    """
    Represents the diagnostics of a solved equilibrium measure.
    """

    max_teff_off_support: float
    support_residual: float
    critical_margin: float
    off_critical: bool
    edge_types: List[List[str]]
    note: str = UNIQUENESS_NOTE

    @computed_field
    @property
    def passed(self) -> bool:
        return self.off_critical and self.max_teff_off_support < 0


class ConvexityReport(BaseModel):
    """
    Represents a local strict convexity check.

    In fourier mode `symbol_min` is the minimum of |k| F[q](k) over the scan
    grid; in sampled mode `samples` holds Q[nu] for random zero-mass nu.
    """

    mode: ConvexityMode
    symbol_min: Optional[float] = None
    samples: List[float] = []

    @computed_field
    @property
    def verdict(self) -> str:
        ok = all(s > -1e-10 for s in self.samples)
        if self.mode is ConvexityMode.fourier:
            ok = ok and self.symbol_min is not None and self.symbol_min > 0
        return "pass" if ok else "fail"


def check_hypotheses(eq: EquilibriumMeasure, points: int = 1000) -> HypothesisReport:
    """
    Control of large deviations and off-criticality of a solved measure.

    T_eff is scanned on a grid of A; points within 1e-3 of the support (relative
    to the cut length) are left out of the off-support maximum since T_eff
    vanishes continuously at the edges.
    """
    lo, hi = eq.domain.hull
    x = np.linspace(lo, hi, points)
    x = x[eq.domain.locate(x) >= 0]
    teff = effective_potential(eq, x)
    on = np.zeros(x.shape, dtype=bool)
    near = np.zeros(x.shape, dtype=bool)
    for a, b in eq.edges:
        pad = 1e-3 * (b - a)
        on |= (x >= a) & (x <= b)
        near |= (x >= a - pad) & (x <= b + pad)
    off = ~near
    margin = _critical_margin(eq.spectral)
    report = HypothesisReport(
        max_teff_off_support=float(teff[off].max()) if np.any(off) else -np.inf,
        support_residual=float(np.abs(teff[on]).max()) if np.any(on) else 0.0,
        critical_margin=margin,
        off_critical=margin >= CRITICAL_TOL,
        edge_types=[[t.value for t in row] for row in eq.edge_types],
    )
    logger.info(
        f"Hypotheses: max T_eff off S {report.max_teff_off_support:.3e}, "
        f"off-critical {report.off_critical}, edges {report.edge_types}"
    )
    return report


# ---------------------------------------------------------------------------
# Convexity
# ---------------------------------------------------------------------------


def fourier_symbol(T: RBodyPotential, beta: float, k: np.ndarray) -> np.ndarray:
    """
    F[q](k) for q(x) = -beta ln|x| - u(x), with T(x, y) = u(x - y) + one-body terms.

    F[-beta ln|x|] = beta pi/|k|; the kernel part is obtained from the
    integrable second derivative, F[-u](k) = F[u''](k)/k^2.

    Raises:
        PotentialError: T is not of translation-invariant pair form with r = 2
    """
    if T.r != 2:
        raise PotentialError("fourier mode needs r = 2")
    for term in T.separable_terms:
        if sum(not f.constant for f in term.factors) > 1:
            raise PotentialError("fourier mode needs T(x, y) = u(x - y) + one-body terms")
    for term in T.pair_terms:
        if not term.kernel.translation_invariant:
            raise PotentialError(f"{term.kernel.name} kernel is not translation invariant")
    k = np.abs(np.asarray(k, dtype=float))
    out = beta * np.pi / k
    for term in T.pair_terms:
        kernel = term.kernel

        def d2(z, kernel=kernel):
            return float(np.real(kernel.profile_d2(np.array(z, dtype=complex))))

        for i, kk in enumerate(k):
            transform = 2 * quad(d2, 0, np.inf, weight="cos", wvar=kk, limlst=200)[0]
            out[i] += term.coeff * transform / kk**2
    return out


def coulomb_form(nu: Callable[[np.ndarray], np.ndarray], domain: Domain) -> float:
    """-int int ln|x - y| dnu dnu = int_0^inf |nu^(k)|^2 / k dk for zero-mass nu"""

    def density(x: float) -> float:
        return float(nu(np.array(x)))

    def transform(k: float) -> complex:
        re = sum(quad(density, s.lo, s.hi, weight="cos", wvar=k, limit=200)[0] for s in domain.segments)
        im = sum(quad(density, s.lo, s.hi, weight="sin", wvar=k, limit=200)[0] for s in domain.segments)
        return complex(re, im)

    def integrand(k: float) -> float:
        return abs(transform(k)) ** 2 / k if k > 0 else 0.0

    return quad(integrand, 0, np.inf, limit=200)[0]


def quadratic_form(
    nu: Callable[[np.ndarray], np.ndarray],
    T: RBodyPotential,
    domain: Domain,
    beta: float,
    mu: Optional[GridMeasure] = None,
    n: int = 48,
) -> float:
    """
    Q[nu] = -beta int int ln|x - y| dnu dnu - int int K_2 dnu dnu for a
    zero-mass density nu, K_2 the two-body reduction of T against mu.
    """
    t, w = leggauss(n)
    xs = np.concatenate([s.mid + s.half * t for s in domain.segments])
    ws = np.concatenate([s.half * w for s in domain.segments])
    dens = ws * nu(xs)
    if not np.any(dens):
        return 0.0
    if T.r >= 2:
        if T.r > 2 and mu is None:
            raise PotentialError("r >= 3 needs a reference measure for the two-body reduction")
        K = T.two_body(xs[:, None], xs[None, :], mu).real
        interaction = float(dens @ K @ dens)
    else:
        interaction = 0.0
    return beta * coulomb_form(nu, domain) - interaction


def random_test_measure(
    domain: Domain, rng: np.random.Generator, degree: int = 4
) -> Callable[[np.ndarray], np.ndarray]:
    """Zero-mass density sum a_hj U_j(t_h) sqrt(1 - t_h^2), the j = 0 masses summing to 0"""
    a = rng.normal(size=(domain.g + 1, degree + 1))
    halves = np.array([s.half for s in domain.segments])
    a[:, 0] -= (a[:, 0] * halves).sum() / halves.sum()

    def nu(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for h, s in enumerate(domain.segments):
            t = (x - s.mid) / s.half
            inside = np.abs(t) < 1
            tt = np.where(inside, t, 0.0)
            theta = np.arccos(tt)
            series = sum(a[h, j] * np.sin((j + 1) * theta) for j in range(degree + 1))
            out += np.where(inside, series, 0.0)
        return out

    return nu


def check_convexity(
    T: RBodyPotential,
    domain: Domain,
    beta: float,
    mode: ConvexityMode = ConvexityMode.sampled,
    samples: int = 8,
    seed: int = 0,
    mu: Optional[GridMeasure] = None,
    k_grid: Optional[Sequence[float]] = None,
) -> ConvexityReport:
    """
    Local strict convexity of the energy, by the Fourier criterion or by
    sampling the quadratic form on random zero-mass test measures.
    """
    mode = ConvexityMode(mode)
    if mode is ConvexityMode.fourier:
        k = np.asarray(k_grid if k_grid is not None else np.logspace(-3, 2, 120))
        symbol = np.abs(k) * fourier_symbol(T, beta, k)
        report = ConvexityReport(mode=mode, symbol_min=float(symbol.min()))
    else:
        rng = np.random.default_rng(seed)
        values = [quadratic_form(random_test_measure(domain, rng), T, domain, beta, mu) for _ in range(samples)]
        report = ConvexityReport(mode=mode, samples=values)
    logger.info(f"Convexity ({mode.value}): {report.verdict}")
    return report
