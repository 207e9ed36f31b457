"""Limit law of linear statistics sum_i phi(lambda_i) - N int phi dmu_eq."""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, Optional

import numpy as np
from loguru import logger

from beta_ensembles.core.errors import EvaluationError
from beta_ensembles.expansion.operators import Block
from beta_ensembles.expansion.recursion import SOURCE_LEVEL, ExpansionCache, extend_cache
from beta_ensembles.model.contours import contour_integral
from beta_ensembles.operators.fredholm import MasterInverse
from beta_ensembles.partition.free_energy import FreeEnergyData, filling_variations
from beta_ensembles.partition.theta import ThetaParams, characteristic_shift, theta, theta_derivatives

# |w| below this, relative to the size of phi, counts as no discrete component
W_TOL = 1e-8


class Distribution(str, Enum):
    gaussian = "gaussian"
    gaussian_discrete = "gaussian+discrete"


@dataclass(eq=False)
class FluctuationData:
    """
    Represents the fluctuation data of one test function.

    Attributes:
        label: Name of the test function
        mean_eq: int phi dmu_eq, the leading N-linear mean
        M1: oint phi W_1^[0], the order-one shift of the mean
        M2: Half of oint oint phi phi W_2^[0], so that the Gaussian part has variance 2 M2
        w: int phi d(dmu_eq/deta^h), the coupling to the filling fractions
        distribution: Gaussian, or Gaussian convolved with a discrete part
        T, v, eps_star: Theta data of the free filling fraction model, None on one cut
    """

    label: str
    mean_eq: float
    M1: float
    M2: float
    w: np.ndarray
    distribution: Distribution
    T: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    eps_star: Optional[np.ndarray] = None

    @property
    def g(self) -> int:
        return self.w.size

    @property
    def variance(self) -> float:
        """Variance of the Gaussian part"""
        return 2.0 * self.M2

    def theta_params(self, N: int) -> Optional[ThetaParams]:
        if self.g == 0 or self.T is None:
            return None
        return ThetaParams(characteristic_shift(self.eps_star, N), self.v, self.T)

    def mean_shift(self, N: int) -> float:
        """Order-one mean of the centered statistic: M1 plus w . grad log Theta"""
        params = self.theta_params(N)
        if params is None:
            return self.M1
        grad = theta_derivatives(params, 1) / theta(params)
        return self.M1 + float(np.real(self.w @ grad))

    def summary(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "mean_eq": self.mean_eq,
            "M1": self.M1,
            "M2": self.M2,
            "variance": self.variance,
            "w": self.w.tolist(),
            "distribution": self.distribution.value,
        }


def linear_stat_fluctuations(
    phi: Callable[[np.ndarray], np.ndarray],
    cache: ExpansionCache,
    data: Optional[FreeEnergyData] = None,
    inverse: Optional[MasterInverse] = None,
    label: str = "phi",
) -> FluctuationData:
    """
    M1, M2 and w of a test function analytic near the support.

    Raises:
        EvaluationError: phi is not finite on the integration contour
    """
    eq = cache.eq
    level = SOURCE_LEVEL + 2
    space = cache.ops.family.space(level)
    values = np.asarray(phi(space.x), dtype=complex)
    if not np.all(np.isfinite(values)):
        raise EvaluationError("test function is not finite on the contour", {"label": label, "level": level})
    extend_cache(cache, [(1, 0), (2, 0)])

    W1 = Block.of(cache.w1(0)).sampled(space)
    M1 = complex(contour_integral(values * W1, space))
    W2 = Block.of(cache.tensor(2, 0), slots=2).sampled(space)
    weighted = space.weights * values
    M2 = 0.5 * complex(weighted @ W2 @ weighted)
    mean_eq = complex(eq.measure.integrate(lambda x: phi(x + 0j)))

    g = eq.domain.g
    w = np.zeros(0)
    if g:
        inverse = inverse or cache.inverse
        variations = filling_variations(eq, inverse, level)
        w = np.array([contour_integral(values * p(space.x), space).real for p in variations])
    scale = max(1.0, float(np.abs(values).max()))
    discrete = g > 0 and float(np.abs(w).max()) > W_TOL * scale
    imag = max(abs(M1.imag), abs(M2.imag), abs(mean_eq.imag))
    logger.info(
        f"Fluctuations of {label}: M1 = {M1.real:.8g}, M2 = {M2.real:.8g}, w = {np.round(w, 10).tolist()} "
        f"(imaginary parts {imag:.1e})"
    )
    out = FluctuationData(
        label=label,
        mean_eq=float(mean_eq.real),
        M1=float(M1.real),
        M2=float(M2.real),
        w=w,
        distribution=Distribution.gaussian_discrete if discrete else Distribution.gaussian,
    )
    if g and data is not None:
        out.T, out.v, out.eps_star = data.theta_form(), data.theta_shift(), data.eps_star
    return out


def clt_charfn(s: float, fluct: FluctuationData, N: int) -> complex:
    """
    E exp(i s (sum phi - N int phi dmu_eq)) to leading order:
    exp(i s M1 - s^2 M2) Theta(v + i s w | T) / Theta(v | T).
    """
    gaussian = np.exp(1j * s * fluct.M1 - s**2 * fluct.M2)
    params = fluct.theta_params(N)
    if params is None:
        return complex(gaussian)
    shifted = params.with_v(params.v + 1j * s * fluct.w)
    return complex(gaussian * theta(shifted) / theta(params))
