"""Multidimensional theta function Theta_gamma(v | T) as a truncated lattice sum."""

from dataclasses import dataclass, field
from itertools import product
from math import factorial
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from beta_ensembles.core import config
from beta_ensembles.core.errors import ConfigurationError

# Hard cap on the box radius of the lattice sum
MAX_RADIUS = 200


@dataclass(frozen=True, eq=False)
class ThetaParams:
    """
    Represents the data of Theta_gamma(v | T) = sum_m exp(-(m+gamma).T.(m+gamma)/2 + v.(m+gamma)).

    Attributes:
        gamma: Characteristic shift, one real entry per lattice direction
        v: Complex argument
        T: Real symmetric positive definite quadratic form
        tol: Bound on the neglected tail, relative to the largest term
        radius: Box half-width around the peak of the summand, chosen from tol when omitted
    """

    gamma: np.ndarray
    v: np.ndarray
    T: np.ndarray
    tol: float = config.THETA_TOL
    radius: Optional[int] = None
    center: np.ndarray = field(init=False)
    tail: float = field(init=False)

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=complex))
        T = np.atleast_2d(np.asarray(self.T, dtype=float)) if gamma.size else np.zeros((0, 0))
        g = gamma.size
        if v.size != g or T.shape != (g, g):
            raise ConfigurationError(
                "theta data have inconsistent sizes",
                {"gamma": list(gamma.shape), "v": list(v.shape), "T": list(T.shape)},
            )
        if g and not np.allclose(T, T.T, rtol=1e-10, atol=1e-12):
            raise ConfigurationError("theta quadratic form is not symmetric", {"T": T.tolist()})
        lam = float(np.linalg.eigvalsh(T).min()) if g else 1.0
        if g and lam <= 0:
            raise ConfigurationError("theta quadratic form is not positive definite", {"min_eigenvalue": lam})
        # the summand peaks at x = T^-1 Re v
        center = np.linalg.solve(T, v.real) - gamma if g else np.zeros(0)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "center", np.round(center))
        radius = self.radius if self.radius is not None else _radius_for(lam, g, self.tol)
        object.__setattr__(self, "radius", int(radius))
        object.__setattr__(self, "tail", _tail_bound(lam, g, int(radius) + 0.5 - 0.5 * np.sqrt(g)))

    @property
    def g(self) -> int:
        return self.gamma.size

    def points(self) -> np.ndarray:
        """Lattice points m + gamma of the truncated sum, one per row"""
        if self.g == 0:
            return np.zeros((1, 0))
        span = range(-self.radius, self.radius + 1)
        m = np.array(list(product(span, repeat=self.g)), dtype=float) + self.center
        return m + self.gamma

    def exponents(self, x: np.ndarray) -> np.ndarray:
        return -0.5 * np.einsum("ni,ij,nj->n", x, self.T, x) + x @ self.v

    def with_v(self, v: Sequence[complex]) -> "ThetaParams":
        return ThetaParams(self.gamma, np.asarray(v, dtype=complex), self.T, self.tol, self.radius)

    def summary(self) -> Dict[str, object]:
        return {
            "g": self.g,
            "gamma": self.gamma.tolist(),
            "v": [[z.real, z.imag] for z in self.v.tolist()],
            "T": self.T.tolist(),
            "radius": self.radius,
            "tail": self.tail,
        }


def _tail_bound(lam: float, g: int, distance: float) -> float:
    """
    Bound on the summands outside a ball of the given distance around the
    peak, relative to the peak: sum over shells of (2R+1)^g exp(-lam R^2/2).
    """
    if g == 0:
        return 0.0
    d = max(distance, 0.0)
    R = np.arange(int(np.floor(d)), int(np.floor(d)) + 400)
    R = R[R >= d]
    shells = (2 * R + 3.0) ** g * np.exp(-0.5 * lam * R**2)
    return float(shells.sum())


def _radius_for(lam: float, g: int, tol: float) -> int:
    for radius in range(1, MAX_RADIUS + 1):
        if _tail_bound(lam, g, radius + 0.5 - 0.5 * np.sqrt(g)) < tol:
            return radius
    raise ConfigurationError(
        "theta quadratic form is too flat for a truncated lattice sum",
        {"min_eigenvalue": lam, "max_radius": MAX_RADIUS},
    )


def _weights(params: ThetaParams) -> Tuple[np.ndarray, np.ndarray]:
    x = params.points()
    e = params.exponents(x)
    return x, e


def theta(params: ThetaParams) -> complex:
    """Theta_gamma(v | T); 1 for an empty lattice"""
    if params.g == 0:
        return 1.0 + 0j
    x, e = _weights(params)
    shift = float(e.real.max())
    value = complex(np.exp(shift) * np.exp(e - shift).sum())
    logger.trace(f"Theta over {x.shape[0]} lattice points: {value:.12g}")
    return value


def theta_grad(params: ThetaParams, multi_index: Sequence[int]) -> complex:
    """
    Derivative of Theta with respect to v along the given components,
    e.g. (0, 0, 1) for d^3 Theta / dv_0^2 dv_1.
    """
    if params.g == 0:
        return 1.0 + 0j if not multi_index else 0j
    if any(i < 0 or i >= params.g for i in multi_index):
        raise ConfigurationError("derivative index out of range", {"index": list(multi_index), "g": params.g})
    x, e = _weights(params)
    factor = np.prod(x[:, list(multi_index)], axis=1) if multi_index else np.ones(x.shape[0])
    return complex((factor * np.exp(e)).sum())


def theta_derivatives(params: ThetaParams, order: int) -> np.ndarray:
    """The symmetric tensor of all order-th v-derivatives of Theta"""
    g = params.g
    if order == 0:
        return np.array(theta(params))
    if g == 0:
        return np.zeros((0,) * order, dtype=complex)
    x, e = _weights(params)
    weights = np.exp(e)
    out = np.zeros((g,) * order, dtype=complex)
    for index in product(range(g), repeat=order):
        out[index] = (np.prod(x[:, list(index)], axis=1) * weights).sum()
    return out


def theta_taylor(params: ThetaParams, dv: Sequence[complex], order: int = 4) -> complex:
    """Taylor polynomial of Theta around v, used to cross-check the derivatives"""
    dv = np.asarray(dv, dtype=complex)
    total = 0j
    for ell in range(order + 1):
        D = theta_derivatives(params, ell)
        term = D
        for _ in range(ell):
            term = np.tensordot(term, dv, axes=(0, 0))
        total += complex(term) / factorial(ell)
    return total


def characteristic_shift(eps_star: Sequence[float], N: int) -> np.ndarray:
    """gamma_N = -N eps* mod Z^g, dropping the first segment"""
    eps = np.asarray(eps_star, dtype=float)[1:]
    out = np.mod(-N * eps, 1.0)
    out[np.isclose(out, 1.0, atol=1e-12)] = 0.0
    return out
