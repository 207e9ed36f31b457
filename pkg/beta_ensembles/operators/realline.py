"""Real-axis counterpart of the master operator: T[phi] = -int (beta ln|x-y| + tau(x,y)) phi(y) dy + const."""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from loguru import logger
from numpy.polynomial.chebyshev import chebpts1, chebval
from numpy.polynomial.legendre import leggauss

from beta_ensembles.core.errors import NotInImageError
from beta_ensembles.equilibrium.solver import EquilibriumMeasure
from beta_ensembles.model.contours import inverse_joukowski
from beta_ensembles.model.measure import GridMeasure
from beta_ensembles.model.models import Domain
from beta_ensembles.model.potential import RBodyPotential

RealFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class RealDensity:
    """
    Density sum_n a_hn T_n(t_h)/sqrt(1 - t_h^2) on every segment A_h, with
    t_h the affine variable mapping A_h onto [-1, 1].
    """

    domain: Domain
    coeffs: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for h, seg in enumerate(self.domain.segments):
            t = (x - seg.mid) / seg.half
            inside = np.abs(t) < 1
            tt = np.where(inside, t, 0.0)
            out += np.where(inside, chebval(tt, self.coeffs[h]) / np.sqrt(1 - tt**2), 0.0)
        return out

    @property
    def masses(self) -> np.ndarray:
        return np.array([np.pi * seg.half * self.coeffs[h, 0] for h, seg in enumerate(self.domain.segments)])


def log_moments(x: np.ndarray, mid: float, half: float, degree: int) -> np.ndarray:
    """
    int ln|x - y| T_n(t)/sqrt(1 - t^2) dy over [mid - half, mid + half], n = 0..degree,
    from int ln|u - t| T_n(t)/sqrt(1-t^2) dt = pi ln|z/2| (n = 0) and -(pi/n) Re z^{-n}.
    """
    x = np.asarray(x, dtype=float)
    z = inverse_joukowski(x, mid, half)
    out = np.empty(x.shape + (degree + 1,))
    out[..., 0] = np.pi * (np.log(np.abs(z) / 2.0) + np.log(half))
    n = np.arange(1, degree + 1)
    out[..., 1:] = -(np.pi / n) * np.real(z[..., None] ** (-n))
    return half * out


class RealLineOperator:
    """
    Chebyshev discretization of T on the domain.

    tau(x, y) is the two-body reduction of the interaction against mu_eq;
    the constant makes int_A T[phi] dx = 0.
    """

    def __init__(
        self,
        domain: Domain,
        beta: float,
        potential: Optional[RBodyPotential] = None,
        mu: Optional[GridMeasure] = None,
        degree: int = 32,
        quadrature: int = 128,
    ):
        self.domain = domain
        self.beta = beta
        self.potential = potential
        self.mu = mu
        self.degree = degree
        self.t_nodes = chebpts1(quadrature)
        t, w = leggauss(64)
        self.mean_x = np.concatenate([s.mid + s.half * t for s in domain.segments])
        self.mean_w = np.concatenate([s.half * w for s in domain.segments])
        self.length = float(sum(s.hi - s.lo for s in domain.segments))

    @classmethod
    def from_equilibrium(cls, eq: EquilibriumMeasure, degree: int = 32) -> "RealLineOperator":
        return cls(eq.domain, eq.beta, eq.potential, eq.measure, degree)

    def _tau(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.potential is None or self.potential.r < 2:
            return np.zeros(np.broadcast(x, y).shape)
        return self.potential.two_body(x + 0j, y + 0j, self.mu).real

    def _columns(self, x: np.ndarray) -> np.ndarray:
        """Matrix of int (beta ln|x-y| + tau(x,y)) T_n(t_h)/sqrt(1-t_h^2) dy, columns (h, n)"""
        x = np.asarray(x, dtype=float)
        n = np.arange(self.degree + 1)
        Q = self.t_nodes.size
        cols = []
        for seg in self.domain.segments:
            block = self.beta * log_moments(x, seg.mid, seg.half, self.degree)
            y = seg.mid + seg.half * self.t_nodes
            tau = self._tau(x[:, None], y[None, :])
            Tn = np.cos(n[None, :] * np.arccos(self.t_nodes)[:, None])
            block = block + seg.half * (np.pi / Q) * (tau @ Tn)
            cols.append(block)
        return np.concatenate(cols, axis=1)

    def apply(self, phi: RealDensity, x) -> np.ndarray:
        """T[phi](x) for x in A"""
        x = np.asarray(x, dtype=float)
        U = self._columns(x.ravel()) @ phi.coeffs.ravel()
        mean = np.sum(self.mean_w * (self._columns(self.mean_x) @ phi.coeffs.ravel())) / self.length
        return (-U + mean).reshape(x.shape)

    def invert(self, f: RealFunction, tol: float = 1e-6) -> RealDensity:
        """
        The zero-mass density phi with T[phi] = f - <f>_A.

        Collocation at the Chebyshev points of every segment plus the mass
        condition; the free constant absorbs the mean of f.

        Raises:
            NotInImageError: the reconstruction misses f by more than tol
        """
        m = self.degree + 1
        segs = self.domain.segments
        x = np.concatenate([s.mid + s.half * chebpts1(m) for s in segs])
        size = len(segs) * m
        A = np.zeros((size + 1, size + 1))
        A[:size, :size] = -self._columns(x)
        A[:size, size] = 1.0
        for h, seg in enumerate(segs):
            A[size, h * m] = np.pi * seg.half
        rhs = np.concatenate([np.asarray(f(x), dtype=float), [0.0]])
        sol = np.linalg.solve(A, rhs)
        phi = RealDensity(self.domain, sol[:size].reshape(len(segs), m))

        probe = np.concatenate([s.mid + s.half * np.linspace(-0.95, 0.95, 41) for s in segs])
        target = np.asarray(f(probe), dtype=float)
        target = target - np.sum(self.mean_w * np.asarray(f(self.mean_x), dtype=float)) / self.length
        scale = max(float(np.abs(target).max()), 1e-300)
        residual = float(np.abs(self.apply(phi, probe) - target).max()) / scale
        logger.debug(f"Real-line inversion residual {residual:.3e}")
        if residual > tol:
            raise NotInImageError("real-line inversion did not reproduce f", {"residual": residual, "tol": tol})
        return phi


def invert_T_real(op: RealLineOperator, f: RealFunction, tol: float = 1e-6) -> RealDensity:
    return op.invert(f, tol)
