"""Master operator of the linearized loop equations and its auxiliary operators."""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from loguru import logger

from beta_ensembles.core.errors import NumericalError
from beta_ensembles.equilibrium.solver import EquilibriumMeasure
from beta_ensembles.model.analytic import AnalyticFunction
from beta_ensembles.model.contours import ContourFamily, NodeSpace, circle_space
from beta_ensembles.model.polynomials import sqrt_sigma

Holomorphic = Callable[[np.ndarray], np.ndarray]

# Smallest admissible |M| on a contour relative to its maximum
M_FLOOR = 1e-8


@dataclass(frozen=True)
class LevelData:
    """Equilibrium quantities sampled on the nodes of one contour level"""

    space: NodeSpace
    W: np.ndarray
    force: np.ndarray
    M: np.ndarray
    s: np.ndarray
    hd: np.ndarray


class MasterOperator:
    """
    Discretized master operator K and the operators O, L, P, I, I^-1 around
    a solved equilibrium measure.

    Functions are AnalyticFunction objects tagged with the contour level they
    were sampled on. Every operator integrates over the level of its input
    and returns a function sampled on the next level outwards, so a chain of
    k applications consumes k levels of the family.
    """

    def __init__(self, eq: EquilibriumMeasure, family: Optional[ContourFamily] = None):
        self.eq = eq
        self.family = family or eq.family()
        self.beta = eq.beta
        self.r = eq.r
        self.edges = eq.layout.flat_edges
        self.sigma_hd = eq.sigma_hd
        self.hard = bool(eq.layout.hard_edges)
        self.g = self.family.size - 1
        self._levels: Dict[int, LevelData] = {}
        self.center, self.radius = self._residue_circle()
        self.circle = circle_space(self.center, self.radius, self.family.nodes)
        self._circle_s = self.s(self.circle.x)
        self._check_M()
        logger.debug(f"Master operator on {self.g + 1} cut(s), residue circle radius {self.radius:.4g}")

    # -- sampled data ------------------------------------------------------

    def _residue_circle(self) -> Tuple[float, float]:
        fam = self.family
        lo = float(np.min(fam.mids - fam.halves))
        hi = float(np.max(fam.mids + fam.halves))
        center = 0.5 * (lo + hi)
        reach = np.abs(fam.mids - center) + 0.5 * fam.halves * (fam.caps + 1.0 / fam.caps)
        return center, 1.2 * float(reach.max())

    def _check_M(self) -> None:
        for lvl in sorted({0, self.family.i_max // 2, self.family.i_max}):
            mags = np.abs(self.level(lvl).M)
            if mags.min() < M_FLOOR * mags.max():
                raise NumericalError(
                    "M vanishes near the contour family",
                    {"level": lvl, "min": float(mags.min()), "max": float(mags.max())},
                )

    def level(self, i: int) -> LevelData:
        if i not in self._levels:
            space = self.family.space(i)
            x = space.x
            self._levels[i] = LevelData(
                space=space,
                W=self.eq.W(x),
                force=self.eq.force(x),
                M=self.eq.M(x),
                s=self.s(x),
                hd=self.sigma_hd(x),
            )
        return self._levels[i]

    def s(self, x) -> np.ndarray:
        """sigma_S^{1/2}, cut on the support and ~ x^{g+1} at infinity"""
        return sqrt_sigma(x, self.edges)

    def pair_derivative(self, x, y) -> np.ndarray:
        """d/dx K_2(x, y), K_2 the two-body reduction of T against mu_eq"""
        return self.eq.potential.two_body(x, y, self.eq.measure, derivative=True)

    def _cauchy(
        self, values: np.ndarray, space: NodeSpace, out: int, divide: Optional[Holomorphic] = None
    ) -> AnalyticFunction:
        """oint g(xi)/(x - xi) dxi/(2 i pi) over `space`, optionally divided by a function of x"""
        coeffs = self.family.projector(space) @ values
        f = AnalyticFunction.from_coeffs(self.family, coeffs, level=out)
        if divide is None:
            return f
        target = self.family.space(out)
        return AnalyticFunction.from_samples(self.family, target, f(target.x) / divide(target.x), level=out)

    def _on(self, phi: AnalyticFunction) -> Tuple[LevelData, np.ndarray]:
        data = self.level(phi.level)
        return data, phi(data.space.x)

    # -- operators ---------------------------------------------------------

    def op_O(self, phi: AnalyticFunction) -> Holomorphic:
        """
        O[phi](x) = (2/beta) oint phi(xi) d/dx K_2(x, xi) dxi/(2 i pi).

        The result is holomorphic near A, not decaying, so it is returned as
        a callable rather than a Laurent series. Empty for r = 1.
        """
        if self.r == 1:
            return lambda x: np.zeros(np.shape(x), dtype=complex)
        data, values = self._on(phi)
        weighted = data.space.weights * values
        nodes = data.space.x

        def evaluate(x) -> np.ndarray:
            x = np.asarray(x, dtype=complex)
            D = self.pair_derivative(x.ravel()[:, None], nodes[None, :])
            return (2.0 / self.beta) * (D @ weighted).reshape(x.shape)

        return evaluate

    def op_L(self, phi: AnalyticFunction) -> AnalyticFunction:
        data, _ = self._on(phi)
        g = data.s * self.op_O(phi)(data.space.x) / 2.0
        return self._cauchy(g, data.space, phi.level + 1, divide=self.s)

    def polynomial_part(self, phi: AnalyticFunction) -> np.ndarray:
        """Coefficients F_n of the polynomial part of sigma_S^{1/2} phi in powers of (x - center)"""
        values = self._circle_s * phi(self.circle.x)
        shifted = self.circle.x - self.center
        return np.array([np.sum(self.circle.weights * values * shifted ** (-n - 1)) for n in range(self.g + 2)])

    def op_P(self, phi: AnalyticFunction) -> AnalyticFunction:
        """P[phi] = Pol(sigma_S^{1/2} phi) / sigma_S^{1/2}"""
        F = self.polynomial_part(phi)
        out = phi.level + 1
        target = self.family.space(out)
        poly = np.polynomial.polynomial.polyval(target.x - self.center, F)
        return AnalyticFunction.from_samples(self.family, target, poly / self.s(target.x), level=out)

    def op_I(self, psi: AnalyticFunction) -> AnalyticFunction:
        data, values = self._on(psi)
        return self._cauchy(data.hd * values / data.M, data.space, psi.level + 1)

    def op_I_inv(self, phi: AnalyticFunction) -> AnalyticFunction:
        data, values = self._on(phi)
        return self._cauchy(data.M * values / data.hd, data.space, phi.level + 1)

    def op_K(self, phi: AnalyticFunction) -> AnalyticFunction:
        """
        K[phi](x) = oint sigma_hd(xi)/sigma_hd(x) {(2W - V') phi + W O[phi]}(xi) / (x - xi) dxi/(2 i pi)
        """
        data, values = self._on(phi)
        g = data.hd * ((2 * data.W - data.force) * values + data.W * self.op_O(phi)(data.space.x))
        return self._cauchy(g, data.space, phi.level + 1, divide=self.sigma_hd if self.hard else None)

    def period_map(self, phi: AnalyticFunction) -> np.ndarray:
        return phi.period_map()

    # -- Nystrom kernels on one level --------------------------------------

    def L_matrix(self, level: int) -> np.ndarray:
        """
        Kernel of L on the nodes of `level` times the node weights, the inner
        xi-integral taken on the level below.
        """
        if level < 1:
            raise ValueError("the L kernel needs an inner contour: level must be >= 1")
        outer = self.level(level)
        if self.r == 1:
            return np.zeros((outer.space.size, outer.space.size), dtype=complex)
        inner = self.level(level - 1)
        x, xi = outer.space.x, inner.space.x
        C = (inner.space.weights * inner.s)[None, :] / (x[:, None] - xi[None, :])
        D = self.pair_derivative(xi[:, None], x[None, :]) / self.beta
        return (C @ D) / outer.s[:, None] * outer.space.weights[None, :]

    def P_matrix(self, level: int) -> np.ndarray:
        """Kernel of P on the nodes of `level` times the node weights (rank g+1)"""
        data = self.level(level)
        y = data.space.x
        xi = self.circle.x
        shifted = xi - self.center
        n = np.arange(self.g + 2)
        C = (self.circle.weights * self._circle_s)[None, :, None] * shifted[None, :, None] ** (-n[:, None, None] - 1)
        C = (C / (xi[None, :, None] - y[None, None, :])).sum(axis=1)
        powers = (y - self.center)[:, None] ** n[None, :]
        return (powers @ C) / data.s[:, None] * data.space.weights[None, :]

    def p_basis(self, level: int) -> Tuple[np.ndarray, float]:
        """
        Coefficients B[n, k] of the polynomials p_k(x) = sum_n B[n, k] (x - center)^n
        with oint_{Gamma_h} p_k / sigma_S^{1/2} = delta_hk, and the condition
        number of that period system.
        """
        data = self.level(level)
        shifted = data.space.x - self.center
        A = np.empty((self.g + 1, self.g + 1), dtype=complex)
        for h in range(self.g + 1):
            part = data.space.slice(h)
            for n in range(self.g + 1):
                A[h, n] = np.sum(data.space.weights[part] * shifted[part] ** n / data.s[part])
        cond = float(np.linalg.cond(A))
        if cond > 1e10:
            logger.warning(f"Ill-conditioned period system for the p_k polynomials: cond {cond:.3e}")
        return np.linalg.inv(A), cond

    # -- checks ------------------------------------------------------------

    def factorization_residual(self, phi: AnalyticFunction) -> float:
        """
        sup |(id + L - P)[phi] - sigma_S^{-1/2} I[K[phi]]| on the contour two
        levels out, relative to sup |phi| on the input contour.
        """
        out = phi.level + 2
        x = self.family.space(out).x
        lhs = phi(x) + self.op_L(phi)(x) - self.op_P(phi)(x)
        rhs = self.op_I(self.op_K(phi))(x) / self.s(x)
        scale = np.abs(phi(self.family.space(phi.level).x)).max()
        return float(np.abs(lhs - rhs).max() / max(scale, 1e-300))

    def projector_defect(self, level: int = 1) -> Tuple[float, int]:
        """(||P^2 - P||, numerical rank of P) of the Nystrom projector"""
        P = self.P_matrix(level)
        defect = float(np.linalg.norm(P @ P - P, 2) / max(np.linalg.norm(P, 2), 1e-300))
        sv = np.linalg.svd(P, compute_uv=False)
        rank = int(np.sum(sv > 1e-10 * sv[0]))
        return defect, rank
