"""Fredholm system id + N, the inverse of the master operator and filling-fraction derivatives."""

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from loguru import logger
from numpy.polynomial import Chebyshev
from numpy.polynomial.chebyshev import chebpts1
from scipy.linalg import lu_factor, lu_solve

from beta_ensembles.core.errors import NotInImageError, SingularSystemError
from beta_ensembles.model.analytic import AnalyticFunction, LaurentTensor
from beta_ensembles.model.polynomials import sqrt_sigma
from beta_ensembles.operators.master import MasterOperator

# Determinants below this mark the discretized system as non-invertible
DET_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class FredholmSystem:
    """
    Nystrom discretization of id + N on C^{g+1} + L^2(Gamma).

    The first g+1 unknowns are the scalar rows (one per period), the others
    the node values on contour `level`. `matrix` already carries the node
    weights, so the resolvent kernel is obtained by dividing its columns by
    `weights`.
    """

    level: int
    matrix: np.ndarray
    weights: np.ndarray
    p_coeffs: np.ndarray
    period_condition: float
    determinant: complex

    @property
    def rows(self) -> int:
        return self.p_coeffs.shape[0]

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def _lu(self):
        if not hasattr(self, "_lu_cache"):
            object.__setattr__(self, "_lu_cache", lu_factor(self.matrix))
        return self._lu_cache

    def solve(self, periods: Sequence[complex], values: np.ndarray) -> np.ndarray:
        rhs = np.concatenate([np.asarray(periods, dtype=complex), np.asarray(values, dtype=complex)])
        return lu_solve(self._lu(), rhs)

    def solve_many(self, values: np.ndarray) -> np.ndarray:
        """Columns of node values with vanishing periods, solved in one pass"""
        rhs = np.vstack([np.zeros((self.rows, values.shape[1]), dtype=complex), values])
        return lu_solve(self._lu(), rhs)

    def resolvent(self) -> np.ndarray:
        """Operator R = id - (id + N)^{-1} on the discretization"""
        return np.eye(self.size) - lu_solve(self._lu(), np.eye(self.size, dtype=complex))

    def resolvent_kernel(self) -> np.ndarray:
        return self.resolvent() / self.weights[None, :]

    def summary(self) -> Dict[str, float]:
        return {
            "level": self.level,
            "determinant_abs": float(abs(self.determinant)),
            "determinant_arg": float(np.angle(self.determinant)),
            "period_condition": self.period_condition,
            "matrix_condition": float(np.linalg.cond(self.matrix)),
        }


def build_fredholm(op: MasterOperator, level: int = 1) -> FredholmSystem:
    """
    Assemble id + N on the nodes of a contour level.

    Raises:
        SingularSystemError: the determinant is numerically zero
    """
    data = op.level(level)
    space = data.space
    rows = op.g + 1
    B, cond = op.p_basis(level)
    n = space.size

    N = np.zeros((rows + n, rows + n), dtype=complex)
    N[:rows, :rows] = -np.eye(rows)
    for h in range(rows):
        N[h, rows + h * space.n : rows + (h + 1) * space.n] = space.weights[space.slice(h)]
    shifted = space.x - op.center
    powers = shifted[:, None] ** np.arange(rows)[None, :]
    N[rows:, :rows] = (powers @ B) / data.s[:, None]
    N[rows:, rows:] = op.L_matrix(level) - op.P_matrix(level)
    matrix = np.eye(rows + n) + N

    sign, logabs = np.linalg.slogdet(matrix)
    determinant = complex(sign * np.exp(logabs))
    weights = np.concatenate([np.ones(rows), space.weights])
    system = FredholmSystem(
        level=level,
        matrix=matrix,
        weights=weights,
        p_coeffs=B,
        period_condition=cond,
        determinant=determinant,
    )
    logger.info(f"Fredholm system on level {level}: {n} nodes, det {determinant:.6g}, period cond {cond:.3g}")
    if abs(determinant) < DET_FLOOR:
        raise SingularSystemError("numerically non-invertible Fredholm system", system.summary())
    return system


def fredholm_series_det(kernel: np.ndarray, order: int = 6) -> complex:
    """
    det(id + K) from the Fredholm series sum_n (1/n!) int det[K(x_i, x_j)],
    truncated at `order`, for a Nystrom matrix K that already carries weights.

    Sums principal minors directly, so it is only usable on small matrices.
    """
    size = kernel.shape[0]
    total = 1.0 + 0.0j
    for n in range(1, min(order, size) + 1):
        for idx in combinations(range(size), n):
            total += np.linalg.det(kernel[np.ix_(idx, idx)])
    return complex(total)


@dataclass(frozen=True)
class Inversion:
    """Solution of K[phi] = psi with its diagnostics"""

    phi: AnalyticFunction
    residual: float
    continuity: float


class MasterInverse:
    """
    Inverse of the master operator on functions with vanishing periods,
    through the factorization (id + L - P) = sigma_S^{-1/2} I K.

    Fredholm systems are built lazily, one per contour level.
    """

    def __init__(self, op: MasterOperator, tol: Optional[float] = None):
        self.op = op
        self.tol = tol if tol is not None else op.eq.config.numerics.tol_inv
        self._systems: Dict[int, FredholmSystem] = {}

    def system(self, level: int) -> FredholmSystem:
        if level not in self._systems:
            self._systems[level] = build_fredholm(self.op, level)
        return self._systems[level]

    def _function(self, level: int, solution: np.ndarray) -> AnalyticFunction:
        space = self.op.family.space(level)
        return AnalyticFunction.from_samples(self.op.family, space, solution[self.op.g + 1 :], level=level)

    def solve(self, psi: AnalyticFunction, check: bool = True) -> Inversion:
        """
        The unique phi in H^2_0 with K[phi] = psi, sampled one level outside psi.

        Raises:
            NotInImageError: the reconstruction K[phi] misses psi by more than tol
        """
        op = self.op
        level = psi.level + 1
        space = op.family.space(level)
        rhs = op.op_I(psi)(space.x) / op.level(level).s
        system = self.system(level)
        solution = system.solve(np.zeros(op.g + 1), rhs)
        phi = self._function(level, solution)

        inner = op.family.space(psi.level).x
        psi_norm = float(np.abs(psi(inner)).max())
        phi_norm = float(np.abs(phi(space.x)).max())
        continuity = phi_norm / psi_norm if psi_norm > 0 else 0.0
        residual = 0.0
        if check and psi_norm > 0:
            probe = op.family.space(level + 1).x
            residual = float(np.abs(op.op_K(phi)(probe) - psi(probe)).max() / psi_norm)
            if residual > self.tol:
                raise NotInImageError(
                    "source is not in the image of the master operator",
                    {"residual": residual, "tol": self.tol, "level": level},
                )
        logger.debug(f"Inverted K on level {level}: residual {residual:.3e}, continuity {continuity:.3g}")
        return Inversion(phi=phi, residual=residual, continuity=continuity)

    def solve_tensor(self, psi: LaurentTensor, check: bool = True, probes: int = 3) -> LaurentTensor:
        """
        K^-1 along axis 0 of a tensor whose other axes are external variables
        in coefficient form. The solution is sampled one level outside psi
        and keeps psi's degree.

        Raises:
            NotInImageError: one of the largest columns is not reproduced within tol
        """
        op = self.op
        fam = op.family
        level = psi.level + 1
        inner = fam.space(psi.level)
        space = fam.space(level)
        data = op.level(psi.level)
        cols = psi.coeffs.reshape(psi.coeffs.shape[0], -1)
        values = fam.basis(inner.x, psi.degree) @ cols
        rhs = fam.basis(space.x) @ (fam.projector(inner) @ ((data.hd / data.M)[:, None] * values))
        rhs = rhs / op.level(level).s[:, None]
        solution = self.system(level).solve_many(rhs)[op.g + 1 :]
        coeffs = fam.projector(space, psi.degree) @ solution
        phi = LaurentTensor(fam, coeffs.reshape(psi.coeffs.shape), psi.degree, level=level)

        if check:
            norms = np.abs(values).max(axis=0)
            scale = float(norms.max()) if norms.size else 0.0
            probe = fam.space(level + 1).x
            worst = 0.0
            for j in np.argsort(norms)[::-1][:probes]:
                if norms[j] <= 1e-14 * max(scale, 1e-300):
                    continue
                psi_j = AnalyticFunction.from_coeffs(fam, cols[:, j], level=psi.level)
                phi_j = AnalyticFunction.from_coeffs(fam, coeffs[:, j], level=level)
                residual = float(np.abs(op.op_K(phi_j)(probe) - psi_j(probe)).max() / norms[j])
                worst = max(worst, residual)
            if worst > self.tol:
                raise NotInImageError(
                    "source is not in the image of the master operator",
                    {"residual": worst, "tol": self.tol, "level": level, "columns": int(cols.shape[1])},
                )
            logger.debug(f"Inverted K on {cols.shape[1]} column(s) at level {level}: residual {worst:.3e}")
        return phi

    def mass_derivative(self, eta: Sequence[float], level: int = 1) -> AnalyticFunction:
        """
        phi_eta with K[phi_eta] in Ker I and periods eta: the derivative of
        W_eq along a change eta of the filling fractions.
        """
        eta = np.asarray(eta, dtype=float)
        if eta.size != self.op.g + 1:
            raise ValueError(f"expected {self.op.g + 1} periods, got {eta.size}")
        if abs(eta.sum()) > 1e-12:
            raise ValueError("filling-fraction variations must sum to zero")
        space = self.op.family.space(level)
        solution = self.system(level).solve(eta, np.zeros(space.size))
        return self._function(level, solution)

    def mass_density(self, phi: AnalyticFunction) -> Callable[[np.ndarray], np.ndarray]:
        """
        Density of nu = (phi_- - phi_+) dx / (2 i pi) on the support for phi
        with phi = (P - L)[phi]:
            nu(x) = -(Pol(x) - J(x)) / (i pi sigma_S+^{1/2}(x)),
        J(x) = oint sigma_S^{1/2} O[phi] / (2 (x - xi)) taken on phi's contour.
        """
        op = self.op
        F = op.polynomial_part(phi)
        data = op.level(phi.level)
        g = data.space.weights * data.s * op.op_O(phi)(data.space.x) / 2.0
        nodes = data.space.x

        def density(x) -> np.ndarray:
            x = np.asarray(x, dtype=float)
            flat = x.ravel()
            J = (g[None, :] / (flat[:, None] - nodes[None, :])).sum(axis=1)
            pol = np.polynomial.polynomial.polyval(flat - op.center, F)
            splus = sqrt_sigma(flat + 0j, op.edges)
            return np.real(-(pol - J) / (1j * np.pi * splus)).reshape(x.shape)

        return density

    def kernel_check(self, phi: AnalyticFunction, points: int = 24) -> float:
        """
        Residual of beta PV int nu/(x - xi) + int d/dx K_2(x, xi) dnu(xi) = 0
        on the interior of the support, for phi in the kernel of I K.

        Each cut's density is written sum_n d_n T_n(t)/sqrt(1 - t^2), which
        makes the principal value exact: PV int T_n/(sqrt(1-t^2)(t_x - t)) = -pi U_{n-1}(t_x).
        """
        op = self.op
        nu = self.mass_density(phi)
        degree = 64
        t_nodes = chebpts1(4 * degree)
        cuts = []
        for lo, hi in op.eq.edges:
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            smooth = Chebyshev.interpolate(lambda t: nu(mid + half * t) * np.sqrt(1 - t**2), degree)
            cuts.append((mid, half, smooth))

        worst, scale = 0.0, 0.0
        for j, (mid, half, smooth) in enumerate(cuts):
            t_x = chebpts1(points)
            x = mid + half * t_x
            d = smooth.coef
            own = -np.pi * sum(d[n] * _cheb_u(n - 1, t_x) for n in range(1, len(d)))
            pv = own.copy()
            coupling = np.zeros(points, dtype=complex)
            for k, (mid_k, half_k, smooth_k) in enumerate(cuts):
                xi = mid_k + half_k * t_nodes
                v = smooth_k(t_nodes)
                if k != j:
                    pv += (np.pi / t_nodes.size) * (v[None, :] / ((x[:, None] - xi[None, :]) / half_k)).sum(axis=1)
                if op.r >= 2:
                    D = op.pair_derivative(x[:, None] + 0j, xi[None, :] + 0j)
                    coupling += half_k * (np.pi / t_nodes.size) * (D @ v)
            lhs = op.beta * pv + coupling.real
            worst = max(worst, float(np.abs(lhs).max()))
            # scale by the self term of each cut
            scale = max(scale, float(np.abs(op.beta * own).max()), float(np.abs(coupling).max()))
        return worst / scale if scale > 0 else worst


def _cheb_u(n: int, t: np.ndarray) -> np.ndarray:
    """Chebyshev polynomial of the second kind U_n on [-1, 1]"""
    theta = np.arccos(np.clip(t, -1.0, 1.0))
    return np.sin((n + 1) * theta) / np.sin(theta)


def invert_K(inverse: MasterInverse, psi: AnalyticFunction) -> AnalyticFunction:
    return inverse.solve(psi).phi
