from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from beta_ensembles.core.errors import EvaluationError
from beta_ensembles.model.contours import ContourFamily, NodeSpace

# Nodes per segment when a tensor is checked on its own contour level
LEVEL_NODES = 64
# Relative on-level size below which a coefficient is round-off
CHOP_TOL = 1e-14


def _contract(coeffs: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Apply mats[a] (rows x coefficient) along axis a of coeffs"""
    out = coeffs
    for axis, mat in enumerate(mats):
        out = np.moveaxis(np.tensordot(mat, out, axes=(1, axis)), 0, axis)
    return out


@dataclass(frozen=True, eq=False)
class LaurentTensor:
    """
    Function of n variables, holomorphic outside A in each of them and
    decaying at infinity, stored as Laurent coefficients.

    Along each axis the coefficient index runs over (segment h, k = 1..degree)
    for the basis z_h(x)^{-k}, where z_h is the inverse Joukowski variable
    of A_h. `level` is the contour level the function was sampled on; values
    on that contour and outside it are accurate to quadrature precision.
    """

    family: ContourFamily
    coeffs: np.ndarray
    degree: int
    level: int = 0
    decay: int = 1

    @property
    def arity(self) -> int:
        return self.coeffs.ndim

    def basis(self, x) -> np.ndarray:
        return self.family.basis(x, self.degree)

    def grid(self, *points) -> np.ndarray:
        """Values on the tensor grid points[0] x points[1] x ..."""
        if len(points) != self.arity:
            raise ValueError(f"expected {self.arity} point arrays")
        return _contract(self.coeffs, [self.basis(p) for p in points])

    def sample(self, space: NodeSpace) -> np.ndarray:
        """Values on the n-fold node grid of a node space"""
        return self.grid(*([space.x] * self.arity))

    def with_level(self, level: int) -> "LaurentTensor":
        return replace(self, level=level)

    def __add__(self, other: "LaurentTensor") -> "LaurentTensor":
        if self.degree != other.degree:
            raise ValueError("degree mismatch")
        return replace(
            self,
            coeffs=self.coeffs + other.coeffs,
            level=max(self.level, other.level),
            decay=min(self.decay, other.decay),
        )

    def scaled(self, factor: complex) -> "LaurentTensor":
        return replace(self, coeffs=self.coeffs * factor)

    def symmetrized(self) -> "LaurentTensor":
        from itertools import permutations

        perms = list(permutations(range(self.arity)))
        total = sum(np.transpose(self.coeffs, p) for p in perms)
        return replace(self, coeffs=total / len(perms))

    def slot_periods(self, axis: int = 0) -> np.ndarray:
        """Periods of every segment along one axis, other axes left as coefficients"""
        K = self.degree
        first = np.take(self.coeffs, [h * K for h in range(self.family.size)], axis=axis)
        scale = 0.5 * self.family.halves
        shape = [1] * self.arity
        shape[axis] = -1
        return first * scale.reshape(shape)

    def level_space(self, n: int = LEVEL_NODES) -> NodeSpace:
        """Coarse node space on the contour level the tensor was sampled on"""
        return self.family.space(self.level, min(n, self.family.nodes))

    def level_weights(self) -> np.ndarray:
        """|z_h|^-k on the tensor's own level: the size of every basis function there"""
        k = np.arange(1, self.degree + 1, dtype=float)
        return np.concatenate([r**-k for r in self.family.rho(self.level)])

    def sup_on_level(self) -> float:
        return float(np.abs(self.sample(self.level_space())).max(initial=0.0))

    def period_values(self, axis: int = 0) -> np.ndarray:
        """Slot periods along one axis with every other slot evaluated on the tensor's level"""
        periods = self.slot_periods(axis)
        E = self.basis(self.level_space().x)
        mats = [np.eye(periods.shape[a]) if a == axis else E for a in range(self.arity)]
        return _contract(periods, mats)

    def chopped(self, tol: float = CHOP_TOL) -> "LaurentTensor":
        """Zero the coefficients whose size on the tensor's level is below tol times the largest one"""
        sizes = np.abs(self.coeffs)
        weights = self.level_weights()
        for axis in range(self.arity):
            shape = [1] * self.arity
            shape[axis] = -1
            sizes = sizes * weights.reshape(shape)
        keep = sizes >= tol * sizes.max(initial=0.0)
        return replace(self, coeffs=np.where(keep, self.coeffs, 0.0))

    @classmethod
    def from_samples(
        cls,
        family: ContourFamily,
        space: NodeSpace,
        values: np.ndarray,
        level: Optional[int] = None,
        degree: Optional[int] = None,
        decay: int = 1,
    ) -> "LaurentTensor":
        """
        Exterior Cauchy projection of node-grid values along every axis.

        When the values are boundary values of a function holomorphic outside
        the contour and decaying, this recovers that function.
        """
        degree = degree or min(family.degree, space.n // 2 - 1)
        P = family.projector(space, degree)
        coeffs = _contract(np.asarray(values, dtype=complex), [P] * np.ndim(values))
        return cls(
            family=family,
            coeffs=coeffs,
            degree=degree,
            level=space.level if level is None else level,
            decay=decay,
        )

    @classmethod
    def zeros(cls, family: ContourFamily, arity: int, degree: Optional[int] = None, level: int = 0) -> "LaurentTensor":
        degree = degree or family.degree
        shape = (family.size * degree,) * arity
        return cls(family=family, coeffs=np.zeros(shape, dtype=complex), degree=degree, level=level, decay=2)

    def is_zero(self) -> bool:
        return not np.any(self.coeffs)


class AnalyticFunction(LaurentTensor):
    """
    Single-variable member of H^m(A): holomorphic on C minus A, O(x^-m) at infinity.
    """

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        return (self.basis(x.ravel()) @ self.coeffs).reshape(x.shape)

    def derivative(self, x, order: int = 1) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        D = self.family.basis_derivative(x.ravel(), self.degree, order)
        return (D @ self.coeffs).reshape(x.shape)

    def node_values(self, space: Optional[NodeSpace] = None) -> np.ndarray:
        space = space or self.family.space(self.level)
        return self(space.x)

    def period_map(self) -> np.ndarray:
        """Pi[phi]_h = oint_{A_h} phi dxi / (2 i pi), the 1/x coefficient of each segment"""
        return self.slot_periods(0)

    def leading(self) -> complex:
        """Coefficient of 1/x at infinity"""
        return complex(np.sum(self.period_map()))

    def check_decay(self, tol: float = 1e-8) -> bool:
        """Members of H^2 have no 1/x term; every stored function is O(1/x)"""
        if self.decay < 2:
            return True
        scale = np.abs(self.coeffs).max(initial=0.0) * self.family.halves.max()
        return abs(self.leading()) <= tol * max(scale, 1.0)

    @classmethod
    def from_callable(
        cls,
        family: ContourFamily,
        func: Callable[[np.ndarray], np.ndarray],
        level: int = 0,
        n: Optional[int] = None,
        decay: int = 1,
    ) -> "AnalyticFunction":
        """Sample func on a contour level and keep its exterior part"""
        space = family.space(level, n)
        values = np.asarray(func(space.x), dtype=complex)
        if not np.all(np.isfinite(values)):
            raise EvaluationError("function is not finite on the contour", {"level": level})
        base = LaurentTensor.from_samples(family, space, values, decay=decay)
        return cls(family=family, coeffs=base.coeffs, degree=base.degree, level=level, decay=decay)

    @classmethod
    def from_coeffs(
        cls, family: ContourFamily, coeffs: np.ndarray, level: int = 0, decay: int = 1
    ) -> "AnalyticFunction":
        coeffs = np.asarray(coeffs, dtype=complex)
        return cls(family=family, coeffs=coeffs, degree=coeffs.size // family.size, level=level, decay=decay)

    @classmethod
    def from_samples(cls, family, space, values, level=None, degree=None, decay=1) -> "AnalyticFunction":
        base = LaurentTensor.from_samples(family, space, values, level, degree, decay)
        return cls(family=family, coeffs=base.coeffs, degree=base.degree, level=base.level, decay=decay)


def as_function(tensor: LaurentTensor) -> AnalyticFunction:
    if tensor.arity != 1:
        raise ValueError("only single-slot tensors are functions of one variable")
    return AnalyticFunction(
        family=tensor.family,
        coeffs=tensor.coeffs,
        degree=tensor.degree,
        level=tensor.level,
        decay=tensor.decay,
    )
