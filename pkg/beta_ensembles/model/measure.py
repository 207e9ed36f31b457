from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Chebyshev
from scipy.optimize import brentq
from scipy.special import roots_jacobi

from beta_ensembles.core.errors import EvaluationError
from beta_ensembles.model.contours import inverse_joukowski
from beta_ensembles.model.models import Domain

# Exponents allowed at an endpoint: hard edge, uniform, soft edge
EXPONENTS = (-0.5, 0.0, 0.5)


@dataclass(frozen=True, eq=False)
class CutProfile:
    """
    Density m(x) (hi - x)^a_hi (x - lo)^a_lo on one cut [lo, hi].

    `smooth` is the analytic factor m as a Chebyshev series on [lo, hi].
    Exponents are -1/2 at a hard edge and +1/2 at a soft edge; 0 on both
    sides is reserved for constant (uniform) densities.
    """

    lo: float
    hi: float
    a_lo: float
    a_hi: float
    smooth: Chebyshev

    def __post_init__(self):
        if self.a_lo not in EXPONENTS or self.a_hi not in EXPONENTS:
            raise ValueError("edge exponents must be -1/2, 0 or 1/2")
        if (self.a_lo == 0.0) != (self.a_hi == 0.0):
            raise ValueError("exponent 0 must be used on both sides")
        if self.uniform and self.smooth.degree() > 0:
            raise ValueError("exponent 0 is only supported for constant densities")

    @property
    def uniform(self) -> bool:
        return self.a_lo == 0.0

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def half(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = (x > self.lo) & (x < self.hi)
        xs = np.where(inside, x, self.mid)
        vals = self.smooth(xs) * (self.hi - xs) ** self.a_hi * (xs - self.lo) ** self.a_lo
        return np.where(inside, vals, 0.0)

    @cached_property
    def profile(self) -> np.ndarray:
        """Chebyshev coefficients c_n of f(t) = rho(mid + half t) sqrt(1 - t^2)"""
        if self.uniform:
            raise ValueError("uniform cuts have no Chebyshev profile")
        scale = self.half ** (self.a_lo + self.a_hi)

        def f(t):
            weight = (1 - t) ** (self.a_hi + 0.5) * (1 + t) ** (self.a_lo + 0.5)
            return self.smooth(self.mid + self.half * t) * scale * weight

        deg = max(self.smooth.degree() + 2, 8)
        return Chebyshev.interpolate(f, deg).coef

    @property
    def mass(self) -> float:
        if self.uniform:
            return float(self.smooth.coef[0]) * (self.hi - self.lo)
        return float(self.half * np.pi * self.profile[0])

    def quadrature(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Gauss-Jacobi nodes and density-weighted weights"""
        t, w = roots_jacobi(n, self.a_hi, self.a_lo)
        x = self.mid + self.half * t
        scale = self.half ** (1 + self.a_lo + self.a_hi)
        return x, w * scale * self.smooth(x)

    def log_potential(self, x) -> np.ndarray:
        """int ln|x - xi| rho(xi) dxi for real x, exact for the Chebyshev profile"""
        x = np.asarray(x, dtype=float)
        if self.uniform:
            c = float(self.smooth.coef[0])

            def anti(s):
                s = np.asarray(s, dtype=float)
                safe = np.where(s == 0, 1.0, np.abs(s))
                return np.where(s == 0, 0.0, s * np.log(safe) - s)

            return c * (anti(self.hi - x) - anti(self.lo - x))
        c = self.profile
        z = inverse_joukowski(x, self.mid, self.half)
        n = np.arange(1, len(c))
        tail = (c[1:] * np.real(z[..., None] ** (-n)) / n).sum(axis=-1)
        inner = np.pi * c[0] * np.log(np.abs(z) / 2.0) - np.pi * tail
        return self.mass * np.log(self.half) + self.half * inner

    def cdf(self, x) -> np.ndarray:
        """mu([lo, x]) on this cut"""
        x = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        if self.uniform:
            return float(self.smooth.coef[0]) * (x - self.lo)
        theta = np.arccos(np.clip((x - self.mid) / self.half, -1.0, 1.0))
        c = self.profile
        n = np.arange(1, len(c))
        tail = (c[1:] * np.sin(np.multiply.outer(theta, n)) / n).sum(axis=-1)
        return self.half * (c[0] * (np.pi - theta) - tail)

    def scaled(self, factor: float) -> "CutProfile":
        return replace(self, smooth=self.smooth * factor)


def uniform_cut(lo: float, hi: float, mass: float) -> CutProfile:
    return CutProfile(lo, hi, 0.0, 0.0, Chebyshev([mass / (hi - lo)], domain=[lo, hi]))


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """
    Quadrature representation of a measure on a union of cuts.

    Nodes are Gauss-Jacobi points of every cut, with exponent -1/2 at hard
    edges so that inverse square-root singularities are integrated exactly.
    """

    cuts: Tuple[CutProfile, ...]
    n: int = 64

    @cached_property
    def _rule(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        xs, ws, segs = [], [], []
        for h, cut in enumerate(self.cuts):
            x, w = cut.quadrature(self.n)
            xs.append(x)
            ws.append(w)
            segs.append(np.full(self.n, h))
        if not xs:
            return np.zeros(0), np.zeros(0), np.zeros(0, dtype=int)
        return np.concatenate(xs), np.concatenate(ws), np.concatenate(segs)

    @property
    def nodes(self) -> np.ndarray:
        return self._rule[0]

    @property
    def weights(self) -> np.ndarray:
        return self._rule[1]

    @property
    def segment(self) -> np.ndarray:
        return self._rule[2]

    @property
    def density(self) -> np.ndarray:
        return np.concatenate([cut.density(self.nodes[self.segment == h]) for h, cut in enumerate(self.cuts)])

    @property
    def masses(self) -> np.ndarray:
        return np.array([cut.mass for cut in self.cuts])

    @property
    def mass(self) -> float:
        return float(self.masses.sum())

    def density_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return sum((cut.density(x) for cut in self.cuts), np.zeros(x.shape))

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> complex:
        return np.sum(self.weights * f(self.nodes))

    def log_potential(self, x) -> np.ndarray:
        """U(x) = int ln|x - xi| dmu(xi)"""
        x = np.asarray(x, dtype=float)
        return sum((cut.log_potential(x) for cut in self.cuts), np.zeros(x.shape))

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return sum((cut.cdf(x) for cut in self.cuts), np.zeros(x.shape))

    def quantiles(self, N: int) -> np.ndarray:
        """lambda_i = inf{x : mu((-inf, x]) >= i/N}, i = 1..N, for a probability measure"""
        lo, hi = self.cuts[0].lo, self.cuts[-1].hi
        out = np.empty(N)
        for i in range(1, N + 1):
            target = i / N
            if target >= self.mass - 1e-14:
                out[i - 1] = hi
                continue
            x = brentq(lambda s: float(self.cdf(s)) - target, lo, hi, xtol=1e-14)
            if not any(c.lo <= x <= c.hi for c in self.cuts):
                # flat stretch between cuts, the infimum is the end of the cut below
                x = max(c.hi for c in self.cuts if c.hi <= x)
            out[i - 1] = x
        return out

    def scaled(self, factor: float) -> "GridMeasure":
        return replace(self, cuts=tuple(c.scaled(factor) for c in self.cuts))

    @classmethod
    def uniform(cls, domain: Domain, masses: Optional[Sequence[float]] = None, n: int = 64) -> "GridMeasure":
        """Normalized Lebesgue measure on each segment with the given masses"""
        if masses is None:
            lengths = np.array([s.hi - s.lo for s in domain.segments])
            masses = lengths / lengths.sum()
        cuts = [uniform_cut(s.lo, s.hi, m) for s, m in zip(domain.segments, masses)]
        return cls(cuts=tuple(cuts), n=n)

    @classmethod
    def zero(cls) -> "GridMeasure":
        return cls(cuts=())


def stieltjes(mu: GridMeasure, x, resolution: Optional[float] = None) -> np.ndarray:
    """
    W(x) = int dmu(xi)/(x - xi) by quadrature on the measure's nodes.

    Raises:
        EvaluationError: x lies within `resolution` of a cut, by default the
            largest node spacing of that cut
    """
    x = np.asarray(x, dtype=complex)
    if not mu.cuts:
        return np.zeros(x.shape, dtype=complex)
    for h, cut in enumerate(mu.cuts):
        nodes = mu.nodes[mu.segment == h]
        spacing = float(np.diff(nodes).max()) if nodes.size > 1 else cut.half
        limit = resolution if resolution is not None else spacing
        dist = np.hypot(np.maximum(0.0, np.maximum(cut.lo - x.real, x.real - cut.hi)), x.imag)
        if np.any(dist < limit):
            raise EvaluationError(
                "evaluation point too close to the support",
                {"distance": float(dist.min()), "resolution": limit, "cut": h},
            )
    flat = x.ravel()
    vals = (mu.weights[None, :] / (flat[:, None] - mu.nodes[None, :])).sum(axis=1)
    return vals.reshape(x.shape)


def chebyshev_fit(func: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, degree: int) -> Chebyshev:
    """Chebyshev interpolant of func on [lo, hi]"""
    return Chebyshev.interpolate(func, degree, domain=[lo, hi])


def merge_cuts(parts: List[CutProfile], n: int) -> GridMeasure:
    return GridMeasure(cuts=tuple(sorted(parts, key=lambda c: c.lo)), n=n)
