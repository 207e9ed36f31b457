from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import List, Optional, Tuple

import numpy as np
from loguru import logger

from beta_ensembles.core.errors import ContourExhausted, EvaluationError
from beta_ensembles.model.models import Domain

# Largest Bernstein parameter used when Omega imposes no bound
RHO_CEILING = 3.0


@dataclass(frozen=True)
class Region:
    """
    Analyticity neighbourhood Omega of a potential.

    `strip` bounds |Im z|, `re_min` and `re_max` bound Re z; None means no
    constraint of that kind.
    """

    strip: Optional[float] = None
    re_min: Optional[float] = None
    re_max: Optional[float] = None

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        inside = np.ones(z.shape, dtype=bool)
        if self.strip is not None:
            inside &= np.abs(z.imag) < self.strip
        if self.re_min is not None:
            inside &= z.real > self.re_min
        if self.re_max is not None:
            inside &= z.real < self.re_max
        return inside

    def intersect(self, other: "Region") -> "Region":
        strips = [s for s in (self.strip, other.strip) if s is not None]
        mins = [m for m in (self.re_min, other.re_min) if m is not None]
        maxs = [m for m in (self.re_max, other.re_max) if m is not None]
        return Region(
            min(strips) if strips else None,
            max(mins) if mins else None,
            min(maxs) if maxs else None,
        )


def joukowski(w, mid: float, half: float):
    return mid + half * (w + 1.0 / w) / 2.0


def inverse_joukowski(x, mid: float, half: float) -> np.ndarray:
    """Branch of z with x = mid + half (z + 1/z)/2 and |z| >= 1, cut on the segment"""
    u = (np.asarray(x, dtype=complex) - mid) / half
    return u + np.sqrt(u - 1.0) * np.sqrt(u + 1.0)


def bernstein_limit(mid: float, half: float, region: Region) -> float:
    """Largest rho whose ellipse around [mid-half, mid+half] stays inside the region"""
    rho = RHO_CEILING
    if region.strip is not None:
        t = 2.0 * region.strip / half
        rho = min(rho, (t + np.sqrt(t * t + 4.0)) / 2.0)
    if region.re_min is not None:
        s = 2.0 * (mid - region.re_min) / half
        if s <= 2.0:
            raise EvaluationError(
                "segment touches the boundary of the analyticity region",
                {"segment": [mid - half, mid + half], "re_min": region.re_min},
            )
        rho = min(rho, (s + np.sqrt(s * s - 4.0)) / 2.0)
    if region.re_max is not None:
        s = 2.0 * (region.re_max - mid) / half
        if s <= 2.0:
            raise EvaluationError(
                "segment touches the boundary of the analyticity region",
                {"segment": [mid - half, mid + half], "re_max": region.re_max},
            )
        rho = min(rho, (s + np.sqrt(s * s - 4.0)) / 2.0)
    return rho


@dataclass(frozen=True)
class NodeSpace:
    """
    Trapezoid nodes of one contour level at one resolution.

    Arrays are segment-major: the nodes of segment h occupy
    slice(h * n, (h + 1) * n). `weights` integrate f(xi) dxi / (2 i pi).
    """

    level: int
    n: int
    x: np.ndarray
    w: np.ndarray
    weights: np.ndarray
    segment: np.ndarray
    rho: Tuple[float, ...]

    @property
    def size(self) -> int:
        return self.x.size

    def slice(self, h: int) -> slice:
        return slice(h * self.n, (h + 1) * self.n)


class ContourFamily:
    """
    Nested Bernstein ellipses Gamma_h[i] around every segment of a domain.

    Level i of segment h has parameter
        rho_h[i] = 1 + (cap_h - 1) (1 - exp(-0.25 (i + 1) / (cap_h - 1)))
    which follows 1 + 0.25 (i + 1) for small i and saturates below
    cap_h = 1 + 0.9 (rho_max_h - 1); rho_max_h keeps the ellipses inside
    Omega and pairwise disjoint.
    """

    def __init__(
        self,
        domain: Domain,
        region: Region = Region(),
        nodes: int = 256,
        degree: int = 127,
        i_max: int = 40,
    ):
        self.domain = domain
        self.region = region
        self.nodes = nodes
        self.degree = min(degree, nodes // 2 - 1)
        self.i_max = i_max
        self.mids = np.array([seg.mid for seg in domain.segments])
        self.halves = np.array([seg.half for seg in domain.segments])
        self.caps = self._caps()
        logger.debug(f"Contour caps {np.round(self.caps, 4).tolist()} for {domain.g + 1} segment(s)")

    def _caps(self) -> np.ndarray:
        segs = self.domain.segments
        caps = []
        for h, seg in enumerate(segs):
            rho = bernstein_limit(seg.mid, seg.half, self.region)
            for other in (h - 1, h + 1):
                if 0 <= other < len(segs):
                    gap = segs[other].lo - seg.hi if other > h else seg.lo - segs[other].hi
                    s = 2.0 + 0.9 * gap / seg.half
                    rho = min(rho, (s + np.sqrt(s * s - 4.0)) / 2.0)
            caps.append(1.0 + 0.9 * (rho - 1.0))
        return np.array(caps)

    @property
    def size(self) -> int:
        return len(self.mids)

    def rho(self, level: int) -> np.ndarray:
        if level < 0:
            raise ValueError("contour levels start at 0")
        if level > self.i_max:
            raise ContourExhausted(
                f"contour level {level} exceeds i_max={self.i_max}",
                {"level": level, "i_max": self.i_max},
            )
        span = self.caps - 1.0
        return 1.0 + span * (1.0 - np.exp(-0.25 * (level + 1) / span))

    def space(self, level: int, n: Optional[int] = None) -> NodeSpace:
        return _build_space(self, level, n or self.nodes)

    def z(self, x, h: int) -> np.ndarray:
        return inverse_joukowski(x, self.mids[h], self.halves[h])

    def basis(self, x, degree: Optional[int] = None) -> np.ndarray:
        """
        Matrix E[p, (h, k)] = z_h(x_p)^{-k}, k = 1..degree, segment-major columns.
        """
        degree = degree or self.degree
        x = np.asarray(x, dtype=complex).ravel()
        k = np.arange(1, degree + 1)
        cols = [self.z(x, h)[:, None] ** (-k) for h in range(self.size)]
        return np.concatenate(cols, axis=1)

    def basis_derivative(self, x, degree: Optional[int] = None, order: int = 1) -> np.ndarray:
        """d/dx or d^2/dx^2 of the basis functions z_h(x)^{-k}"""
        degree = degree or self.degree
        x = np.asarray(x, dtype=complex).ravel()
        k = np.arange(1, degree + 1)
        cols = []
        for h in range(self.size):
            L = self.halves[h]
            z = self.z(x, h)[:, None]
            J = 0.5 * L * (1.0 - z ** -2)
            if order == 1:
                cols.append(-k * z ** (-k - 1) / J)
            elif order == 2:
                cols.append(k * (k + 1) * z ** (-k - 2) / J**2 + k * z ** (-k - 1) * L / (z**3 * J**3))
            else:
                raise ValueError("order must be 1 or 2")
        return np.concatenate(cols, axis=1)

    def projector(self, space: NodeSpace, degree: Optional[int] = None) -> np.ndarray:
        """
        Matrix P mapping node values g on `space` to the coefficients of the
        exterior Cauchy integral of g: c_{h,k} = (1/n) sum_j g_j (w_j^k - w_j^{-k}).
        """
        degree = degree or self.degree
        return _projector(self, space.level, space.n, degree)

    def exterior(self, space: NodeSpace, degree: Optional[int] = None) -> np.ndarray:
        """Node-space matrix of g -> exterior boundary values of its Cauchy integral"""
        degree = degree or self.degree
        return _exterior(self, space.level, space.n, degree)


@lru_cache(maxsize=64)
def _build_space(family: ContourFamily, level: int, n: int) -> NodeSpace:
    rho = family.rho(level)
    theta = 2.0 * np.pi * np.arange(n) / n
    xs, ws, wts, segs = [], [], [], []
    for h in range(family.size):
        w = rho[h] * np.exp(1j * theta)
        L = family.halves[h]
        xs.append(joukowski(w, family.mids[h], L))
        ws.append(w)
        wts.append(0.5 * L * (w - 1.0 / w) / n)
        segs.append(np.full(n, h))
    return NodeSpace(
        level=level,
        n=n,
        x=np.concatenate(xs),
        w=np.concatenate(ws),
        weights=np.concatenate(wts),
        segment=np.concatenate(segs),
        rho=tuple(rho),
    )


@lru_cache(maxsize=64)
def _projector(family: ContourFamily, level: int, n: int, degree: int) -> np.ndarray:
    space = family.space(level, n)
    k = np.arange(1, degree + 1)[:, None]
    P = np.zeros((family.size * degree, space.size), dtype=complex)
    for h in range(family.size):
        w = space.w[space.slice(h)][None, :]
        P[h * degree : (h + 1) * degree, space.slice(h)] = (w**k - w ** (-k)) / n
    return P


@lru_cache(maxsize=64)
def _exterior(family: ContourFamily, level: int, n: int, degree: int) -> np.ndarray:
    space = family.space(level, n)
    return family.basis(space.x, degree) @ family.projector(space, degree)


def contour_integral(f, space: NodeSpace) -> complex:
    """
    Trapezoid approximation of the normalized contour integral
    oint f(xi) dxi / (2 i pi) over every contour of the node space.

    Raises:
        ValueError: if f is not sampled on the node space
    """
    f = np.asarray(f)
    if f.shape[0] != space.size:
        raise ValueError(
            f"node-count mismatch: got {f.shape[0]} values for {space.size} nodes"
        )
    return np.tensordot(space.weights, f, axes=(0, 0))


def segment_integrals(f, space: NodeSpace) -> np.ndarray:
    """Per-segment contour integrals (the period map on node values)"""
    f = np.asarray(f)
    return np.array(
        [np.tensordot(space.weights[space.slice(h)], f[space.slice(h)], axes=(0, 0)) for h in range(len(space.rho))]
    )


def circle_space(center: complex, radius: float, n: int) -> NodeSpace:
    """Single circle as a node space, for integrals around arbitrary points"""
    theta = 2.0 * np.pi * np.arange(n) / n
    w = np.exp(1j * theta)
    x = center + radius * w
    return NodeSpace(
        level=0,
        n=n,
        x=x,
        w=w,
        weights=radius * w / n,
        segment=np.zeros(n, dtype=int),
        rho=(1.0,),
    )


def segment_of(space: NodeSpace) -> List[slice]:
    return [space.slice(h) for h in range(len(space.rho))]
