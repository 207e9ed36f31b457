from dataclasses import dataclass, replace
from functools import cached_property, partial
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from numpy.polynomial import Chebyshev, Polynomial
from scipy.optimize import minimize_scalar

from beta_ensembles.core.errors import (
    ConvergenceError,
    CriticalityError,
    DomainError,
    NegativeDensityError,
    NumericalError,
)
from beta_ensembles.model.contours import ContourFamily, bernstein_limit, inverse_joukowski, joukowski
from beta_ensembles.model.measure import CutProfile, GridMeasure
from beta_ensembles.model.models import Domain, EdgeType, ModelConfig, Numerics, build_domain
from beta_ensembles.model.polynomials import sigma_poly, sqrt_sigma
from beta_ensembles.model.potential import RBodyPotential, build_potential, truncate_domain

# Mixture weights below this are dropped from the one-body field
PRUNE = 1e-14
# Relative size of |M| on S below which the measure is declared critical
CRITICAL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class OneBodyField:
    """
    One-body reduction V_1(x) = int T(x, xi_2..) prod dmu / (r-1)!.

    For r >= 2 the field is a convex combination of reductions against
    several measures, which is what the damped self-consistency loop
    produces. For r = 1 the single component carries no measure.
    """

    potential: RBodyPotential
    beta: float
    components: Tuple[Tuple[float, Optional[GridMeasure]], ...]

    def value(self, x) -> np.ndarray:
        return sum(w * self.potential.one_body(x, mu) for w, mu in self.components)

    def derivative(self, x) -> np.ndarray:
        return sum(w * self.potential.one_body(x, mu, derivative=True) for w, mu in self.components)

    def force(self, x) -> np.ndarray:
        """V'(x) = -(2/beta) d/dx V_1(x)"""
        return -(2.0 / self.beta) * self.derivative(x)

    def mixed(self, other: "OneBodyField", theta: float) -> "OneBodyField":
        parts = [((1 - theta) * w, mu) for w, mu in self.components]
        parts += [(theta * w, mu) for w, mu in other.components]
        kept = [(w, mu) for w, mu in parts if w > PRUNE]
        total = sum(w for w, _ in kept)
        return replace(self, components=tuple((w / total, mu) for w, mu in kept))

    @classmethod
    def of(cls, potential: RBodyPotential, beta: float, mu: Optional[GridMeasure]) -> "OneBodyField":
        if potential.r == 1:
            mu = None
        return cls(potential=potential, beta=beta, components=((1.0, mu),))


@dataclass(frozen=True)
class HullContour:
    """Bernstein ellipse around the hull of the domain, with dxi/(2 i pi) weights"""

    mid: float
    half: float
    rho: float
    x: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, mid: float, half: float, rho: float, n: int) -> "HullContour":
        w = rho * np.exp(2j * np.pi * np.arange(n) / n)
        return cls(mid, half, rho, joukowski(w, mid, half), 0.5 * half * (w - 1.0 / w) / n)

    def radius(self, x) -> np.ndarray:
        return np.abs(inverse_joukowski(x, self.mid, self.half))


@dataclass(frozen=True)
class CutLayout:
    """
    Working description of the support: one row per cut.

    `hard` marks edges pinned to a domain endpoint, `segment` the domain
    segment each cut lies in.
    """

    edges: np.ndarray
    hard: np.ndarray
    segment: Tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.segment)

    @property
    def flat_edges(self) -> List[float]:
        return [float(e) for e in self.edges.ravel()]

    @property
    def hard_edges(self) -> List[float]:
        return [float(e) for e, h in zip(self.edges.ravel(), self.hard.ravel()) if h]

    @property
    def free_mask(self) -> np.ndarray:
        return ~self.hard.ravel()

    def with_free(self, values: np.ndarray) -> "CutLayout":
        edges = self.edges.ravel().copy()
        edges[self.free_mask] = values
        return replace(self, edges=edges.reshape(-1, 2))

    @classmethod
    def initial(
        cls, domain: Domain, field: OneBodyField, masses: Optional[Sequence[float]] = None, points: int = 801
    ) -> "CutLayout":
        """
        One cut per segment: the run around the maximum of V_1 where V_1 stays
        within beta * mass of it. Ends of the run that reach a binding domain
        endpoint start out hard.
        """
        masses = np.full(domain.g + 1, 1.0 / (domain.g + 1)) if masses is None else np.asarray(masses, dtype=float)
        edges = np.empty((domain.g + 1, 2))
        hard = np.zeros((domain.g + 1, 2), dtype=bool)
        for h, seg in enumerate(domain.segments):
            x = np.linspace(seg.lo, seg.hi, points)
            v = np.real(field.value(x))
            top = int(np.argmax(v))
            keep = v >= v[top] - field.beta * max(masses[h], 1e-3)
            lo, hi = top, top
            while lo > 0 and keep[lo - 1]:
                lo -= 1
            while hi < points - 1 and keep[hi + 1]:
                hi += 1
            if hi - lo < 4:
                lo, hi = max(top - 2, 0), min(top + 2, points - 1)
            hard[h] = [lo == 0 and seg.hard_lo, hi == points - 1 and seg.hard_hi]
            # soft runs touching a non-binding end start slightly inside
            pad = 2 * (x[1] - x[0])
            edges[h] = [x[lo], x[hi]]
            if lo == 0 and not hard[h, 0]:
                edges[h, 0] += pad
            if hi == points - 1 and not hard[h, 1]:
                edges[h, 1] -= pad
        logger.debug(f"Seeded cuts {np.round(edges, 6).tolist()}, hard {hard.tolist()}")
        return cls(edges=edges, hard=hard, segment=tuple(range(domain.g + 1)))


class SpectralData:
    """
    Equilibrium data for given edges: W = (V' + M q)/2 with q = sigma_S^{1/2}/sigma_hd.

    M is the hull Cauchy integral -oint V'/(q (xi - x)) dxi/(2 i pi) plus the
    polynomial part P of 2W/q at infinity, which only exists when there
    are more hard edges than cuts plus one.
    """

    def __init__(
        self,
        field: OneBodyField,
        layout: CutLayout,
        inner: HullContour,
        outer: HullContour,
        force_inner: np.ndarray,
        force_outer: np.ndarray,
        poly: Optional[np.ndarray] = None,
    ):
        self.field = field
        self.layout = layout
        self.inner = inner
        self.outer = outer
        self.edges = layout.flat_edges
        self.sigma_hd = sigma_poly(layout.hard_edges)
        self.P = Polynomial(poly if poly is not None else [0.0])
        self.f_inner = force_inner / self.q(inner.x)
        self.f_outer = force_outer / self.q(outer.x)
        self.split = np.sqrt(inner.rho * outer.rho)

    @property
    def excess(self) -> int:
        """d = (g_S + 1) - #hard edges, the decay order of q"""
        return self.layout.count - len(self.layout.hard_edges)

    def q(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        return sqrt_sigma(x, self.edges) / self.sigma_hd(x)

    def moments(self, count: int) -> np.ndarray:
        """m_k = oint f (xi - c)^k dxi/(2 i pi), the large-x coefficients of -C_out"""
        shifted = self.inner.x - self.inner.mid
        return np.array([np.sum(self.inner.weights * self.f_inner * shifted**k) for k in range(count)])

    def _phi_in(self, x: np.ndarray) -> np.ndarray:
        kernel = self.outer.weights[None, :] / (self.outer.x[None, :] - x[:, None])
        return -(kernel @ self.f_outer)

    def _c_out(self, x: np.ndarray) -> np.ndarray:
        kernel = self.inner.weights[None, :] / (x[:, None] - self.inner.x[None, :])
        return kernel @ self.f_inner

    def M(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        flat = x.ravel()
        near = self.inner.radius(flat) < self.split
        out = np.empty(flat.shape, dtype=complex)
        if np.any(near):
            out[near] = self.P(flat[near]) + self._phi_in(flat[near])
        if np.any(~near):
            far = flat[~near]
            out[~near] = (2 * self.W(far) - self.field.force(far)) / self.q(far)
        return out.reshape(x.shape)

    def W(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        flat = x.ravel()
        near = self.inner.radius(flat) < self.split
        out = np.empty(flat.shape, dtype=complex)
        if np.any(near):
            pts = flat[near]
            out[near] = 0.5 * (self.field.force(pts) + (self.P(pts) + self._phi_in(pts)) * self.q(pts))
        if np.any(~near):
            pts = flat[~near]
            out[~near] = 0.5 * self.q(pts) * (self.P(pts) + self._c_out(pts))
        return out.reshape(x.shape)

    def density(self, x) -> np.ndarray:
        """rho = Re(i M q_+)/(2 pi) on the cuts, q_+ the boundary value from above"""
        x = np.asarray(x, dtype=float)
        qp = sqrt_sigma(x + 0j, self.edges) / self.sigma_hd(x)
        return np.real(1j * self.M(x) * qp) / (2 * np.pi)

    def exponents(self, j: int) -> Tuple[float, float]:
        return tuple(-0.5 if h else 0.5 for h in self.layout.hard[j])

    def profile(self, j: int, degree: int) -> CutProfile:
        lo, hi = self.layout.edges[j]
        a_lo, a_hi = self.exponents(j)

        def smooth(x):
            return self.density(x) / ((hi - x) ** a_hi * (x - lo) ** a_lo)

        return CutProfile(lo, hi, a_lo, a_hi, Chebyshev.interpolate(smooth, degree, domain=[lo, hi]))

    def measure(self, degree: int, n: int) -> GridMeasure:
        return GridMeasure(cuts=tuple(self.profile(j, degree) for j in range(self.layout.count)), n=n)


@dataclass(frozen=True, eq=False)
class EquilibriumMeasure:
    """
    Represents the solved equilibrium measure and its analytic data.

    Attributes:
        config: Model the measure was solved for
        potential: The interaction T
        field: One-body field V_1 at the fixed point
        layout: Cuts, pinned hard edges and their domain segments
        spectral: Analytic representation W = (V' + M q)/2
        measure: Density as a Gauss-Jacobi GridMeasure
        filling: Mass of every cut
        constants: Lagrange constant C of every cut
        iterations: Outer self-consistency iterations used
        residual: Final outer-loop residual
    """

    config: ModelConfig
    potential: RBodyPotential
    field: OneBodyField
    layout: CutLayout
    spectral: SpectralData
    measure: GridMeasure
    filling: np.ndarray
    constants: np.ndarray
    iterations: int = 1
    residual: float = 0.0
    critical: bool = False
    notes: Tuple[str, ...] = ()

    @property
    def beta(self) -> float:
        return self.config.beta

    @property
    def r(self) -> int:
        return self.config.r

    @property
    def domain(self) -> Domain:
        return self.config.domain

    @property
    def g(self) -> int:
        """Number of cuts minus one"""
        return self.layout.count - 1

    @property
    def edges(self) -> np.ndarray:
        return self.layout.edges

    @property
    def edge_types(self) -> List[Tuple[EdgeType, EdgeType]]:
        return [tuple(EdgeType.hard if h else EdgeType.soft for h in row) for row in self.layout.hard]

    @cached_property
    def support(self) -> Domain:
        return build_domain(self.layout.edges.tolist(), self.layout.hard.tolist())

    @cached_property
    def sigma_S(self) -> Polynomial:
        return sigma_poly(self.layout.flat_edges)

    @cached_property
    def sigma_hd(self) -> Polynomial:
        return sigma_poly(self.layout.hard_edges)

    @property
    def segment_filling(self) -> np.ndarray:
        """Mass of every domain segment"""
        out = np.zeros(self.domain.g + 1)
        for j, h in enumerate(self.layout.segment):
            out[h] += self.filling[j]
        return out

    def W(self, x) -> np.ndarray:
        """Stieltjes transform W_eq(x) for x off the support"""
        return self.spectral.W(x)

    def M(self, x) -> np.ndarray:
        return self.spectral.M(x)

    def q(self, x) -> np.ndarray:
        return self.spectral.q(x)

    def force(self, x) -> np.ndarray:
        return self.field.force(x)

    def density(self, x) -> np.ndarray:
        return self.measure.density_at(x)

    def family(self, numerics: Optional[Numerics] = None, i_max: int = 40) -> ContourFamily:
        """Nested contours around the cuts, inside the analyticity region of T"""
        numerics = numerics or self.config.numerics
        return ContourFamily(self.support, self.potential.region, numerics.nodes, numerics.degree, i_max)

    def summary(self) -> Dict[str, Any]:
        return {
            "edges": self.edges.tolist(),
            "edge_types": [[t.value for t in row] for row in self.edge_types],
            "filling": self.filling.tolist(),
            "segment_filling": self.segment_filling.tolist(),
            "constants": self.constants.tolist(),
            "iterations": self.iterations,
            "residual": self.residual,
            "critical": self.critical,
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# Newton on the edge equations
# ---------------------------------------------------------------------------


def _newton(
    fun: Callable[[np.ndarray], np.ndarray],
    u0: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 60,
    lower: Optional[np.ndarray] = None,
    upper: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Damped Newton with a central finite-difference Jacobian. Trial points
    are clipped to [lower, upper].

    Raises:
        ConvergenceError: no decrease along the Newton direction, or no
            convergence within max_iter steps. A failed line search carries
            the last iterate as details["point"] and the Newton step as
            details["step"].
    """
    u = np.asarray(u0, dtype=float)
    if u.size == 0:
        return u
    lower = np.full(u.size, -np.inf) if lower is None else lower
    upper = np.full(u.size, np.inf) if upper is None else upper
    F = fun(u)
    for it in range(max_iter):
        norm = np.linalg.norm(F)
        logger.debug(f"Newton iteration {it}: residual {norm:.3e}")
        if norm < tol:
            return u
        J = np.empty((F.size, u.size))
        for j in range(u.size):
            h = 1e-6 * max(1.0, abs(u[j]))
            e = np.zeros(u.size)
            e[j] = h
            J[:, j] = (fun(u + e) - fun(u - e)) / (2 * h)
        step = np.linalg.lstsq(J, -F, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            trial = np.clip(u + lam * step, lower, upper)
            Ft = fun(trial)
            if np.all(np.isfinite(Ft)) and np.linalg.norm(Ft) < (1 - 1e-4 * lam) * norm:
                break
            lam /= 2
        else:
            if norm < 1e3 * tol:
                return u
            raise ConvergenceError(
                "Newton line search failed",
                {"residual": float(norm), "point": u.tolist(), "step": step.tolist()},
            )
        moved = np.linalg.norm(trial - u)
        u, F = trial, Ft
        if moved < 1e-15 * max(1.0, np.linalg.norm(u)):
            return u
    raise ConvergenceError("Newton did not converge", {"residual": float(np.linalg.norm(F))})


class EdgeSolver:
    """
    Solves for the free edges of a cut layout under a fixed one-body field.

    Equations: the large-x conditions turning W into a probability
    Stieltjes transform, then one condition per pair of neighbouring cuts,
    either a prescribed mass (different domain segments in the fixed
    filling model) or equality of the Lagrange constants.
    """

    def __init__(
        self,
        field: OneBodyField,
        domain: Domain,
        numerics: Numerics,
        filling: Optional[Sequence[float]],
    ):
        self.field = field
        self.domain = domain
        self.numerics = numerics
        self.filling = None if filling is None else np.asarray(filling, dtype=float)
        lo, hi = domain.hull
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        limit = bernstein_limit(mid, half, field.potential.region)
        n = 2 * numerics.nodes
        self.inner = HullContour.build(mid, half, 1 + 0.2 * (limit - 1), n)
        self.outer = HullContour.build(mid, half, 1 + 0.45 * (limit - 1), n)
        self.force_inner = field.force(self.inner.x)
        self.force_outer = field.force(self.outer.x)
        self.fit_degree = min(numerics.cheb_degree, 64)

    def spectral(self, layout: CutLayout, poly: Optional[np.ndarray] = None) -> SpectralData:
        return SpectralData(self.field, layout, self.inner, self.outer, self.force_inner, self.force_outer, poly)

    def _poly_size(self, layout: CutLayout) -> int:
        return max(0, len(layout.hard_edges) - layout.count - 1)

    def _unpack(self, layout: CutLayout, u: np.ndarray) -> Tuple[CutLayout, Optional[np.ndarray]]:
        nfree = int(layout.free_mask.sum())
        layout = layout.with_free(u[:nfree])
        if len(layout.hard_edges) - layout.count - 1 >= 0:
            return layout, np.concatenate([u[nfree:], [2.0]])
        return layout, None

    def residual(self, layout: CutLayout, u: np.ndarray) -> np.ndarray:
        layout, poly = self._unpack(layout, u)
        flat = layout.edges.ravel()
        if np.any(np.diff(flat) <= 0):
            return np.full(u.size, np.nan)
        data = self.spectral(layout, poly)
        d = data.excess
        eqs: List[complex] = []
        if d >= 0:
            m = data.moments(d + 1)
            eqs.extend(m[:d])
            eqs.append(m[d] - 2.0)
        eqs.extend(self._cut_conditions(data, self.fit_degree))
        return np.real(np.array(eqs, dtype=complex))

    def _cut_conditions(self, data: SpectralData, degree: int) -> List[float]:
        layout = data.layout
        if layout.count == 1:
            return []
        mu = data.measure(degree, 48)
        masses = mu.masses
        conds: List[float] = []
        constants = self.constants(data, mu)
        for j in range(layout.count - 1):
            same = layout.segment[j] == layout.segment[j + 1]
            if self.filling is None or same:
                conds.append(constants[j] - constants[j + 1])
            else:
                target = self.filling[: layout.segment[j] + 1].sum()
                conds.append(masses[: j + 1].sum() - target)
        return conds

    def constants(self, data: SpectralData, mu: GridMeasure) -> np.ndarray:
        mids = data.layout.edges.mean(axis=1)
        beta = self.field.beta
        return np.array([beta * mu.log_potential(x) + self.field.value(x).real for x in mids])

    def _bounds(self, layout: CutLayout) -> Tuple[np.ndarray, np.ndarray]:
        """Free edges stay inside their domain segment, polynomial unknowns are unbounded"""
        segs = [self.domain.segments[h] for h in layout.segment]
        extra = np.full(self._poly_size(layout), np.inf)
        lower = np.repeat([s.lo for s in segs], 2)[layout.free_mask]
        upper = np.repeat([s.hi for s in segs], 2)[layout.free_mask]
        return np.concatenate([lower, -extra]), np.concatenate([upper, extra])

    def _pin_stalled(self, layout: CutLayout, u: np.ndarray, step: np.ndarray) -> Optional[CutLayout]:
        """Pin the free edges a stalled Newton step pushes through a binding domain endpoint"""
        edges = layout.edges.ravel().copy()
        hard = layout.hard.ravel().copy()
        pinned = False
        for i, value, du in zip(np.flatnonzero(layout.free_mask), u, step):
            j, side = divmod(int(i), 2)
            seg = self.domain.segments[layout.segment[j]]
            bound, allowed = (seg.lo, seg.hard_lo) if side == 0 else (seg.hi, seg.hard_hi)
            crossing = value + du <= bound if side == 0 else value + du >= bound
            if allowed and crossing:
                logger.warning(f"Pinning edge {value:.6g} of cut {j} to the hard wall {bound} during Newton")
                edges[i] = bound
                hard[i] = True
                pinned = True
        if not pinned:
            return None
        return replace(layout, edges=edges.reshape(-1, 2), hard=hard.reshape(-1, 2))

    def solve(self, layout: CutLayout) -> Tuple[CutLayout, Optional[np.ndarray]]:
        """
        Newton on the free edges, pinning an edge to its domain endpoint
        whenever the iteration stalls against it.
        """
        for _ in range(2 * layout.count + 1):
            nfree = int(layout.free_mask.sum())
            u0 = np.concatenate([layout.edges.ravel()[layout.free_mask], np.zeros(self._poly_size(layout))])
            if u0.size != nfree + self._poly_size(layout):
                raise NumericalError("inconsistent unknown count")
            lower, upper = self._bounds(layout)
            try:
                u = _newton(partial(self.residual, layout), u0, lower=lower, upper=upper)
            except ConvergenceError as exc:
                if "step" not in exc.details:
                    raise
                pinned = self._pin_stalled(
                    layout, np.asarray(exc.details["point"])[:nfree], np.asarray(exc.details["step"])[:nfree]
                )
                if pinned is None:
                    raise
                layout = pinned
                continue
            return self._unpack(layout, u)
        raise ConvergenceError("edge pinning inside Newton did not settle", {"edges": layout.edges.tolist()})


def _pin_and_unpin(layout: CutLayout, domain: Domain, data: SpectralData) -> Tuple[CutLayout, bool]:
    """
    Pin free edges that left their segment to the segment endpoint, and
    release pinned edges whose inverse square-root coefficient is negative.
    """
    edges = layout.edges.copy()
    hard = layout.hard.copy()
    changed = False
    for j, h in enumerate(layout.segment):
        seg = domain.segments[h]
        lo, hi = edges[j]
        length = hi - lo
        for side, (bound, allowed) in enumerate(((seg.lo, seg.hard_lo), (seg.hi, seg.hard_hi))):
            outside = edges[j, side] <= bound if side == 0 else edges[j, side] >= bound
            if not hard[j, side] and outside:
                if not allowed:
                    raise DomainError(
                        "the support leaves the domain at an endpoint that may not bind",
                        {"segment": h, "edge": float(edges[j, side])},
                    )
                logger.warning(f"Pinning edge {edges[j, side]:.6g} of cut {j} to the hard wall {bound}")
                edges[j, side] = bound
                hard[j, side] = True
                changed = True
            elif hard[j, side]:
                probe = bound + (1e-6 if side == 0 else -1e-6) * length
                coeff = data.density(np.array([probe]))[0]
                if coeff < 0:
                    logger.warning(f"Releasing hard edge {bound} of cut {j}: negative wall coefficient")
                    edges[j, side] = bound + (0.05 if side == 0 else -0.05) * length
                    hard[j, side] = False
                    changed = True
    return replace(layout, edges=edges, hard=hard), changed


def _most_negative(data: SpectralData) -> Optional[Tuple[int, float, float]]:
    """(cut, point, value) of the most negative density, None when non-negative"""
    worst = None
    for j, (lo, hi) in enumerate(data.layout.edges):
        x = np.linspace(lo, hi, 403)[1:-1]
        rho = data.density(x)
        k = int(np.argmin(rho))
        scale = np.abs(rho).max()
        if rho[k] < -1e-9 * scale and (worst is None or rho[k] < worst[2]):
            worst = (j, float(x[k]), float(rho[k]))
    return worst


def _split(layout: CutLayout, j: int, x: float) -> CutLayout:
    lo, hi = layout.edges[j]
    gap = 0.05 * (hi - lo)
    edges = np.insert(layout.edges, j + 1, [x + gap, hi], axis=0)
    edges[j] = [lo, x - gap]
    hard = np.insert(layout.hard, j + 1, [False, layout.hard[j, 1]], axis=0)
    hard[j, 1] = False
    segment = layout.segment[: j + 1] + (layout.segment[j],) + layout.segment[j + 1 :]
    return CutLayout(edges=edges, hard=hard, segment=segment)


def _inner_solve(
    solver: EdgeSolver, layout: CutLayout, allow_split: bool = True
) -> Tuple[CutLayout, SpectralData, List[str]]:
    notes: List[str] = []
    split_done = not allow_split
    for _ in range(4 * (layout.count + 2)):
        layout, poly = solver.solve(layout)
        data = solver.spectral(layout, poly)
        layout, changed = _pin_and_unpin(layout, solver.domain, data)
        if changed:
            continue
        worst = _most_negative(data)
        if worst is None:
            return layout, data, notes
        if split_done:
            raise NegativeDensityError(
                "negative equilibrium density after cut splitting",
                {"cut": worst[0], "point": worst[1], "density": worst[2]},
            )
        logger.warning(f"Negative density {worst[2]:.3e} at x={worst[1]:.6g}: splitting cut {worst[0]}")
        notes.append(f"cut {worst[0]} split at {worst[1]:.6g}")
        layout = _split(layout, worst[0], worst[1])
        split_done = True
    raise ConvergenceError("edge pinning did not settle", {"edges": layout.edges.tolist()})


def _critical_margin(data: SpectralData) -> float:
    """min |M| over the support relative to max |M|"""
    values = []
    for lo, hi in data.layout.edges:
        x = np.linspace(lo, hi, 401)
        mags = np.abs(data.M(x))
        k = int(np.argmin(mags))
        a, b = x[max(k - 1, 0)], x[min(k + 1, x.size - 1)]
        best = minimize_scalar(
            lambda s: float(np.abs(data.M(np.array([s]))[0])),
            bounds=(a, b),
            method="bounded",
            options={"xatol": 1e-12},
        )
        values.append((min(best.fun, mags[k]), mags.max()))
    scale = max(v[1] for v in values)
    return min(v[0] for v in values) / scale if scale > 0 else 0.0


def solve_equilibrium(
    config: ModelConfig,
    constraints: Optional[Sequence[float]] = None,
    initial: Optional[CutLayout] = None,
    allow_critical: bool = False,
    potential: Optional[RBodyPotential] = None,
) -> EquilibriumMeasure:
    """
    Minimize the energy functional, with free or fixed filling fractions.

    Args:
        config: Model description; unbounded segments are truncated first
        constraints: Filling fractions per domain segment, overriding config.filling
        initial: Starting cut layout, default one cut per domain segment seeded from V_1
        allow_critical: Return a critical measure instead of raising
        potential: Interaction to use instead of the one built from config.potential

    Returns:
        EquilibriumMeasure satisfying the Euler-Lagrange characterization

    Raises:
        ConvergenceError: outer loop or Newton failure
        CriticalityError: M vanishes on the support
        NegativeDensityError: negative density persists after one cut split
    """
    if not config.bounded:
        config = truncate_domain(config)
    filling = list(constraints) if constraints is not None else config.filling
    if filling is not None and constraints is not None:
        config = config.with_overrides(filling=filling)
    numerics = config.numerics
    domain = config.domain
    if potential is None:
        potential = build_potential(config.potential, config.r, config.beta, domain)
    elif potential.r != config.r:
        raise DomainError("potential arity does not match the model", {"r": config.r, "potential_r": potential.r})
    masses = filling if filling is not None else None
    field_ = OneBodyField.of(potential, config.beta, GridMeasure.uniform(domain, masses, n=48))
    layout = initial or CutLayout.initial(domain, field_, masses)

    grid = np.linspace(*domain.hull, 401)
    grid = grid[domain.locate(grid) >= 0]
    theta = numerics.damping
    previous = np.inf
    notes: List[str] = []
    split_allowed = True
    residual = 0.0
    for iteration in range(1, numerics.max_outer + 1):
        solver = EdgeSolver(field_, domain, numerics, filling)
        layout, data, new_notes = _inner_solve(solver, layout, split_allowed)
        if new_notes:
            split_allowed = False
            notes.extend(new_notes)
        if potential.r == 1:
            residual = 0.0
            break
        mu = data.measure(numerics.degree, 64)
        target = OneBodyField.of(potential, config.beta, mu)
        residual = float(np.max(np.abs(target.force(grid) - field_.force(grid))))
        logger.debug(f"Outer iteration {iteration}: residual {residual:.3e}, damping {theta:.3g}")
        if residual < numerics.tol_eq:
            field_ = target
            solver = EdgeSolver(field_, domain, numerics, filling)
            layout, data, _ = _inner_solve(solver, layout, allow_split=False)
            break
        if residual > previous:
            theta *= 0.5
        previous = residual
        field_ = field_.mixed(target, theta)
    else:
        raise ConvergenceError(
            f"self-consistency did not converge in {numerics.max_outer} iterations",
            {"residual": residual},
        )

    margin = _critical_margin(data)
    critical = margin < CRITICAL_TOL
    if critical and not allow_critical:
        raise CriticalityError("M vanishes on the support", {"margin": margin, "edges": layout.edges.tolist()})

    measure = data.measure(numerics.degree, 64)
    constants = solver.constants(data, measure)
    eq = EquilibriumMeasure(
        config=config,
        potential=potential,
        field=field_,
        layout=layout,
        spectral=data,
        measure=measure,
        filling=measure.masses,
        constants=constants,
        iterations=iteration,
        residual=residual,
        critical=critical,
        notes=tuple(notes),
    )
    logger.info(
        f"Equilibrium: {layout.count} cut(s), edges {np.round(layout.edges, 8).tolist()}, "
        f"filling {np.round(eq.filling, 8).tolist()} after {iteration} outer iteration(s)"
    )
    return eq


def effective_potential(eq: EquilibriumMeasure, x) -> np.ndarray:
    """
    T_eff(x) = beta int ln|x - xi| dmu_eq + V_1(x) - C, with C the constant of
    the domain segment containing x; -inf outside the domain.
    """
    x = np.asarray(x, dtype=float)
    where = eq.domain.locate(x)
    out = np.full(x.shape, -np.inf)
    inside = where >= 0
    if not np.any(inside):
        return out
    seg_const = np.full(eq.domain.g + 1, np.nan)
    for h in range(eq.domain.g + 1):
        own = [eq.constants[j] for j, s in enumerate(eq.layout.segment) if s == h]
        if own:
            seg_const[h] = np.mean(own)
    if eq.config.filling is None:
        seg_const[:] = np.nanmean(seg_const)
    pts = x[inside]
    values = eq.beta * eq.measure.log_potential(pts) + eq.field.value(pts).real
    out[inside] = values - seg_const[where[inside]]
    return out


def critical_exponent_slopes(
    eq: EquilibriumMeasure, near: Tuple[float, float] = (1e-4, 1e-2)
) -> List[Tuple[float, float]]:
    """Log-log slope of the density between the given distances of every edge"""
    slopes = []
    for lo, hi in eq.edges:
        pair = []
        for edge, sign in ((lo, 1.0), (hi, -1.0)):
            d = np.array(near)
            rho = eq.density(edge + sign * d)
            pair.append(float(np.diff(np.log(rho))[0] / np.diff(np.log(d))[0]))
        slopes.append(tuple(pair))
    return slopes
