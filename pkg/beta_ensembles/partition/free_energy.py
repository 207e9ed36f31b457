"""
Free-energy coefficients F^[k] of the fixed filling fraction model.

F^[-2] = -E[mu_eq] is absolute. Higher orders are obtained by integrating
d/dt ln Z along T_t = t T + (1 - t) T^, where the one-body reference T^ has
the same equilibrium measure; they are reported relative to the reference.
On several segments the reference also drops the repulsion between
segments, so it factorizes into one-cut models whose first order is
universal; F^[-1] is then absolute.
"""

from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from itertools import product
from math import factorial
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import mpmath
import numpy as np
from loguru import logger
from numpy.polynomial import Chebyshev
from numpy.polynomial.chebyshev import chebpts1
from numpy.polynomial.legendre import leggauss

from beta_ensembles.core import config
from beta_ensembles.core.errors import ConfigurationError, NumericalError, PotentialError
from beta_ensembles.core.utils import run_parallel
from beta_ensembles.equilibrium.energy import energy
from beta_ensembles.equilibrium.solver import EquilibriumMeasure, OneBodyField, effective_potential, solve_equilibrium
from beta_ensembles.expansion.operators import Block, contract_potential
from beta_ensembles.expansion.partitions import compositions, set_partitions
from beta_ensembles.expansion.recursion import SOURCE_LEVEL, ExpansionCache, build_cache, extend_cache
from beta_ensembles.model.models import Domain, EdgeType, ModelConfig
from beta_ensembles.model.measure import CutProfile
from beta_ensembles.model.potential import (
    FunctionFactor,
    PairKernel,
    PairTerm,
    RBodyPotential,
    SeparableTerm,
    one_body_term,
)
from beta_ensembles.operators.fredholm import MasterInverse
from beta_ensembles.operators.master import MasterOperator
from beta_ensembles.operators.realline import log_moments

# Spread of the effective potential on a cut, relative to its size, accepted as constant
EL_TOL = 1e-6
# Edge displacement accepted when the reference model is re-solved
EDGE_DRIFT_TOL = 1e-6
# Chebyshev degree of the filling-derivative densities in the bilinear form
NU_DEGREE = 64
# Gauss-Jacobi nodes per cut for int ln(rho) dmu
ENTROPY_NODES = 96
# Particle numbers of the exactly solvable models the edge constants are fitted on
ANCHOR_SIZES = (160, 200, 240, 280, 320, 360, 400, 440)

Offset = Tuple[int, ...]


# ---------------------------------------------------------------------------
# The exponent of N
# ---------------------------------------------------------------------------


def _as_fraction(beta: Union[int, float, Fraction]) -> Fraction:
    if isinstance(beta, float):
        return Fraction(str(beta)).limit_denominator(10**6)
    return Fraction(beta)


def gamma_exponent(edge_types: Sequence[Tuple[EdgeType, EdgeType]], beta: Union[int, float, Fraction]) -> Fraction:
    """
    Exponent gamma of N in Z = N^{(beta/2) N + gamma} exp(...), summed over
    cuts: (3 + b/2 + 2/b)/12 soft-soft, (b/2 + 2/b)/6 soft-hard and
    (-1 + b/2 + 2/b)/4 hard-hard.
    """
    b = _as_fraction(beta)
    total = Fraction(0)
    for pair in edge_types:
        hard = sum(1 for e in pair if EdgeType(e) is EdgeType.hard)
        if hard == 0:
            total += (3 + b / 2 + 2 / b) / 12
        elif hard == 1:
            total += (b / 2 + 2 / b) / 6
        else:
            total += (-1 + b / 2 + 2 / b) / 4
    return total


# ---------------------------------------------------------------------------
# The one-body reference
# ---------------------------------------------------------------------------


def _nearest_segment(domain: Domain, x: np.ndarray) -> np.ndarray:
    re = np.asarray(x, dtype=complex).real
    dist = np.stack([np.maximum(np.maximum(seg.lo - re, re - seg.hi), 0.0) for seg in domain.segments])
    return dist.argmin(axis=0)


def hat_potential(eq: EquilibriumMeasure) -> RBodyPotential:
    """
    T^(x_1..x_r) = (r-1)! sum_j T^_1(x_j) with, for x near A_h,
        T^_1(x) = V_1(x) + beta sum_{h' != h} int_{S_h'} ln|x - xi| dmu_eq(xi),
    continued analytically from A_h. With one segment T^_1 = V_1.
    """
    mu = eq.measure
    beta = eq.beta
    domain = eq.domain
    node_segment = np.asarray(eq.layout.segment)[mu.segment]
    potential = eq.potential

    def cross(x: np.ndarray, derivative: bool) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        flat = x.ravel()
        out = np.zeros(flat.shape, dtype=complex)
        if domain.g == 0:
            return out.reshape(x.shape)
        own = _nearest_segment(domain, flat)
        for h, seg in enumerate(domain.segments):
            pts = own == h
            other = node_segment != h
            if not pts.any() or not other.any():
                continue
            xi, w = mu.nodes[other], mu.weights[other]
            diff = flat[pts][:, None] - xi[None, :]
            if derivative:
                out[pts] = (1.0 / diff) @ w
            else:
                out[pts] = np.log(np.sign(seg.mid - xi)[None, :] * diff) @ w
        return out.reshape(x.shape)

    def value(x):
        return potential.one_body(x, mu) + beta * cross(x, False)

    def slope(x):
        return potential.one_body(x, mu, derivative=True) + beta * cross(x, True)

    factor = FunctionFactor(value, slope, label="hat")
    return RBodyPotential(r=eq.r, terms=(one_body_term(eq.r, factor),), region=eq.potential.region, label="hat")


def check_hat_potential(eq: EquilibriumMeasure, hat: RBodyPotential, points: int = 8) -> float:
    """
    Largest spread over a cut of beta U_h + T^_1, U_h the log-potential of
    the cuts in the same segment. It vanishes when mu_eq also minimizes the
    reference model with the cross-segment interaction removed.

    Raises:
        NumericalError: the spread exceeds EL_TOL
    """
    mu = eq.measure
    worst, scale = 0.0, 0.0
    t = chebpts1(points)
    for j, (lo, hi) in enumerate(eq.edges):
        h = eq.layout.segment[j]
        x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * 0.95 * t
        own = sum(cut.log_potential(x) for c, cut in enumerate(mu.cuts) if eq.layout.segment[c] == h)
        values = eq.beta * own + hat.one_body(x, mu).real
        worst = max(worst, float(values.max() - values.min()))
        scale = max(scale, float(np.abs(values).max()))
    spread = worst / max(scale, 1.0)
    logger.debug(f"Reference potential: effective potential spread {spread:.3e}")
    if spread > EL_TOL:
        raise NumericalError(
            "the reference potential does not share the equilibrium measure",
            {"spread": spread, "tol": EL_TOL},
        )
    return spread


def resolve_hat(eq: EquilibriumMeasure, hat: RBodyPotential) -> float:
    """
    Re-solve the one-segment model under T^ and return the edge drift.

    Raises:
        NumericalError: the edges move by more than EDGE_DRIFT_TOL
    """
    if eq.domain.g > 0:
        raise ConfigurationError("the reference model is only re-solved on one segment")
    again = solve_equilibrium(eq.config, initial=eq.layout, potential=hat)
    if again.edges.shape != eq.edges.shape:
        raise NumericalError("reference model has a different number of cuts", {"edges": again.edges.tolist()})
    drift = float(np.abs(again.edges - eq.edges).max())
    if drift > EDGE_DRIFT_TOL * max(1.0, float(np.abs(eq.edges).max())):
        raise NumericalError(
            "equilibrium edges move along the interpolation",
            {"drift": drift, "edges": eq.edges.tolist(), "reference_edges": again.edges.tolist()},
        )
    return drift


@dataclass(frozen=True)
class CrossSegmentLog(PairKernel):
    """
    K = ln|x - y| for x and y near different segments, continued
    analytically from the real axis; 0 when both lie near the same segment.
    """

    domain: Domain
    name = "crosslog"

    def _split(self, x, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        x, y = np.broadcast_arrays(np.asarray(x, dtype=complex), np.asarray(y, dtype=complex))
        mids = np.array([seg.mid for seg in self.domain.segments])
        sx, sy = _nearest_segment(self.domain, x), _nearest_segment(self.domain, y)
        return x - y, sx != sy, np.sign(mids[sx] - mids[sy])

    def __call__(self, x, y):
        diff, cross, sign = self._split(x, y)
        return np.where(cross, np.log(np.where(cross, sign * diff, 1.0)), 0.0)

    def d1(self, x, y):
        diff, cross, _ = self._split(x, y)
        return np.where(cross, 1.0 / np.where(cross, diff, 1.0), 0.0)


def lifted(T: RBodyPotential, r: int) -> RBodyPotential:
    """The same model weight written as an r-body interaction, r >= T.r"""
    if r < T.r:
        raise PotentialError(f"cannot lower the arity {T.r} to {r}")
    if r == T.r:
        return T
    # pair terms carry an arity-free normalization
    scale = factorial(r) / factorial(T.r)
    terms = tuple(replace(t, coeff=t.coeff * scale) if isinstance(t, SeparableTerm) else t for t in T.terms)
    return RBodyPotential(r=r, terms=terms, region=T.region, label=T.label)


def decoupling_term(eq: EquilibriumMeasure) -> RBodyPotential:
    """X = beta ln|x - y| between particles of different segments, at arity max(r, 2)"""
    r = max(eq.r, 2)
    pair = PairTerm(coeff=eq.beta, kernel=CrossSegmentLog(eq.domain))
    return RBodyPotential(r=r, terms=(pair,), region=eq.potential.region, label="decoupling")


def interpolated(
    eq: EquilibriumMeasure, hat: RBodyPotential, t: float, decoupling: Optional[RBodyPotential] = None
) -> EquilibriumMeasure:
    """
    Equilibrium data of T_t = t T + (1 - t) T^, which share mu_eq. With a
    decoupling term X the reference end is T^ - X: the segments stop
    repelling each other and mu_eq is still shared.
    """
    if decoupling is None:
        T_t = eq.potential.scaled(t) + hat.scaled(1.0 - t)
        return replace(eq, potential=T_t, field=OneBodyField.of(T_t, eq.beta, eq.measure))
    r = decoupling.r
    reference = lifted(hat, r) + decoupling.scaled(-1.0)
    T_t = lifted(eq.potential, r).scaled(t) + reference.scaled(1.0 - t)
    model = eq.config if r == eq.r else eq.config.with_overrides(r=r)
    return replace(eq, config=model, potential=T_t, field=OneBodyField.of(T_t, eq.beta, eq.measure))


def interpolation_difference(
    eq: EquilibriumMeasure, hat: RBodyPotential, decoupling: Optional[RBodyPotential] = None
) -> RBodyPotential:
    """d/dt T_t"""
    if decoupling is None:
        return eq.potential + hat.scaled(-1.0)
    r = decoupling.r
    return lifted(eq.potential, r) + lifted(hat, r).scaled(-1.0) + decoupling


# ---------------------------------------------------------------------------
# Higher orders along the interpolation
# ---------------------------------------------------------------------------


def integrand_terms(r: int, j: int) -> List[Tuple[Tuple[Tuple[int, ...], ...], Tuple[int, ...]]]:
    """
    (partition, orders) pairs whose products of W_|B|^[k_B] make up the
    N^-j coefficient of (N^{2-r}/r!) oint (T - T^) W~_r.
    """
    out = []
    for part in set_partitions(r):
        lower = [max(len(block) - 2, -1) for block in part]
        for orders in compositions(j + 2 - r, lower, j + 1):
            out.append((part, orders))
    return out


def correlator_targets(r: int, k_max: int) -> List[Tuple[int, int]]:
    keys = set()
    for j in range(-1, k_max + 1):
        for part, orders in integrand_terms(r, j):
            keys.update((len(block), k) for block, k in zip(part, orders))
    return sorted(key for key in keys if key != (1, -1))


def interpolation_integrand(cache: ExpansionCache, diff: RBodyPotential, j: int) -> complex:
    """c_j(t) = (1/r!) sum_P sum_k oint (T - T^) prod_B W_|B|^[k_B] at one point of the interpolation"""
    r = diff.r
    space = cache.ops.space(SOURCE_LEVEL, r)
    total = 0j
    for part, orders in integrand_terms(r, j):
        blocks = []
        for block, k in zip(part, orders):
            tensor = cache.tensor(len(block), k)
            if tensor is None:
                break
            blocks.append((Block.of(tensor, slots=len(block)), block))
        else:
            total += complex(contract_potential(diff, blocks, space, keep=False))
    return total / factorial(r)


def free_energy_coeffs(
    eq: EquilibriumMeasure,
    k_max: int = 0,
    t_nodes: Optional[int] = None,
    verify: bool = True,
) -> Dict[int, float]:
    """
    F^[-2] and the relative coefficients G^[k] = F^[k](T) - F^[k](reference)
    for k = -1 .. k_max, by Gauss-Legendre quadrature over t in [0, 1].

    On one segment the reference is the one-body model T^. On several
    segments it is T^ with the repulsion between segments removed, a
    product of independent one-cut models sharing mu_eq.

    Raises:
        NumericalError: the reference potential does not share mu_eq
    """
    out = {-2: -energy(eq.measure, eq.potential, eq.beta)}
    if k_max < -1:
        return out
    hat = hat_potential(eq)
    if verify:
        check_hat_potential(eq, hat)
    decoupling = None
    if eq.domain.g > 0:
        decoupling = decoupling_term(eq)
    elif not eq.potential.couples_particles():
        logger.info("Interaction is one-body: the reference model coincides with the model")
        out.update({k: 0.0 for k in range(-1, k_max + 1)})
        return out
    elif verify:
        resolve_hat(eq, hat)

    diff = interpolation_difference(eq, hat, decoupling)
    targets = correlator_targets(diff.r, k_max)
    nodes, weights = leggauss(t_nodes or config.T_NODES)
    ts, ws = 0.5 * (nodes + 1.0), 0.5 * weights

    def at(t: float) -> Dict[int, complex]:
        eq_t = interpolated(eq, hat, t, decoupling)
        if verify:
            spread = _effective_spread(eq_t)
            if spread > EL_TOL:
                raise NumericalError("equilibrium changes along the interpolation", {"t": t, "spread": spread})
        cache = build_cache(eq_t, i_max=2 * (k_max + 1 + diff.r) + 4)
        extend_cache(cache, targets)
        return {j: interpolation_integrand(cache, diff, j) for j in range(-1, k_max + 1)}

    values = run_parallel([lambda t=t: at(t) for t in ts], name="interpolation")
    imag = 0.0
    for j in range(-1, k_max + 1):
        total = sum(w * v[j] for w, v in zip(ws, values))
        imag = max(imag, abs(total.imag))
        out[j] = float(total.real)
    terms = ", ".join(f"F[{k}] = {v:.10g}" for k, v in out.items())
    logger.info(f"Free energy: {terms} (max imaginary part {imag:.1e})")
    return out


def _effective_spread(eq: EquilibriumMeasure, points: int = 8) -> float:
    worst = 0.0
    t = chebpts1(points)
    for lo, hi in eq.edges:
        x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * 0.95 * t
        values = effective_potential(eq, x)
        worst = max(worst, float(values.max() - values.min()))
    return worst / max(1.0, float(np.abs(eq.constants).max()))


# ---------------------------------------------------------------------------
# Filling-fraction derivatives
# ---------------------------------------------------------------------------


def _fd_weights(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Central stencil on -m..m, m = ceil(order/2), exact for polynomials of degree 2m"""
    m = (order + 1) // 2
    j = np.arange(-m, m + 1)
    V = np.array([j.astype(float) ** q / factorial(q) for q in range(2 * m + 1)])
    rhs = np.zeros(2 * m + 1)
    rhs[order] = 1.0
    return j, np.linalg.solve(V, rhs)


def grid_radius(order: int) -> int:
    """Offsets needed along one direction for an order-th derivative with one Richardson step"""
    return 2 * ((order + 1) // 2)


def _mixed(values: Dict[Offset, float], alpha: Sequence[int], stride: int, step: float) -> float:
    stencils = [_fd_weights(a) for a in alpha]
    total = 0.0
    for picks in product(*[range(len(j)) for j, _ in stencils]):
        key = tuple(int(stride * stencils[h][0][i]) for h, i in enumerate(picks))
        if key not in values:
            raise NumericalError("filling-fraction grid too coarse for this derivative", {"missing": list(key)})
        weight = np.prod([stencils[h][1][i] for h, i in enumerate(picks)])
        total += weight * values[key]
    return total / (stride * step) ** sum(alpha)


def ff_derivatives(
    values: Dict[Offset, float], step: float, order: int, tol: Optional[float] = None, strict: bool = True
) -> np.ndarray:
    """
    The tensor of order-th derivatives along eta^h = e^h - e^0 from values on
    an integer offset grid of spacing step, by central differences with one
    Richardson step.

    Raises:
        NumericalError: missing grid points, or the two step sizes disagree
            beyond tol when strict (otherwise a warning)
    """
    tol = config.FD_TOL if tol is None else tol
    g = len(next(iter(values)))
    out = np.zeros((g,) * order)
    cache: Dict[Tuple[int, ...], float] = {}
    worst = 0.0
    for index in product(range(g), repeat=order):
        alpha = tuple(index.count(h) for h in range(g))
        if alpha not in cache:
            fine = _mixed(values, alpha, 1, step)
            coarse = _mixed(values, alpha, 2, step)
            cache[alpha] = (4.0 * fine - coarse) / 3.0
            estimate = abs(fine - coarse) / 3.0
            worst = max(worst, estimate / max(1.0, abs(cache[alpha])))
        out[index] = cache[alpha]
    if worst > tol:
        if strict:
            raise NumericalError(
                f"finite differences of order {order} disagree between step sizes",
                {"relative_error": worst, "tol": tol, "step": step},
            )
        logger.warning(f"Richardson disagreement {worst:.2e} above {tol:.1e} for order {order}")
    logger.debug(f"Derivative tensor of order {order}: Richardson error {worst:.2e}")
    return out


def gradient_from_constants(eq: EquilibriumMeasure) -> np.ndarray:
    """dF^[-2]/deta^h = C_h - C_0 with C the Lagrange constant of each segment"""
    seg = np.asarray(eq.layout.segment)
    C = np.array([eq.constants[seg == h].mean() for h in range(eq.domain.g + 1)])
    return C[1:] - C[0]


def _one_cut_per_segment(eq: EquilibriumMeasure) -> None:
    if sorted(eq.layout.segment) != list(range(eq.domain.g + 1)):
        raise ConfigurationError(
            "filling-fraction derivatives need exactly one cut per segment",
            {"cut_segments": list(eq.layout.segment)},
        )


def filling_variations(eq: EquilibriumMeasure, inverse: MasterInverse, level: int = 1):
    """The functions phi_eta of W_eq along eta^h = e^h - e^0, one per h = 1..g"""
    _one_cut_per_segment(eq)
    g = eq.domain.g
    out = []
    order = np.argsort(eq.layout.segment)
    for h in range(1, g + 1):
        eta = np.zeros(g + 1)
        eta[order[h]] = 1.0
        eta[order[0]] = -1.0
        out.append(inverse.mass_derivative(eta, level=level))
    return out


def hessian_bilinear(eq: EquilibriumMeasure, inverse: Optional[MasterInverse] = None) -> np.ndarray:
    """
    d^2 F^[-2] / deta^h deta^h' = int int (beta ln|x - y| + K_2(x, y)) dnu_h dnu_h'
    with nu_h the derivative of mu_eq along eta^h, whose densities are read
    off the mass derivatives of the master operator.
    """
    inverse = inverse or MasterInverse(MasterOperator(eq))
    phis = filling_variations(eq, inverse)
    t = chebpts1(4 * NU_DEGREE)
    cuts = []
    for phi in phis:
        nu = inverse.mass_density(phi)
        parts = []
        for lo, hi in eq.edges:
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            smooth = Chebyshev.interpolate(lambda s: nu(mid + half * s) * np.sqrt(1 - s**2), NU_DEGREE)
            parts.append((mid, half, smooth))
        cuts.append(parts)

    g = len(phis)
    H = np.zeros((g, g))
    for a in range(g):
        for b in range(a, g):
            total = 0.0
            for mid, half, smooth in cuts[a]:
                x = mid + half * t
                quad = half * (np.pi / t.size) * smooth(t)
                U = sum(log_moments(x, m2, h2, NU_DEGREE) @ s2.coef[: NU_DEGREE + 1] for m2, h2, s2 in cuts[b])
                total += eq.beta * float(quad @ U)
                if eq.r >= 2:
                    for m2, h2, s2 in cuts[b]:
                        y = m2 + h2 * t
                        quad_y = h2 * (np.pi / t.size) * s2(t)
                        K = eq.potential.two_body(x[:, None], y[None, :], eq.measure).real
                        total += float(quad @ K @ quad_y)
            H[a, b] = H[b, a] = total
    return H


# ---------------------------------------------------------------------------
# The coefficient data at eps*
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class FreeEnergyData:
    """
    Represents the free-energy data at the equilibrium filling fractions eps*.

    Attributes:
        beta: Inverse temperature
        eps_star: Filling fraction of every segment
        gamma: Exponent of N in the prefactor
        step: Spacing of the filling-fraction grid
        values: F^[k] on the grid, by order k and integer offset along eta^1..eta^g
        tensors: Derivative tensors F^[k],(l) by (k, l)
        edge_types: Edge classes of every cut at eps*
        reference: How each order is normalized
        diagnostics: Cross-checks of the derivative tensors
    """

    beta: float
    eps_star: np.ndarray
    gamma: Fraction
    step: float
    values: Dict[int, Dict[Offset, float]] = field(default_factory=dict)
    tensors: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    edge_types: List[Tuple[EdgeType, EdgeType]] = field(default_factory=list)
    reference: Dict[int, str] = field(default_factory=dict)
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def g(self) -> int:
        return self.eps_star.size - 1

    def coefficient(self, k: int) -> Optional[float]:
        return self.values.get(k, {}).get((0,) * self.g)

    @property
    def orders(self) -> List[int]:
        return sorted(k for k in self.values if self.coefficient(k) is not None)

    def tensor(self, k: int, l: int) -> Optional[np.ndarray]:
        return self.tensors.get((k, l))

    def theta_form(self) -> np.ndarray:
        """The positive definite form -F^[-2],(2) of the theta function"""
        if self.g == 0:
            return np.zeros((0, 0))
        return -self.tensors[(-2, 2)]

    def theta_shift(self) -> np.ndarray:
        """v = F^[-1],(1), zero when the first order is not available"""
        t = self.tensors.get((-1, 1))
        return np.zeros(self.g) if t is None else t

    def summary(self) -> Dict[str, Any]:
        return {
            "beta": self.beta,
            "eps_star": self.eps_star.tolist(),
            "gamma": str(self.gamma),
            "gamma_value": float(self.gamma),
            "coefficients": {str(k): self.coefficient(k) for k in self.orders},
            "reference": {str(k): v for k, v in self.reference.items()},
            "tensors": {f"{k},{l}": np.asarray(t).tolist() for (k, l), t in self.tensors.items()},
            "edge_types": [[EdgeType(e).value for e in pair] for pair in self.edge_types],
            "step": self.step,
            "diagnostics": self.diagnostics,
        }


def _filling_at(eps_star: np.ndarray, offset: Offset, step: float) -> np.ndarray:
    eps = eps_star.copy()
    for h, o in enumerate(offset, start=1):
        eps[h] += o * step
        eps[0] -= o * step
    return eps


def free_energy_data(
    model: ModelConfig,
    k_max: int = 0,
    k0: int = 0,
    step: Optional[float] = None,
    eq: Optional[EquilibriumMeasure] = None,
    verify: bool = True,
) -> FreeEnergyData:
    """
    Free-energy coefficients at eps* and the filling-fraction derivative
    tensors the assembly of Z to order k0 reads.

    Args:
        model: The model; eps* is the minimizer with free filling fractions
        k_max: Highest order of F^[k]; on several segments F^[-1] gives the
            theta shift v and higher orders stay relative
        k0: Order of the assembly the tensors are prepared for
        step: Grid spacing, FD_STEP spread over the stencil by default
        eq: Equilibrium at eps*, solved when omitted
        verify: Run the reference-model and derivative cross-checks

    Raises:
        ConfigurationError: unusable filling fractions or cut layout
        NumericalError: failed cross-checks
    """
    if eq is None:
        free = model if model.filling is None else model.with_overrides(filling=None)
        eq = solve_equilibrium(free)
    eps_star = eq.segment_filling
    g = eq.domain.g
    gamma = gamma_exponent(eq.edge_types, model.beta)
    if g == 0:
        values = free_energy_coeffs(eq, k_max=k_max, verify=verify)
        reference = {k: "absolute" if k == -2 else "relative to the one-body reference" for k in values}
        return FreeEnergyData(
            beta=model.beta,
            eps_star=eps_star,
            gamma=gamma,
            step=0.0,
            values={k: {(): v} for k, v in values.items()},
            edge_types=eq.edge_types,
            reference=reference,
        )

    _one_cut_per_segment(eq)
    top = k0 + 2
    radius = grid_radius(top)
    step = step or config.FD_STEP / radius
    offsets = list(product(range(-radius, radius + 1), repeat=g))
    fills = {o: _filling_at(eps_star, o, step) for o in offsets}
    bad = [list(o) for o, e in fills.items() if np.any(e <= 0) or np.any(e >= 1)]
    if bad:
        raise ConfigurationError("filling-fraction grid leaves (0, 1)", {"offsets": bad[:5], "step": step})
    logger.info(f"Free energy on a {2 * radius + 1}^{g} filling-fraction grid, step {step:.3g}")

    def point(offset: Offset) -> Dict[int, float]:
        at = eq if not any(offset) else solve_equilibrium(model, constraints=fills[offset].tolist(), initial=eq.layout)
        if k_max < -1:
            return {-2: -energy(at.measure, at.potential, at.beta)}
        out = free_energy_coeffs(at, k_max=k_max, verify=verify and not any(offset))
        out[-1] += decoupled_first_order(at)
        return out

    results = run_parallel([lambda o=o: point(o) for o in offsets], name="filling grid")
    grids = {k: {o: res[k] for o, res in zip(offsets, results)} for k in results[0]}
    reference = {k: "relative to the decoupled one-cut reference" for k in grids}
    reference[-2] = "absolute"
    if -1 in grids:
        reference[-1] = "absolute, with the multinomial of the segment counts"
    data = FreeEnergyData(
        beta=model.beta,
        eps_star=eps_star,
        gamma=gamma,
        step=step,
        values=grids,
        edge_types=eq.edge_types,
        reference=reference,
    )
    for l in range(1, top + 1):
        data.tensors[(-2, l)] = ff_derivatives(grids[-2], step, l, strict=False)
    if -1 in grids:
        for l in range(1, top):
            data.tensors[(-1, l)] = ff_derivatives(grids[-1], step, l, strict=False)
        data.diagnostics["theta_shift"] = data.theta_shift().tolist()
        logger.info(f"Theta shift v = {np.round(data.theta_shift(), 10).tolist()}")
    if k0 >= 1 and k_max >= 0:
        logger.warning(
            "F[k] for k >= 0 is relative to the decoupled reference on several segments; "
            "its filling derivatives are left out of the assembly"
        )

    if verify:
        inverse = MasterInverse(MasterOperator(eq))
        grad = gradient_from_constants(eq)
        hess = hessian_bilinear(eq, inverse)
        data.diagnostics["gradient_constants"] = grad.tolist()
        data.diagnostics["gradient_mismatch"] = float(np.abs(grad - data.tensors[(-2, 1)]).max())
        data.diagnostics["hessian_bilinear"] = hess.tolist()
        data.diagnostics["hessian_mismatch"] = float(
            np.abs(hess - data.tensors[(-2, 2)]).max() / max(1.0, float(np.abs(hess).max()))
        )
        logger.info(
            f"Derivative cross-checks: gradient {data.diagnostics['gradient_mismatch']:.2e}, "
            f"Hessian {data.diagnostics['hessian_mismatch']:.2e}"
        )
    lam = float(np.linalg.eigvalsh(data.theta_form()).min())
    data.diagnostics["theta_form_min_eigenvalue"] = lam
    if lam <= 0:
        raise NumericalError(
            "the quadratic form of the theta function is not positive definite", {"min_eigenvalue": lam}
        )
    return data


# ---------------------------------------------------------------------------
# Gaussian anchor
# ---------------------------------------------------------------------------


def gaussian_log_z(N: int, beta: float, a: float) -> mpmath.mpf:
    """
    ln of int prod dlambda |Delta|^beta exp(-a sum lambda^2) over R^N:
    (2a)^{-N/2 - beta N(N-1)/4} (2 pi)^{N/2} prod_j Gamma(1 + j beta/2)/Gamma(1 + beta/2).
    """
    b = mpmath.mpf(beta) / 2
    total = -(mpmath.mpf(N) / 2 + mpmath.mpf(beta) * N * (N - 1) / 4) * mpmath.log(2 * mpmath.mpf(a))
    total += mpmath.mpf(N) / 2 * mpmath.log(2 * mpmath.pi)
    total += mpmath.fsum(mpmath.loggamma(1 + j * b) for j in range(1, N + 1))
    total -= N * mpmath.loggamma(1 + b)
    return total


def gaussian_anchor(
    beta: float,
    F_m2: float,
    sizes: Sequence[int] = (100, 150, 200, 250, 300, 350, 400),
    orders: int = 4,
) -> Dict[int, float]:
    """
    F^[-1], F^[0], .. of the Gaussian model exp(-N sum lambda^2) on R, by a
    least-squares fit in 1/N of ln Z_N - ((beta/2) N + gamma) ln N - N^2 F^[-2].
    """
    gamma = gamma_exponent([(EdgeType.soft, EdgeType.soft)], beta)
    rows, rhs = [], []
    with mpmath.workdps(40):
        shift = mpmath.mpf(gamma.numerator) / gamma.denominator
        for N in sizes:
            log_z = gaussian_log_z(N, beta, N)
            rest = log_z - (mpmath.mpf(beta) / 2 * N + shift) * mpmath.log(N) - mpmath.mpf(N) ** 2 * F_m2
            rows.append([float(N) ** (1 - i) for i in range(orders + 1)])
            rhs.append(float(rest))
    coeffs, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    out = {i - 1: float(c) for i, c in enumerate(coeffs)}
    logger.debug(f"Gaussian anchor at beta={beta}: {out}")
    return out


# ---------------------------------------------------------------------------
# First order of the decoupled reference
# ---------------------------------------------------------------------------


def laguerre_log_z(N: int, beta: float) -> mpmath.mpf:
    """ln of int prod dlambda |Delta|^beta exp(-N sum lambda) over [0, inf)^N"""
    b = mpmath.mpf(beta) / 2
    total = -(N + b * N * (N - 1)) * mpmath.log(N)
    total += mpmath.fsum(mpmath.loggamma(1 + j * b) + mpmath.loggamma(1 + (j + 1) * b) for j in range(N))
    return total - N * mpmath.loggamma(1 + b)


def selberg_log_z(N: int, beta: float) -> mpmath.mpf:
    """ln of int prod dlambda |Delta|^beta over [0, 1]^N"""
    b = mpmath.mpf(beta) / 2
    total = mpmath.fsum(
        2 * mpmath.loggamma(1 + j * b) + mpmath.loggamma(1 + (j + 1) * b) - mpmath.loggamma(2 + (N + j - 1) * b)
        for j in range(N)
    )
    return total - N * mpmath.loggamma(1 + b)


def _edge_pair(hard: int) -> Tuple[EdgeType, EdgeType]:
    return tuple(EdgeType.hard if i < hard else EdgeType.soft for i in range(2))


def first_order_fit(
    log_z: Callable[[int], mpmath.mpf], beta: float, hard: int, sizes: Sequence[int] = ANCHOR_SIZES
) -> float:
    """
    Coefficient of N in ln Z_N - ((beta/2) N + gamma) ln N for a one-cut
    model, solving exactly for the powers N^2, N, 1, 1/N, .. at len(sizes)
    particle numbers.
    """
    gamma = gamma_exponent([_edge_pair(hard)], beta)
    with mpmath.workdps(50):
        shift = mpmath.mpf(gamma.numerator) / gamma.denominator
        b = mpmath.mpf(beta) / 2
        rows, rhs = [], []
        for N in sizes:
            n = mpmath.mpf(N)
            rows.append([n ** (2 - i) for i in range(len(sizes))])
            rhs.append(log_z(N) - (b * n + shift) * mpmath.log(n))
        coeffs = mpmath.lu_solve(mpmath.matrix(rows), mpmath.matrix(rhs))
        return float(coeffs[1])


def _anchor(beta: float, hard: int) -> Tuple[Callable[[int], mpmath.mpf], float]:
    """Exactly solvable one-cut model with `hard` hard edges, and int ln(rho) dmu_eq of that model"""
    if hard == 0:
        # semicircle of radius sqrt(beta)
        return (lambda N: gaussian_log_z(N, beta, N)), 0.5 - float(np.log(np.pi * np.sqrt(beta)))
    if hard == 1:
        # Marchenko-Pastur law on [0, 2 beta]
        return (lambda N: laguerre_log_z(N, beta)), 1.0 - float(np.log(np.pi * beta))
    # arcsine law on [0, 1]
    return (lambda N: selberg_log_z(N, beta)), float(np.log(4.0 / np.pi))


@lru_cache(maxsize=None)
def edge_constant(beta: float, hard: int) -> float:
    """
    The universal part c of F^[-1] = (beta/2 - 1) int ln(rho) dmu_eq + c of
    a one-cut model with `hard` hard edges.
    """
    if hard not in (0, 1, 2):
        raise ConfigurationError("a cut has at most two hard edges", {"hard": hard})
    log_z, entropy = _anchor(beta, hard)
    c = first_order_fit(log_z, beta, hard) - (beta / 2 - 1) * entropy
    logger.debug(f"Edge constant at beta={beta} with {hard} hard edge(s): {c:.12g}")
    return c


def log_density_integral(cut: CutProfile, n: int = ENTROPY_NODES) -> float:
    """int ln(rho) rho over one cut; the edge factors come from the exact log-potential"""
    x, w = cut.quadrature(n)
    total = float(np.sum(w * np.log(cut.smooth(x))))
    for a, edge in ((cut.a_lo, cut.lo), (cut.a_hi, cut.hi)):
        if a:
            total += a * float(cut.log_potential(np.array(edge)))
    return total


def decoupled_first_order(eq: EquilibriumMeasure) -> float:
    """
    F^[-1] of the reference without repulsion between segments, including
    the multinomial N!/prod N_h! of the segment counts:
        sum over cuts of (beta/2 - 1) int_S_h ln(rho) dmu_eq + eps_h c(beta, edges_h).
    """
    _one_cut_per_segment(eq)
    total = 0.0
    for cut, mass, pair in zip(eq.measure.cuts, eq.filling, eq.edge_types):
        hard = sum(1 for e in pair if EdgeType(e) is EdgeType.hard)
        total += (eq.beta / 2 - 1) * log_density_integral(cut) + float(mass) * edge_constant(float(eq.beta), hard)
    return total
