from dataclasses import dataclass, field, replace
from itertools import permutations
from math import comb, factorial
from typing import Callable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from numpy.polynomial import Polynomial

from beta_ensembles.core.errors import DomainError, EvaluationError, PotentialError
from beta_ensembles.model.contours import Region
from beta_ensembles.model.models import Domain, ModelConfig, PotentialSpec, PotentialType, build_domain

ArrayLike = Union[np.ndarray, complex, float]

# Largest arity for which permutation sums are enumerated
MAX_ARITY = 8


class WeightedNodes(Protocol):
    nodes: np.ndarray
    weights: np.ndarray


# ---------------------------------------------------------------------------
# One-variable factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolyFactor:
    poly: Polynomial

    def __call__(self, x: ArrayLike) -> np.ndarray:
        return self.poly(np.asarray(x, dtype=complex))

    def derivative(self, x: ArrayLike) -> np.ndarray:
        return self.poly.deriv()(np.asarray(x, dtype=complex))

    @property
    def constant(self) -> bool:
        return np.allclose(self.poly.coef[1:], 0.0)

    @property
    def degree(self) -> int:
        return self.poly.degree()


ONE = PolyFactor(Polynomial([1.0]))


@dataclass(frozen=True, eq=False)
class FunctionFactor:
    """Analytic one-variable factor given by callables (used for reference potentials)"""

    func: Callable[[np.ndarray], np.ndarray]
    dfunc: Callable[[np.ndarray], np.ndarray]
    label: str = "f"

    def __call__(self, x: ArrayLike) -> np.ndarray:
        return np.asarray(self.func(np.asarray(x, dtype=complex)), dtype=complex)

    def derivative(self, x: ArrayLike) -> np.ndarray:
        return np.asarray(self.dfunc(np.asarray(x, dtype=complex)), dtype=complex)

    constant = False


Factor = Union[PolyFactor, FunctionFactor]


# ---------------------------------------------------------------------------
# Pair kernels K(x, y), symmetric and analytic near A x A
# ---------------------------------------------------------------------------


def _even(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Fold z into Re >= 0 and return the sign used"""
    sign = np.where(z.real < 0, -1.0, 1.0)
    return z * sign, sign


def log_sinhc(z: ArrayLike) -> np.ndarray:
    """ln( sinh(z/2) / (z/2) ), even and analytic for |Im z| < 2 pi"""
    z = np.asarray(z, dtype=complex)
    s, _ = _even(z)
    small = np.abs(s) < 1e-3
    safe = np.where(small, 1.0, s)
    big = safe / 2 + np.log1p(-np.exp(-safe)) - np.log(2.0) - np.log(safe / 2)
    series = s**2 / 24 - s**4 / 2880 + s**6 / 181440
    return np.where(small, series, big)


def dlog_sinhc(z: ArrayLike) -> np.ndarray:
    """d/dz ln( sinh(z/2) / (z/2) ) = coth(z/2)/2 - 1/z, odd"""
    z = np.asarray(z, dtype=complex)
    s, sign = _even(z)
    small = np.abs(s) < 1e-3
    safe = np.where(small, 1.0, s)
    e = np.exp(-safe)
    big = 0.5 * (1 + e) / (1 - e) - 1.0 / safe
    series = s / 12 - s**3 / 720 + s**5 / 30240
    return sign * np.where(small, series, big)


def d2log_sinhc(z: ArrayLike) -> np.ndarray:
    """Second derivative 1/z^2 - 1/(4 sinh^2(z/2)), even"""
    z = np.asarray(z, dtype=complex)
    s, _ = _even(z)
    small = np.abs(s) < 1e-3
    safe = np.where(small, 1.0, s)
    e = np.exp(-safe)
    big = 1.0 / safe**2 - e / (1 - e) ** 2
    series = 1.0 / 12 - s**2 / 240 + s**4 / 6048
    return np.where(small, series, big)


class PairKernel:
    """Symmetric two-variable kernel K(x, y)"""

    name = "kernel"
    translation_invariant = False

    def __call__(self, x: ArrayLike, y: ArrayLike) -> np.ndarray:
        raise NotImplementedError

    def d1(self, x: ArrayLike, y: ArrayLike) -> np.ndarray:
        """Derivative in the first argument"""
        raise NotImplementedError

    def profile_d2(self, z: np.ndarray) -> np.ndarray:
        """u''(z) for kernels of the form u(x - y)"""
        raise PotentialError(f"{self.name} kernel is not translation invariant")

    def region(self, domain: Domain) -> Region:
        return Region()


@dataclass(frozen=True)
class SinhKernel(PairKernel):
    """K = scale * ln( sinh((x-y)/2) / ((x-y)/2) )"""

    scale: float
    name = "sinh"
    translation_invariant = True

    def __call__(self, x, y):
        return self.scale * log_sinhc(np.asarray(x, dtype=complex) - y)

    def d1(self, x, y):
        return self.scale * dlog_sinhc(np.asarray(x, dtype=complex) - y)

    def profile_d2(self, z):
        return self.scale * d2log_sinhc(z)

    def region(self, domain: Domain) -> Region:
        return Region(strip=np.pi)


@dataclass(frozen=True)
class QPochhammerKernel(PairKernel):
    """K = (beta/2) sum_{k=1..K} ln((1 - q^k e^z)(1 - q^k e^-z)), z = x - y"""

    beta: float
    q: float
    name = "qdeformed"

    @property
    def order(self) -> int:
        return int(np.ceil(np.log(1e-16) / np.log(self.q)))

    def _powers(self) -> np.ndarray:
        return self.q ** np.arange(1, self.order + 1)

    def __call__(self, x, y):
        z = np.asarray(np.asarray(x, dtype=complex) - y)[..., None]
        qk = self._powers()
        terms = np.log(1 - qk * np.exp(z)) + np.log(1 - qk * np.exp(-z))
        return 0.5 * self.beta * terms.sum(axis=-1)

    def d1(self, x, y):
        z = np.asarray(np.asarray(x, dtype=complex) - y)[..., None]
        qk = self._powers()
        a = qk * np.exp(z)
        b = qk * np.exp(-z)
        return 0.5 * self.beta * (-a / (1 - a) + b / (1 - b)).sum(axis=-1)

    def region(self, domain: Domain) -> Region:
        lo, hi = domain.hull
        reach = np.log(1.0 / self.q)
        if hi - lo >= reach:
            raise PotentialError(
                "qdeformed kernel is singular on this domain: its diameter must stay "
                f"below ln(1/q) = {reach:.4g}",
                {"diameter": hi - lo},
            )
        margin = 0.45 * (reach - (hi - lo))
        return Region(strip=np.pi, re_min=lo - margin, re_max=hi + margin)


@dataclass(frozen=True)
class LogSumKernel(PairKernel):
    """K = strength * ln(x + y), analytic for Re x, Re y > 0"""

    strength: float
    name = "onmodel"

    def __call__(self, x, y):
        return self.strength * np.log(np.asarray(x, dtype=complex) + y)

    def d1(self, x, y):
        return self.strength / (np.asarray(x, dtype=complex) + y)

    def region(self, domain: Domain) -> Region:
        if domain.hull[0] <= 0:
            raise PotentialError("onmodel kernel needs a domain inside (0, inf)")
        return Region(re_min=0.0)


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SeparableTerm:
    """
    coeff * Sym[ prod_j f_j(x_j) ], the average over the r! permutations.

    Arity is len(factors); shorter factor lists are padded with 1.
    """

    coeff: float
    factors: Tuple[Factor, ...]

    def padded(self, r: int) -> "SeparableTerm":
        if len(self.factors) > r:
            raise PotentialError(f"term has {len(self.factors)} factors for arity {r}")
        return replace(self, factors=tuple(self.factors) + (ONE,) * (r - len(self.factors)))

    def reduce(
        self,
        active: Sequence[np.ndarray],
        mu: Optional[WeightedNodes],
        derivative: bool = False,
    ) -> np.ndarray:
        r = len(self.factors)
        m = len(active)
        values = []
        for f in self.factors:
            row = [f.derivative(active[0]) if (derivative and j == 0) else f(a) for j, a in enumerate(active)]
            values.append(row)
        moments = (
            np.array([np.sum(mu.weights * f(mu.nodes)) for f in self.factors]) if m < r else np.ones(r)
        )
        total = 0.0
        for idx in permutations(range(r), m):
            prod = np.prod([moments[i] for i in range(r) if i not in idx])
            term = prod
            for j, i in enumerate(idx):
                term = term * values[i][j]
            total = total + term
        return self.coeff * total * factorial(r - m) / factorial(r)


@dataclass(frozen=True, eq=False)
class PairTerm:
    """
    coeff * (r - 2)! * sum_{a < b} K(x_a, x_b).

    The (r-2)! normalization makes the pair interaction independent of the
    arity it is embedded in.
    """

    coeff: float
    kernel: PairKernel

    def reduce(
        self,
        active: Sequence[np.ndarray],
        mu: Optional[WeightedNodes],
        r: int,
        derivative: bool = False,
    ) -> np.ndarray:
        m = len(active)
        rest = r - m
        mass = float(np.sum(mu.weights).real) if mu is not None and rest else 1.0
        K = self.kernel

        def against(a: np.ndarray, func: Callable) -> np.ndarray:
            a = np.asarray(a, dtype=complex)
            vals = func(a.ravel()[:, None], mu.nodes[None, :]) @ mu.weights
            return vals.reshape(a.shape)

        total = 0.0
        if derivative:
            for j in range(1, m):
                total = total + K.d1(active[0], active[j]) * mass**rest
            if rest:
                total = total + rest * against(active[0], K.d1) * mass ** (rest - 1)
        else:
            for i in range(m):
                for j in range(i + 1, m):
                    total = total + K(active[i], active[j]) * mass**rest
            if rest:
                for i in range(m):
                    total = total + rest * against(active[i], K) * mass ** (rest - 1)
            if rest >= 2:
                inner = np.sum(mu.weights * against(mu.nodes, K))
                total = total + comb(rest, 2) * inner * mass ** (rest - 2)
        return self.coeff * factorial(r - 2) * total


Term = Union[SeparableTerm, PairTerm]


# ---------------------------------------------------------------------------
# The potential
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RBodyPotential:
    """
    Symmetric analytic r-body interaction T(x_1, ..., x_r).

    The model weight is exp(N^{2-r}/r! * sum over index tuples of T);
    terms of lower arity are padded with constant factors.
    """

    r: int
    terms: Tuple[Term, ...]
    region: Region = field(default_factory=Region)
    label: str = "custom"

    def __post_init__(self):
        if self.r < 1:
            raise PotentialError("arity r must be >= 1")
        if self.r > MAX_ARITY:
            raise PotentialError(f"arity r={self.r} exceeds {MAX_ARITY}")
        padded = []
        for term in self.terms:
            if isinstance(term, SeparableTerm):
                padded.append(term.padded(self.r))
            elif isinstance(term, PairTerm):
                if self.r < 2:
                    raise PotentialError("pair kernels need r >= 2")
                padded.append(term)
            else:
                raise PotentialError(f"unsupported term {term!r}")
        object.__setattr__(self, "terms", tuple(padded))

    # -- evaluation ---------------------------------------------------------

    def __call__(self, *pts: ArrayLike) -> np.ndarray:
        return self.reduce(list(pts), None)

    def d1(self, *pts: ArrayLike) -> np.ndarray:
        return self.reduce(list(pts), None, derivative=True)

    def reduce(
        self,
        active: Sequence[ArrayLike],
        mu: Optional[WeightedNodes],
        derivative: bool = False,
    ) -> np.ndarray:
        """
        int T(a_1, .., a_m, xi_{m+1}, .., xi_r) prod dmu(xi), optionally d/da_1.

        No factorial normalization is applied.
        """
        active = [np.asarray(a, dtype=complex) for a in active]
        if len(active) > self.r:
            raise PotentialError(f"{len(active)} arguments for arity {self.r}")
        if len(active) < self.r and mu is None:
            raise PotentialError("a measure is needed to integrate the free slots")
        if derivative and not active:
            raise PotentialError("derivative needs at least one argument")
        shape = np.broadcast(*active).shape if active else ()
        total = np.zeros(shape, dtype=complex)
        for term in self.terms:
            if isinstance(term, SeparableTerm):
                total = total + term.reduce(active, mu, derivative)
            else:
                total = total + term.reduce(active, mu, self.r, derivative)
        return total

    def one_body(self, x: ArrayLike, mu: WeightedNodes, derivative: bool = False) -> np.ndarray:
        """V_1(x) = int T(x, xi_2..) prod dmu / (r-1)!"""
        return self.reduce([x], mu, derivative) / factorial(self.r - 1)

    def two_body(self, x: ArrayLike, y: ArrayLike, mu: WeightedNodes, derivative: bool = False) -> np.ndarray:
        """K_2(x, y) = int T(x, y, xi_3..) prod dmu / (r-2)!, zero for r = 1"""
        if self.r < 2:
            return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=complex)
        return self.reduce([x, y], mu, derivative) / factorial(self.r - 2)

    def average(self, mu: WeightedNodes) -> float:
        """int T dmu^r / r!"""
        return float(self.reduce([], mu).real) / factorial(self.r)

    # -- algebra ------------------------------------------------------------

    def scaled(self, t: float) -> "RBodyPotential":
        terms = tuple(replace(term, coeff=term.coeff * t) for term in self.terms)
        return replace(self, terms=terms)

    def __add__(self, other: "RBodyPotential") -> "RBodyPotential":
        if other.r != self.r:
            raise PotentialError("only potentials of the same arity can be added")
        return RBodyPotential(
            r=self.r,
            terms=self.terms + other.terms,
            region=self.region.intersect(other.region),
            label=f"{self.label}+{other.label}",
        )

    @property
    def separable_terms(self) -> List[SeparableTerm]:
        return [t for t in self.terms if isinstance(t, SeparableTerm)]

    @property
    def pair_terms(self) -> List[PairTerm]:
        return [t for t in self.terms if isinstance(t, PairTerm)]

    def couples_particles(self) -> bool:
        """Whether some term depends on two or more variables"""
        if self.pair_terms:
            return True
        return any(sum(not f.constant for f in t.factors) > 1 for t in self.separable_terms)

    def check_region(self, *pts: ArrayLike) -> None:
        for p in pts:
            if not np.all(self.region.contains(p)):
                raise EvaluationError(
                    "point outside the analyticity region of the potential",
                    {"points": np.asarray(p).ravel()[:5].tolist()},
                )


def eval_potential(T: RBodyPotential, pts: Sequence[ArrayLike], derivative: bool = False) -> np.ndarray:
    """
    T(pts) or d/dx_1 T(pts) at r complex points.

    Raises:
        EvaluationError: a point lies outside the declared analyticity region
        PotentialError: wrong number of points
    """
    if len(pts) != T.r:
        raise PotentialError(f"expected {T.r} points, got {len(pts)}")
    T.check_region(*pts)
    return T.d1(*pts) if derivative else T(*pts)


def one_body_term(r: int, func: Factor) -> SeparableTerm:
    """The term (r-1)! sum_j f(x_j), i.e. N sum_i f(lambda_i) in the model weight"""
    return SeparableTerm(coeff=float(factorial(r)), factors=(func,))


def build_potential(spec: PotentialSpec, r: int, beta: float, domain: Domain) -> RBodyPotential:
    """
    Turn a validated potential block into an RBodyPotential.

    Raises:
        PotentialError: preset incompatible with the arity or the domain
    """
    terms: List[Term] = []
    kernel: Optional[PairKernel] = None
    if spec.type is PotentialType.polynomial_sum:
        for t in spec.terms:
            if len(t.polys) > r:
                raise PotentialError(f"term with {len(t.polys)} factors for r={r}")
            terms.append(SeparableTerm(t.coeff, tuple(PolyFactor(Polynomial(p)) for p in t.polys)))
    elif spec.type is PotentialType.sinh:
        kernel = SinhKernel(spec.scale if spec.scale is not None else beta)
    elif spec.type is PotentialType.qdeformed:
        kernel = QPochhammerKernel(beta=beta, q=spec.q)
        terms.append(PairTerm(1.0, SinhKernel(spec.scale if spec.scale is not None else beta)))
    elif spec.type is PotentialType.onmodel:
        kernel = LogSumKernel(-0.5 * spec.n * beta)
    if kernel is not None:
        if r < 2:
            raise PotentialError(f"{spec.type.value} preset needs r >= 2")
        terms.append(PairTerm(1.0, kernel))
    if spec.onebody:
        terms.append(one_body_term(r, PolyFactor(Polynomial(spec.onebody))))

    region = Region()
    for term in terms:
        if isinstance(term, PairTerm):
            region = region.intersect(term.kernel.region(domain))
    potential = RBodyPotential(r=r, terms=tuple(terms), region=region, label=spec.type.value)
    logger.debug(f"Built {spec.type.value} potential with {len(terms)} term(s), r={r}")
    return potential


def truncate_domain(cfg: ModelConfig) -> ModelConfig:
    """
    Replace unbounded endpoints by +-M with confinement f(M) >= 2 beta ln M.

    f is read off the potential as -Re T(x, x_0, .., x_0)/(r-1)! at |x| = M,
    with x_0 the finite endpoint of the segment. This is a heuristic check
    of the growth condition, performed only at the truncation point.
    """
    if cfg.bounded:
        return cfg
    provisional = [[e if e is not None else (1.0 if i else -1.0) for i, e in enumerate(p)] for p in cfg.segments]
    lo = min(p[0] for p in provisional)
    hi = max(p[1] for p in provisional)
    potential = build_potential(cfg.potential, cfg.r, cfg.beta, build_domain([[lo, hi]]))
    segments = []
    for lo_e, hi_e in cfg.segments:
        anchor = lo_e if lo_e is not None else hi_e if hi_e is not None else 0.0
        new = []
        for sign, e in ((-1.0, lo_e), (1.0, hi_e)):
            if e is not None:
                new.append(e)
                continue
            M = max(2.0, abs(anchor) + 1.0)
            while M < 1e6:
                args = [np.array(sign * M)] + [np.array(anchor)] * (cfg.r - 1)
                confinement = -potential(*args).real / factorial(cfg.r - 1)
                if confinement >= 2 * cfg.beta * np.log(M):
                    break
                M *= 2.0
            else:
                raise DomainError("potential does not confine: cannot truncate the domain")
            new.append(sign * M)
        segments.append(new)
    logger.info(f"Truncated unbounded domain to {segments}")
    return cfg.with_overrides(segments=segments)
