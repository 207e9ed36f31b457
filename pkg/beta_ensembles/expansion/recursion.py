"""Order-by-order solution of the loop equations for the correlator coefficients W_n^[k]."""

from dataclasses import dataclass, field
from functools import reduce as fold
from operator import add
from typing import Any, Dict, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
from loguru import logger

from beta_ensembles.core import config
from beta_ensembles.core.errors import MissingCoefficient, NumericalError, TensorBudgetExceeded
from beta_ensembles.equilibrium.solver import EquilibriumMeasure
from beta_ensembles.expansion.operators import Block, LoopOperators
from beta_ensembles.expansion.partitions import check_arity, compositions, dispatchings, set_partitions, subsets
from beta_ensembles.model.analytic import AnalyticFunction, LaurentTensor, as_function
from beta_ensembles.operators.fredholm import MasterInverse
from beta_ensembles.operators.master import MasterOperator

# Sources integrate on this level, their outputs live one level out and
# the inverted coefficients two levels out
SOURCE_LEVEL = 1
# Largest admissible single-slot period of a stored coefficient, relative to its size
PERIOD_TOL = 1e-8

Key = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class CorrelatorCoeff:
    """
    Represents the coefficient W_n^[k] of N^-k in the connected n-point correlator.

    Attributes:
        n: Number of variables
        k: Order in 1/N, at least n - 2
        tensor: Laurent coefficients over all n slots
        symmetric: Whether the stored tensor was symmetrized over its slots
    """

    n: int
    k: int
    tensor: LaurentTensor
    symmetric: bool = True

    def __call__(self, *points) -> np.ndarray:
        """Values on the grid points[0] x .. x points[n-1]"""
        return self.tensor.grid(*[np.atleast_1d(np.asarray(p, dtype=complex)) for p in points])

    def max_period(self) -> float:
        """Largest slot period, the other slots evaluated on the tensor's contour level"""
        return max(float(np.abs(self.tensor.period_values(axis)).max(initial=0.0)) for axis in range(self.n))

    def asymmetry(self) -> float:
        if self.n < 2:
            return 0.0
        c = self.tensor.coeffs
        return float(np.abs(c - np.swapaxes(c, 0, 1)).max())

    def summary(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "k": self.k,
            "degree": self.tensor.degree,
            "level": self.tensor.level,
            "max_period": self.max_period(),
            "max_coeff": float(np.abs(self.tensor.coeffs).max(initial=0.0)),
            "sup_on_level": self.tensor.sup_on_level(),
        }


@dataclass(eq=False)
class ExpansionCache:
    """
    Represents the computed coefficients W_n^[k] around one equilibrium measure.

    Every stored (n, k) comes with all the coefficients its source reads.
    W_1^[-1] is W_eq itself and W_m^[l] vanishes for l < m - 2.
    """

    eq: EquilibriumMeasure
    ops: LoopOperators
    inverse: MasterInverse
    w_eq: LaurentTensor
    entries: Dict[Key, CorrelatorCoeff] = field(default_factory=dict)
    n_max: int = 0
    k_max: int = -1

    def __contains__(self, key: Key) -> bool:
        n, k = key
        return k < n - 2 or (n, k) == (1, -1) or key in self.entries

    def tensor(self, n: int, k: int) -> Optional[LaurentTensor]:
        """
        The stored tensor of W_n^[k], None when it vanishes identically.

        Raises:
            MissingCoefficient: (n, k) has not been computed yet
        """
        if k < n - 2:
            return None
        if (n, k) == (1, -1):
            return self.w_eq
        if (n, k) not in self.entries:
            raise MissingCoefficient(f"W_{n}^[{k}] is not in the cache", {"n": n, "k": k})
        return self.entries[(n, k)].tensor

    def w1(self, k: int) -> LaurentTensor:
        t = self.tensor(1, k)
        return t if t is not None else LaurentTensor.zeros(self.ops.family, 1, level=SOURCE_LEVEL + 2)

    def series(self, n: int, N: float, k_max: Optional[int] = None) -> List[Tuple[float, LaurentTensor]]:
        """(N^-k, W_n^[k]) pairs of the truncated expansion of W_n, W_1 including N W_eq"""
        k_max = self.k_max if k_max is None else k_max
        out = []
        for k in range(max(n - 2, -1), k_max + 1):
            t = self.tensor(n, k)
            if t is not None:
                out.append((float(N) ** (-k), t))
        return out

    @property
    def provenance(self) -> Dict[str, Any]:
        return {
            "edges": self.eq.edges.tolist(),
            "filling": self.eq.filling.tolist(),
            "beta": self.eq.beta,
            "r": self.eq.r,
            "contour_levels": self.ops.family.i_max,
            "nodes": self.ops.family.nodes,
            "degree": self.ops.family.degree,
            "inner_degree": self.ops.inner_degree,
        }

    def summary(self) -> Dict[str, Any]:
        return {
            "n_max": self.n_max,
            "k_max": self.k_max,
            "coefficients": [self.entries[key].summary() for key in sorted(self.entries)],
            "provenance": self.provenance,
        }


# ---------------------------------------------------------------------------
# Terms of the source
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SourceTerm:
    """
    One contribution to the order-k source of W_n.

    `kind` is one of derivative, d2, d2pair, d1, t. `factors` lists
    (arity, order, external labels) of the correlators involved; for t
    terms `slots` holds the argument indices of every factor, for d1
    `label` is the external variable paired with the second slot.
    """

    kind: str
    factors: Tuple[Tuple[int, int, Tuple[int, ...]], ...]
    slots: Tuple[Tuple[int, ...], ...] = ()
    label: int = 0

    def needs(self) -> Iterator[Key]:
        for m, l, _ in self.factors:
            if l >= m - 2 and (m, l) != (1, -1):
                yield (m, l)

    def vanishes(self) -> bool:
        return any(l < m - 2 for m, l, _ in self.factors)


def source_terms(n: int, k: int, r: int, beta: float) -> Iterator[SourceTerm]:
    """
    Contributions to the source of W_n^[k], the linear part in W_n^[k]
    removed. External variables are labelled 1..n-1.
    """
    check_arity(r)
    I = tuple(range(1, n))
    p = k
    if beta != 2.0:
        yield SourceTerm("derivative", ((n, p - 1, I),))
    yield SourceTerm("d2", ((n + 1, p - 1, I),))
    for J in subsets(I):
        rest = tuple(i for i in I if i not in J)
        for a in range(0, p):
            b = p - 1 - a
            yield SourceTerm("d2pair", ((len(J) + 1, a, J), (len(rest) + 1, b, rest)))
    for i in I:
        yield SourceTerm("d1", ((n - 1, p - 1, tuple(j for j in I if j != i)),), label=i)
    for partition in set_partitions(r):
        for dispatch in dispatchings(I, len(partition)):
            lower = [max(len(B) + len(IB) - 2, -1) for B, IB in zip(partition, dispatch)]
            for orders in compositions(p + 1 - r, lower, p):
                if _linear(partition, dispatch, orders, p):
                    continue
                factors = tuple((len(B) + len(IB), o, IB) for B, IB, o in zip(partition, dispatch, orders))
                yield SourceTerm("t", factors, slots=tuple(partition))


def _linear(partition, dispatch, orders, p: int) -> bool:
    """Whether a T-term is one of the terms of the master operator acting on W_n^[p]"""
    if any(len(B) != 1 for B in partition):
        return False
    spectators = sum(1 for IB, o in zip(dispatch, orders) if not IB and o == -1)
    return spectators == len(partition) - 1 and max(orders) == p


def dependencies(n: int, k: int, r: int, beta: float) -> Set[Key]:
    return {key for term in source_terms(n, k, r, beta) if not term.vanishes() for key in term.needs()}


def _canonical(t: LaurentTensor, labels: Sequence[int]) -> LaurentTensor:
    """Reorder the external axes (1..) of a source contribution into increasing labels"""
    order = [0] + [1 + i for i in np.argsort(labels, kind="stable")]
    if order == list(range(t.arity)):
        return t
    return LaurentTensor(t.family, np.transpose(t.coeffs, order), t.degree, t.level, t.decay)


def _contribution(term: SourceTerm, cache: ExpansionCache, n: int) -> Optional[LaurentTensor]:
    ops = cache.ops
    L = SOURCE_LEVEL
    tensors = [cache.tensor(m, l) for m, l, _ in term.factors]
    if any(t is None for t in tensors):
        return None
    if term.kind == "derivative":
        return ops.derivative_term(tensors[0], L)
    if term.kind == "d2":
        return ops.op_D2(tensors[0], L)
    if term.kind == "d2pair":
        (_, _, J), (_, _, rest) = term.factors
        out = ops.op_D2_pair(Block.of(tensors[0]), Block.of(tensors[1]), L)
        return _canonical(out, J + rest)
    if term.kind == "d1":
        (_, _, rest), = term.factors
        out = ops.op_D1(Block.of(tensors[0]), L)
        return _canonical(out, (term.label,) + rest)
    blocks = [(Block.of(t, slots=len(B)), B) for t, B in zip(tensors, term.slots)]
    labels = tuple(i for _, _, IB in term.factors for i in IB)
    return _canonical(ops.op_T(blocks, L), labels)


def assemble_source(n: int, k: int, cache: ExpansionCache) -> LaurentTensor:
    """
    The right-hand side S with K[W_n^[k]] = S, as a tensor whose axis 0 is
    the loop-equation variable x and whose other axes are x_1 .. x_{n-1}.

    Raises:
        MissingCoefficient: a coefficient the source reads is not cached
        TensorBudgetExceeded: r is too large for the partition sums
    """
    parts = []
    for term in source_terms(n, k, cache.eq.r, cache.eq.beta):
        if term.vanishes():
            continue
        part = _contribution(term, cache, n)
        if part is not None:
            parts.append(part)
    if not parts:
        degree = cache.ops.degree_for(n)
        return LaurentTensor.zeros(cache.ops.family, n, degree=degree, level=SOURCE_LEVEL + 1)
    return fold(add, parts).scaled(-1.0)


# ---------------------------------------------------------------------------
# The recursion
# ---------------------------------------------------------------------------


def _closure(targets: Sequence[Key], r: int, beta: float) -> List[Key]:
    """Every coefficient the targets depend on, in an order where dependencies come first"""
    seen: Set[Key] = set()
    stack = list(targets)
    while stack:
        key = stack.pop()
        if key in seen:
            continue
        seen.add(key)
        stack.extend(dependencies(*key, r, beta) - seen)
    return sorted(seen, key=lambda key: (key[1], key[0]))


def _check_size(ops: LoopOperators, n: int, k: int) -> None:
    entries = (ops.family.size * ops.degree_for(n)) ** n
    if entries > config.MAX_TENSOR:
        raise TensorBudgetExceeded(
            f"W_{n}^[{k}] needs {entries} coefficients, above BE_MAX_TENSOR={config.MAX_TENSOR}",
            {"n": n, "k": k, "entries": entries},
        )


def solve_coefficient(n: int, k: int, cache: ExpansionCache) -> CorrelatorCoeff:
    """
    W_n^[k] = K^-1[source], symmetrized and checked for vanishing periods.

    Raises:
        NotInImageError: annotated with (n, k)
        NumericalError: a slot period does not vanish
    """
    _check_size(cache.ops, n, k)
    psi = assemble_source(n, k, cache).chopped()
    if psi.is_zero():
        tensor = LaurentTensor.zeros(cache.ops.family, n, degree=psi.degree, level=SOURCE_LEVEL + 2)
    else:
        try:
            tensor = cache.inverse.solve_tensor(psi)
        except NumericalError as exc:
            exc.details.update({"n": n, "k": k})
            raise
        if n > 1:
            tensor = tensor.symmetrized()
        tensor = tensor.chopped()
    coeff = CorrelatorCoeff(n=n, k=k, tensor=tensor)
    scale = max(tensor.sup_on_level(), 1.0)
    period = coeff.max_period()
    if period > PERIOD_TOL * scale:
        raise NumericalError(
            f"W_{n}^[{k}] has a non-vanishing period",
            {"n": n, "k": k, "period": period, "tol": PERIOD_TOL * scale},
        )
    logger.debug(f"W_{n}^[{k}]: sup on level {tensor.level} {scale:.4g}, max period {period:.2e}")
    return coeff


def build_cache(
    eq: EquilibriumMeasure,
    ops: Optional[LoopOperators] = None,
    inverse: Optional[MasterInverse] = None,
    i_max: int = 8,
) -> ExpansionCache:
    if ops is None:
        numerics = eq.config.numerics
        family = eq.family(numerics, i_max=max(i_max, SOURCE_LEVEL + 5))
        ops = LoopOperators(MasterOperator(eq, family), numerics.inner_nodes, numerics.inner_degree)
    inverse = inverse or MasterInverse(ops.op)
    w_eq = AnalyticFunction.from_callable(ops.family, eq.W, level=0)
    return ExpansionCache(eq=eq, ops=ops, inverse=inverse, w_eq=w_eq)


def expand_correlators(
    eq: EquilibriumMeasure,
    ops: Optional[LoopOperators] = None,
    n_max: int = 2,
    k_max: int = 0,
    cache: Optional[ExpansionCache] = None,
) -> ExpansionCache:
    """
    All W_n^[k] for n <= n_max and n - 2 <= k <= k_max, plus whatever they depend on.

    Args:
        eq: Off-critical equilibrium measure of the fixed filling fraction model
        ops: Loop-equation operators; built on a fresh contour family when omitted
        n_max: Largest number of variables
        k_max: Largest order in 1/N
        cache: Existing cache to extend

    Returns:
        ExpansionCache closed under the dependencies of the recursion
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if cache is None:
        cache = build_cache(eq, ops, i_max=2 * (max(k_max, 0) + n_max) + 4)
    targets = [(n, k) for n in range(1, n_max + 1) for k in range(max(n - 2, 0), k_max + 1)]
    logger.info(f"Expanding correlators up to n={n_max}, k={k_max}")
    return extend_cache(cache, targets)


def extend_cache(cache: ExpansionCache, targets: Sequence[Key]) -> ExpansionCache:
    """Solve the given (n, k) and everything they depend on, skipping stored entries"""
    order = _closure([t for t in targets if t[1] >= t[0] - 2 and t != (1, -1)], cache.eq.r, cache.eq.beta)
    missing = [key for key in order if key not in cache.entries]
    logger.debug(f"{len(missing)} coefficient(s) to solve out of {len(order)}")
    for n, k in missing:
        cache.entries[(n, k)] = solve_coefficient(n, k, cache)
    for n, k in order:
        cache.n_max = max(cache.n_max, n)
        cache.k_max = max(cache.k_max, k)
    return cache


# ---------------------------------------------------------------------------
# Derived quantities and checks
# ---------------------------------------------------------------------------


def correlator(cache: ExpansionCache, points: Sequence[complex], N: float, k_max: Optional[int] = None) -> complex:
    """Truncated expansion of the connected correlator W_n at one point of C^n"""
    n = len(points)
    pts = [np.array([p], dtype=complex) for p in points]
    total = 0j
    for weight, t in cache.series(n, N, k_max):
        total += weight * complex(t.grid(*pts).ravel()[0])
    return total


def disconnected(cache: ExpansionCache, points: Sequence[complex], N: float, k_max: Optional[int] = None) -> complex:
    """W~_n: the sum over set partitions of the slots of products of connected correlators"""
    total = 0j
    for partition in set_partitions(len(points)):
        term = 1 + 0j
        for block in partition:
            term *= correlator(cache, [points[i] for i in block], N, k_max)
        total += term
    return total


def exterior_points(cache: ExpansionCache, count: int = 10) -> np.ndarray:
    """Points on a circle enclosing every contour of the family"""
    op = cache.ops.op
    theta = 2 * np.pi * (np.arange(count) + 0.5) / count
    return op.center + op.radius * np.exp(1j * theta)


def sd_residual(cache: ExpansionCache, points: Optional[np.ndarray] = None) -> Dict[int, float]:
    """
    Order-by-order residual |K[W_1^[k]] - S_1^[k]| / max |S_1^[k]| of the
    one-point loop equation at exterior points, for k = 0 .. k_max.
    """
    points = exterior_points(cache) if points is None else np.asarray(points, dtype=complex)
    op = cache.ops.op
    out = {}
    for k in range(0, cache.k_max + 1):
        psi = as_function(assemble_source(1, k, cache))
        phi = as_function(cache.tensor(1, k))
        lhs = op.op_K(phi)(points)
        rhs = psi(points)
        scale = max(float(np.abs(rhs).max()), float(np.abs(lhs).max()), 1e-300)
        out[k] = float(np.abs(lhs - rhs).max()) / scale if scale > 1e-300 else 0.0
        logger.debug(f"Loop equation at order {k}: residual {out[k]:.3e}")
    return out
