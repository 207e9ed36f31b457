"""
Metropolis sampling of the beta-ensemble Gibbs measure

    dP(lambda) ~ prod_{i<j} |lambda_i - lambda_j|^beta
                 exp(N^{2-r}/r! sum_{i_1..i_r} T(lambda_{i_1}, .., lambda_{i_r})) prod d lambda_i

on A^N, or on A_{N_0} x .. x A_{N_g} when the filling fractions are fixed.
"""

import hashlib
import json
from dataclasses import dataclass, field
from math import comb, factorial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from loguru import logger
from scipy.optimize import brentq

from beta_ensembles.core import config
from beta_ensembles.core.errors import ConfigurationError, NumericalError
from beta_ensembles.core.utils import run_parallel
from beta_ensembles.equilibrium.solver import EquilibriumMeasure
from beta_ensembles.model.models import Domain, ModelConfig
from beta_ensembles.model.potential import PairTerm, RBodyPotential, SeparableTerm, build_potential, truncate_domain

TARGET_ACCEPTANCE = 0.3
# Production acceptance below this is treated as a stuck chain
MIN_ACCEPTANCE = 0.01
# Single-particle moves between two audits of the cached log density
AUDIT_EVERY = 10_000
AUDIT_TOL = 1e-8
# Proposals closer than this to another particle are rejected
COLLISION = 1e-12
# Share of segment-jump proposals in the unconstrained model
JUMP_RATE = 0.1
# Largest N accepted for interactions of arity 4 and more
MAX_COSTLY_N = 200


def _real(values) -> np.ndarray:
    return np.real(np.asarray(values))


class LogDensity:
    """
    Log of the unnormalized density, kept as cached partial sums.

    Separable terms are stored through the sums S_j = sum_i f_j(lambda_i) of
    their factors, pair terms through P = sum_{i,j} K(lambda_i, lambda_j), so
    that moving one particle costs O(N) whatever the arity.
    """

    def __init__(self, potential: RBodyPotential, beta: float, N: int):
        self.potential = potential
        self.beta = beta
        self.N = N
        r = potential.r
        scale = float(N) ** (2 - r) / factorial(r)
        self.separable: List[Tuple[float, Tuple]] = [
            (scale * t.coeff, t.factors) for t in potential.terms if isinstance(t, SeparableTerm)
        ]
        self.pairs: List[Tuple[float, Callable]] = [
            (scale * t.coeff * factorial(r - 2) * comb(r, 2) * float(N) ** (r - 2), t.kernel)
            for t in potential.terms
            if isinstance(t, PairTerm)
        ]

    def partial_sums(self, lam: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        sums = [np.array([_real(f(lam)).sum() for f in factors]) for _, factors in self.separable]
        pairs = np.array([_real(K(lam[:, None], lam[None, :])).sum() for _, K in self.pairs])
        return sums, pairs

    def interaction(self, sums: List[np.ndarray], pairs: np.ndarray) -> float:
        total = sum(c * float(np.prod(s)) for (c, _), s in zip(self.separable, sums))
        return float(total + sum(c * p for (c, _), p in zip(self.pairs, pairs)))

    def vandermonde(self, lam: np.ndarray) -> float:
        diff = np.abs(lam[:, None] - lam[None, :])
        iu = np.triu_indices(lam.size, 1)
        return float(self.beta * np.log(diff[iu]).sum())

    def full(self, lam: np.ndarray) -> Tuple[float, List[np.ndarray], np.ndarray]:
        """Total log density recomputed from scratch, with its partial sums"""
        sums, pairs = self.partial_sums(lam)
        return self.vandermonde(lam) + self.interaction(sums, pairs), sums, pairs

    def delta(
        self, lam: np.ndarray, k: int, new: float, sums: List[np.ndarray], pairs: np.ndarray
    ) -> Tuple[float, List[np.ndarray], np.ndarray]:
        """Change of the log density when lambda_k moves to new, with the updated sums"""
        old = lam[k]
        others = np.delete(lam, k)
        d = self.beta * float(np.log(np.abs(new - others)).sum() - np.log(np.abs(old - others)).sum())
        new_sums = [
            s + np.array([_real(f(new)) - _real(f(old)) for f in factors])
            for (_, factors), s in zip(self.separable, sums)
        ]
        new_pairs = pairs.copy()
        for p, (_, K) in enumerate(self.pairs):
            cross = _real(K(new, others)).sum() - _real(K(old, others)).sum()
            new_pairs[p] += 2.0 * cross + float(_real(K(new, new)) - _real(K(old, old)))
        d += self.interaction(new_sums, new_pairs) - self.interaction(sums, pairs)
        return d, new_sums, new_pairs


@dataclass(eq=False)
class ChainState:
    """
    Represents the state of one Markov chain.

    Attributes:
        lam: Particle positions
        log_density: Cached total log density
        sums: Cached factor sums of the separable terms
        pairs: Cached pair-kernel sums
        segment: Domain segment of each particle
        stream: Index of the chain's random stream
    """

    lam: np.ndarray
    log_density: float
    sums: List[np.ndarray]
    pairs: np.ndarray
    segment: np.ndarray
    stream: int

    @classmethod
    def start(cls, density: LogDensity, lam: np.ndarray, domain: Domain, stream: int = 0) -> "ChainState":
        lam = np.sort(np.asarray(lam, dtype=float))
        segment = domain.locate(lam)
        if np.any(segment < 0):
            raise ConfigurationError("initial positions outside the domain", {"positions": lam[segment < 0].tolist()})
        if np.any(np.diff(lam) < COLLISION):
            raise ConfigurationError("initial positions must be distinct")
        total, sums, pairs = density.full(lam)
        return cls(lam=lam, log_density=total, sums=sums, pairs=pairs, segment=segment, stream=stream)

    def audit(self, density: LogDensity) -> float:
        """
        Recompute the log density and reset the caches.

        Raises:
            NumericalError: the cached value drifted beyond AUDIT_TOL
        """
        total, sums, pairs = density.full(self.lam)
        drift = abs(total - self.log_density) / max(1.0, abs(total))
        if drift > AUDIT_TOL:
            raise NumericalError(
                "cached log density drifted from its recomputation",
                {"drift": drift, "cached": self.log_density, "full": total, "stream": self.stream},
            )
        self.log_density, self.sums, self.pairs = total, sums, pairs
        return drift


@dataclass(eq=False)
class ChainEnsemble:
    """
    Represents the recorded output of independent chains.

    Attributes:
        samples: Positions, shape (chains, sweeps, N)
        counts: Particles per domain segment, shape (chains, sweeps, g+1)
        acceptance: Production acceptance rate of each chain
        scales: Frozen proposal scales, shape (chains, g+1)
        header: Config hash, N, seed, chain count and run settings
    """

    samples: np.ndarray
    counts: np.ndarray
    acceptance: np.ndarray
    scales: np.ndarray
    header: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def n_sweeps(self) -> int:
        return self.samples.shape[1]

    @property
    def N(self) -> int:
        return self.samples.shape[2]

    def linear_statistic(self, phi: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """sum_i phi(lambda_i) for every recorded sweep, shape (chains, sweeps)"""
        return _real(phi(self.samples)).sum(axis=-1)

    def summary(self) -> Dict[str, Any]:
        return {
            **self.header,
            "sweeps": self.n_sweeps,
            "acceptance": self.acceptance.tolist(),
            "scales": self.scales.tolist(),
        }


def config_hash(cfg: ModelConfig) -> str:
    return hashlib.sha256(cfg.model_dump_json().encode()).hexdigest()


def save_chains(path: Union[str, Path], ensemble: ChainEnsemble) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        np.savez_compressed(
            f,
            samples=ensemble.samples,
            counts=ensemble.counts,
            acceptance=ensemble.acceptance,
            scales=ensemble.scales,
            header=np.array(json.dumps(ensemble.header, sort_keys=True)),
        )
    logger.info(f"Wrote {ensemble.n_chains} chain(s) x {ensemble.n_sweeps} sweep(s) to {path}")
    return path


def load_chains(path: Union[str, Path]) -> ChainEnsemble:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"chain file not found: {path}", {"path": str(path)})
    with np.load(path, allow_pickle=False) as data:
        return ChainEnsemble(
            samples=data["samples"],
            counts=data["counts"],
            acceptance=data["acceptance"],
            scales=data["scales"],
            header=json.loads(str(data["header"])),
        )


# ---------------------------------------------------------------------------
# Initial positions
# ---------------------------------------------------------------------------


def quantile_init(eq: EquilibriumMeasure, N: int) -> np.ndarray:
    """Classical positions inf{x : mu_eq((-inf, x]) >= i/N}, i = 1..N"""
    return eq.measure.quantiles(N)


def _midpoint_quantiles(eq: EquilibriumMeasure, lo: float, hi: float, count: int) -> np.ndarray:
    """Points at the mid-mass quantiles (i - 1/2)/count of mu_eq restricted to [lo, hi]"""
    c_lo, c_hi = float(eq.measure.cdf(lo)), float(eq.measure.cdf(hi))
    if c_hi - c_lo < 1e-12:
        return lo + (hi - lo) * (np.arange(count) + 0.5) / count
    targets = c_lo + (c_hi - c_lo) * (np.arange(count) + 0.5) / count
    return np.array([brentq(lambda s: float(eq.measure.cdf(s)) - t, lo, hi, xtol=1e-14) for t in targets])


def _largest_remainder(weights: np.ndarray, N: int) -> np.ndarray:
    exact = weights / weights.sum() * N
    counts = np.floor(exact).astype(int)
    for h in np.argsort(-(exact - counts), kind="stable")[: N - counts.sum()]:
        counts[h] += 1
    return counts


def initial_positions(cfg: ModelConfig, N: int, eq: Optional[EquilibriumMeasure] = None) -> np.ndarray:
    """
    Starting configuration: mid-mass quantiles of mu_eq when eq is given,
    evenly spread points otherwise. With fixed filling fractions segment h
    receives exactly N_h particles.
    """
    domain = cfg.domain
    if cfg.filling is None and eq is not None:
        return _midpoint_quantiles(eq, *domain.hull, N)
    if cfg.filling is not None:
        counts = cfg.particle_counts(N)
    else:
        counts = _largest_remainder(np.array([s.hi - s.lo for s in domain.segments]), N)
    parts = []
    for seg, n in zip(domain.segments, counts):
        if n == 0:
            continue
        if eq is not None:
            parts.append(_midpoint_quantiles(eq, seg.lo, seg.hi, n))
        else:
            parts.append(seg.lo + (seg.hi - seg.lo) * (np.arange(n) + 0.5) / n)
    return np.sort(np.concatenate(parts))


# ---------------------------------------------------------------------------
# The sampler
# ---------------------------------------------------------------------------


class Sampler:
    """
    Single-particle Metropolis moves with Gaussian proposals of per-segment
    scale, plus uniform segment jumps when the filling fractions are free.
    """

    def __init__(self, density: LogDensity, domain: Domain, fixed: bool, rng: np.random.Generator):
        self.density = density
        self.domain = domain
        self.fixed = fixed
        self.rng = rng
        self.lengths = np.array([s.hi - s.lo for s in domain.segments])
        self.scales = self.lengths / max(density.N, 1)
        self.moves = 0
        self.tried = np.zeros(domain.g + 1)
        self.accepted = np.zeros(domain.g + 1)

    def _propose(self, state: ChainState, k: int) -> Tuple[Optional[float], int, float]:
        """New position, its segment and the log Hastings factor; None when a local move leaves the segment"""
        h = int(state.segment[k])
        if not self.fixed and self.domain.g and self.rng.random() < JUMP_RATE:
            target = int(self.rng.integers(self.domain.g))
            target += target >= h
            seg = self.domain.segments[target]
            new = seg.lo + (seg.hi - seg.lo) * self.rng.random()
            return new, target, float(np.log(self.lengths[target] / self.lengths[h]))
        # local moves never leave segment h
        new = state.lam[k] + self.scales[h] * self.rng.standard_normal()
        if int(self.domain.locate(np.array(new))) != h:
            return None, h, 0.0
        return new, h, 0.0

    def step(self, state: ChainState, k: int) -> bool:
        h = int(state.segment[k])
        self.tried[h] += 1
        new, where, hastings = self._propose(state, k)
        self.moves += 1
        if new is None:
            return False
        others = np.delete(state.lam, k)
        if others.size and np.abs(others - new).min() < COLLISION:
            return False
        d, sums, pairs = self.density.delta(state.lam, k, new, state.sums, state.pairs)
        if np.log(self.rng.random()) >= d + hastings:
            return False
        state.lam[k] = new
        state.segment[k] = where
        state.log_density += d
        state.sums, state.pairs = sums, pairs
        self.accepted[h] += 1
        return True

    def sweep(self, state: ChainState) -> None:
        for k in self.rng.permutation(state.lam.size):
            self.step(state, k)
            if self.moves % AUDIT_EVERY == 0:
                state.audit(self.density)

    def adapt(self) -> None:
        """Robbins-Monro update of the scales towards TARGET_ACCEPTANCE, from the last window"""
        rate = np.divide(
            self.accepted, self.tried, out=np.full_like(self.tried, TARGET_ACCEPTANCE), where=self.tried > 0
        )
        self.scales = np.clip(self.scales * np.exp(rate - TARGET_ACCEPTANCE), 1e-12, self.lengths)
        self.reset_counters()

    def reset_counters(self) -> None:
        self.tried[:] = 0
        self.accepted[:] = 0

    @property
    def acceptance(self) -> float:
        return float(self.accepted.sum() / max(self.tried.sum(), 1))


def _run_chain(
    density: LogDensity,
    domain: Domain,
    fixed: bool,
    start: np.ndarray,
    n_steps: int,
    burn_in: int,
    thin: int,
    seed: int,
    stream: int,
) -> Tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    rng = np.random.default_rng([seed, stream])
    state = ChainState.start(density, start, domain, stream)
    sampler = Sampler(density, domain, fixed, rng)
    for _ in range(burn_in):
        sampler.sweep(state)
        sampler.adapt()
    if burn_in and sampler.acceptance < MIN_ACCEPTANCE:
        logger.warning(f"Chain {stream}: low acceptance after burn-in")
    sampler.reset_counters()
    kept = n_steps // thin
    samples = np.empty((kept, state.lam.size))
    counts = np.empty((kept, domain.g + 1), dtype=int)
    for i in range(kept * thin):
        sampler.sweep(state)
        if (i + 1) % thin == 0:
            j = (i + 1) // thin - 1
            samples[j] = np.sort(state.lam)
            counts[j] = np.bincount(state.segment, minlength=domain.g + 1)
    state.audit(density)
    rate = sampler.acceptance
    logger.info(f"Chain {stream}: acceptance {rate:.3f}, scales {np.round(sampler.scales, 6).tolist()}")
    if rate < MIN_ACCEPTANCE:
        raise NumericalError("chain acceptance stays below the minimum", {"acceptance": rate, "stream": stream})
    return samples, counts, rate, sampler.scales


def sample(
    cfg: ModelConfig,
    n_steps: int,
    n_chains: int = 8,
    seed: Optional[int] = None,
    N: Optional[int] = None,
    eq: Optional[EquilibriumMeasure] = None,
    burn_in: Optional[int] = None,
    thin: int = 1,
    jobs: Optional[int] = None,
    potential: Optional[RBodyPotential] = None,
) -> ChainEnsemble:
    """
    Run independent Metropolis chains of the model.

    Args:
        cfg: Model; fixed filling fractions when cfg.filling is set
        n_steps: Recorded sweeps per chain, one sweep being N single-particle proposals
        n_chains: Number of chains, each with its own random stream (seed, chain id)
        seed: Base seed, BE_SEED when omitted
        N: Particle number, cfg.N when omitted
        eq: Equilibrium measure used for quantile initialization
        burn_in: Discarded sweeps during which the proposal scales adapt, 20 N by default
        thin: Record every thin-th sweep
        jobs: Worker threads
        potential: Interaction to use instead of the one built from cfg.potential

    Returns:
        ChainEnsemble with a header identifying the run

    Raises:
        ConfigurationError: r >= 4 with N > MAX_COSTLY_N, or invalid run settings
        NumericalError: acceptance below MIN_ACCEPTANCE or cache drift
    """
    if not cfg.bounded:
        cfg = truncate_domain(cfg)
    N = cfg.N if N is None else N
    seed = config.DEFAULT_SEED if seed is None else seed
    burn_in = 20 * N if burn_in is None else burn_in
    if n_steps < 1 or n_chains < 1 or thin < 1 or n_steps < thin:
        raise ConfigurationError(
            "invalid sampling settings", {"n_steps": n_steps, "n_chains": n_chains, "thin": thin}
        )
    if cfg.r >= 4 and N > MAX_COSTLY_N:
        raise ConfigurationError(
            f"sampling an r={cfg.r} interaction is limited to N <= {MAX_COSTLY_N}", {"N": N, "r": cfg.r}
        )
    domain = cfg.domain
    potential = potential or build_potential(cfg.potential, cfg.r, cfg.beta, domain)
    density = LogDensity(potential, cfg.beta, N)
    fixed = cfg.filling is not None
    start = initial_positions(cfg, N, eq)
    logger.info(
        f"Sampling N={N}, beta={cfg.beta}, r={cfg.r}: {n_chains} chain(s) x {n_steps} sweep(s) "
        f"after {burn_in} burn-in sweep(s), {'fixed' if fixed else 'free'} filling fractions"
    )
    funcs = [
        lambda c=c: _run_chain(density, domain, fixed, start, n_steps, burn_in, thin, seed, c)
        for c in range(n_chains)
    ]
    results = run_parallel(funcs, jobs=jobs, name="chain")
    header = {
        "config_hash": config_hash(cfg),
        "N": N,
        "seed": seed,
        "n_chains": n_chains,
        "n_steps": n_steps,
        "burn_in": burn_in,
        "thin": thin,
        "beta": cfg.beta,
        "r": cfg.r,
        "fixed_filling": fixed,
    }
    return ChainEnsemble(
        samples=np.stack([res[0] for res in results]),
        counts=np.stack([res[1] for res in results]),
        acceptance=np.array([res[2] for res in results]),
        scales=np.stack([res[3] for res in results]),
        header=header,
    )


def audit_acceptance_ratio(
    cfg: ModelConfig, N: int, count: int = 1000, seed: int = 0, potential: Optional[RBodyPotential] = None
) -> float:
    """
    Largest relative mismatch between the incremental log-density change and
    the difference of two full evaluations, over random single-particle moves.
    """
    if not cfg.bounded:
        cfg = truncate_domain(cfg)
    domain = cfg.domain
    potential = potential or build_potential(cfg.potential, cfg.r, cfg.beta, domain)
    density = LogDensity(potential, cfg.beta, N)
    rng = np.random.default_rng(seed)
    lam = initial_positions(cfg, N)
    total, sums, pairs = density.full(lam)
    worst = 0.0
    for _ in range(count):
        k = int(rng.integers(N))
        seg = domain.segments[int(domain.locate(np.array(lam[k])))]
        new = seg.lo + (seg.hi - seg.lo) * rng.random()
        d, _, _ = density.delta(lam, k, new, sums, pairs)
        moved = lam.copy()
        moved[k] = new
        exact = density.full(moved)[0] - total
        worst = max(worst, abs(d - exact) / max(1.0, abs(exact)))
    logger.debug(f"Acceptance-ratio audit over {count} move(s): worst mismatch {worst:.2e}")
    return worst
