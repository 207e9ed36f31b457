"""Large-N expansion of the partition function with free filling fractions."""

from dataclasses import dataclass, field
from math import factorial
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np
from loguru import logger

from beta_ensembles.core.errors import ConfigurationError
from beta_ensembles.partition.free_energy import FreeEnergyData
from beta_ensembles.partition.theta import ThetaParams, characteristic_shift, theta, theta_derivatives

Factor = Tuple[int, int]


@dataclass(frozen=True)
class ZTerm:
    """One product of derivative tensors acting on Theta, with its weight N^-order/m!"""

    order: int
    factors: Tuple[Factor, ...]
    value: complex


@dataclass(eq=False)
class ZExpansion:
    """
    Represents Z_N ~ N^{(beta/2) N + gamma} exp(sum_k N^-k F^[k]) * bracket.

    Attributes:
        N: Number of particles
        k0: Truncation order of the bracket
        log_prefactor: ((beta/2) N + gamma) ln N
        exponent: sum over the available k <= k0 of N^-k F^[k]
        gamma_N: Characteristic shift -N eps* mod Z^g
        theta: Theta_{gamma_N}(F^[-1],(1) | -F^[-2],(2))
        bracket: Theta with its derivative corrections up to order k0
        ledger: Every correction term with its value
    """

    N: int
    k0: int
    log_prefactor: float
    exponent: float
    gamma_N: np.ndarray
    theta: complex
    bracket: complex
    ledger: List[ZTerm] = field(default_factory=list)
    params: Optional[ThetaParams] = None

    @property
    def log_z(self) -> complex:
        return self.log_prefactor + self.exponent + np.log(complex(self.bracket))

    def summary(self) -> Dict[str, Any]:
        return {
            "N": self.N,
            "k0": self.k0,
            "log_prefactor": self.log_prefactor,
            "exponent": self.exponent,
            "gamma_N": self.gamma_N.tolist(),
            "theta": [self.theta.real, self.theta.imag],
            "bracket": [complex(self.bracket).real, complex(self.bracket).imag],
            "log_z": [self.log_z.real, self.log_z.imag],
            "theta_params": self.params.summary() if self.params is not None else None,
            "ledger": [
                {"order": t.order, "factors": [list(f) for f in t.factors], "value": [t.value.real, t.value.imag]}
                for t in self.ledger
            ],
        }


def bracket_factors(data: FreeEnergyData, k0: int) -> List[Factor]:
    """(k, l) with l >= 1 and 1 <= k + l <= k0 whose tensors are available"""
    return sorted((k, l) for (k, l) in data.tensors if l >= 1 and 1 <= k + l <= k0)


def _sequences(factors: List[Factor], budget: int) -> Iterator[Tuple[Factor, ...]]:
    """Ordered tuples of factors whose orders k + l add up to at most budget"""
    yield ()
    for f in factors:
        cost = f[0] + f[1]
        if cost <= budget:
            for rest in _sequences(factors, budget - cost):
                yield (f,) + rest


def _outer(data: FreeEnergyData, seq: Tuple[Factor, ...]) -> np.ndarray:
    out = np.array(1.0)
    for k, l in seq:
        out = np.multiply.outer(out, data.tensors[(k, l)] / factorial(l))
    return out


def theta_params(data: FreeEnergyData, N: int) -> ThetaParams:
    return ThetaParams(characteristic_shift(data.eps_star, N), data.theta_shift(), data.theta_form())


def assemble_Z(N: int, data: FreeEnergyData, k0: int = 0) -> ZExpansion:
    """
    Truncated expansion of Z_N to relative order N^-k0.

    The bracket is the sum over m >= 0 and factors (k_i, l_i) of
    N^-sum(k_i + l_i)/m! prod F^[k_i],(l_i)/l_i! contracted with the
    sum(l_i)-th v-derivative tensor of Theta.

    Raises:
        ConfigurationError: F^[-2] is missing or N is not positive
    """
    if N < 1:
        raise ConfigurationError("N must be positive", {"N": N})
    if data.coefficient(-2) is None:
        raise ConfigurationError("the leading free-energy coefficient is missing", {"orders": data.orders})
    exponent = sum(float(N) ** (-k) * data.coefficient(k) for k in data.orders if k <= k0)
    log_prefactor = (data.beta / 2 * N + float(data.gamma)) * np.log(N)
    if data.g == 0:
        return ZExpansion(
            N=N,
            k0=k0,
            log_prefactor=log_prefactor,
            exponent=exponent,
            gamma_N=np.zeros(0),
            theta=1.0 + 0j,
            bracket=1.0 + 0j,
            ledger=[ZTerm(0, (), 1.0 + 0j)],
        )

    params = theta_params(data, N)
    base = theta(params)
    ledger = [ZTerm(0, (), base)]
    bracket = base
    derivatives: Dict[int, np.ndarray] = {}
    for seq in _sequences(bracket_factors(data, k0), k0):
        if not seq:
            continue
        L = sum(l for _, l in seq)
        if L not in derivatives:
            derivatives[L] = theta_derivatives(params, L)
        order = sum(k + l for k, l in seq)
        value = complex(np.tensordot(_outer(data, seq), derivatives[L], axes=L))
        value *= float(N) ** (-order) / factorial(len(seq))
        ledger.append(ZTerm(order, seq, value))
        bracket += value
    logger.info(f"Assembled Z at N={N}, k0={k0}: {len(ledger)} term(s), Theta = {base:.10g}")
    return ZExpansion(
        N=N,
        k0=k0,
        log_prefactor=log_prefactor,
        exponent=exponent,
        gamma_N=params.gamma,
        theta=base,
        bracket=bracket,
        ledger=ledger,
        params=params,
    )


def lattice_sum(N: int, data: FreeEnergyData, k0: int = 0, margin: int = 2) -> complex:
    """
    Direct sum over the particle numbers of the exponentiated Taylor
    polynomials of N^-k F^[k] around eps*, normalized like the bracket of
    assemble_Z. Uses the same tensors, so the two agree to O(N^-k0-1).
    """
    if data.g == 0:
        return 1.0 + 0j
    params = theta_params(data, N)
    wide = ThetaParams(params.gamma, params.v, params.T, params.tol, params.radius + margin)
    x = wide.points()
    exponent = wide.exponents(x)
    for (k, l) in bracket_factors(data, k0):
        t = data.tensors[(k, l)] / factorial(l)
        exponent = exponent + float(N) ** (-(k + l)) * _powers(t, x)
    shift = float(exponent.real.max())
    return complex(np.exp(shift) * np.exp(exponent - shift).sum())


def _powers(t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """t contracted with x^{(x) l} for every row of x"""
    out = np.broadcast_to(t, (x.shape[0],) + t.shape)
    for _ in range(t.ndim):
        out = np.einsum("n...i,ni->n...", out, x)
    return out


def log_z_difference(N: int, data: FreeEnergyData, k0: int = 0) -> float:
    """|ln bracket - ln lattice_sum|, the truncation error of the assembled expansion"""
    expansion = assemble_Z(N, data, k0)
    if data.g == 0:
        return 0.0
    return float(abs(np.log(complex(expansion.bracket)) - np.log(lattice_sum(N, data, k0))))

