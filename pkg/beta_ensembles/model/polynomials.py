"""Edge polynomials sigma(x) = prod (x - e), their divided differences and square roots."""

from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial

from beta_ensembles.core.errors import ConfigurationError


def sigma_poly(edges: Sequence[float]) -> Polynomial:
    """
    Monic polynomial with the given simple roots.

    Serves sigma_A (all domain endpoints), sigma_S (all support edges) and
    sigma_hd (hard edges only). The empty product is the constant 1.

    Raises:
        ConfigurationError: if two roots coincide
    """
    edges = [float(e) for e in edges]
    if len(set(edges)) != len(edges):
        raise ConfigurationError(
            "duplicate roots: edges must be simple", {"edges": edges}
        )
    if not edges:
        return Polynomial([1.0])
    return Polynomial.fromroots(edges)


def divided_diff_coeffs(p: Polynomial, order: int) -> np.ndarray:
    """
    Coefficient array of the divided difference of p.

    order=1: D[i, j] with p^[1](x, xi) = sum D[i, j] x^i xi^j.
    order=2: D[i, a, b] with p^[2](x; xi1, xi2) = sum D[i, a, b] x^i xi1^a xi2^b.
    Built from (x^n - y^n)/(x - y) = sum_{i+j=n-1} x^i y^j, so coincident
    points need no special treatment.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    c = np.asarray(p.coef, dtype=float)
    d = max(len(c) - 1, 0)
    first = np.zeros((max(d, 1), max(d, 1)))
    for n in range(1, d + 1):
        for i in range(n):
            first[i, n - 1 - i] += c[n]
    if order == 1:
        return first

    second = np.zeros((max(d, 1),) * 3)
    for i in range(first.shape[0]):
        for j in range(1, first.shape[1]):
            for a in range(j):
                second[i, a, j - 1 - a] += first[i, j]
    return second


def _powers(x: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(x)[..., None] ** np.arange(n)


def divided_diff(p: Polynomial, order: int, *points) -> np.ndarray:
    """
    Evaluate p^[1](x, xi) or p^[2](x; xi1, xi2) at broadcastable points.
    """
    coeffs = divided_diff_coeffs(p, order)
    if len(points) != order + 1:
        raise ValueError(f"order {order} takes {order + 1} points")
    n = coeffs.shape[0]
    if order == 1:
        x, xi = np.broadcast_arrays(*points)
        return np.einsum("...i,ij,...j->...", _powers(x, n), coeffs, _powers(xi, n))
    x, xi1, xi2 = np.broadcast_arrays(*points)
    return np.einsum(
        "...i,iab,...a,...b->...",
        _powers(x, n),
        coeffs,
        _powers(xi1, n),
        _powers(xi2, n),
    )


def sqrt_sigma(x, edges: Sequence[float]) -> np.ndarray:
    """
    sigma^{1/2}(x) = prod sqrt(x - e) with principal roots.

    With an even number of edges the product has its cuts exactly on the
    intervals [e_{2k}, e_{2k+1}] and behaves as x^{len(edges)/2} at infinity.
    """
    x = np.asarray(x, dtype=complex)
    out = np.ones_like(x)
    for e in edges:
        out = out * np.sqrt(x - e)
    return out


def sqrt_series(edges: Sequence[float], order: int) -> np.ndarray:
    """
    Coefficients S_0..S_order of sqrt(prod (1 - e u)) around u = 0.

    sigma^{1/2}(x) = x^{len/2} * sum_n S_n x^{-n} for large x.
    """
    P = Polynomial([1.0])
    for e in edges:
        P = P * Polynomial([1.0, -float(e)])
    pc = np.zeros(order + 1)
    pc[: min(len(P.coef), order + 1)] = P.coef[: order + 1]
    S = np.zeros(order + 1)
    S[0] = 1.0
    for n in range(1, order + 1):
        S[n] = 0.5 * (pc[n] - sum(S[k] * S[n - k] for k in range(1, n)))
    return S
