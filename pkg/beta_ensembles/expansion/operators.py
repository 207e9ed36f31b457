"""Linear operators of the loop equations acting on correlator tensors."""

from dataclasses import dataclass
from functools import reduce as fold
from itertools import permutations
from math import factorial
from operator import add
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from beta_ensembles.core import config
from beta_ensembles.core.errors import TensorBudgetExceeded
from beta_ensembles.expansion.partitions import compositions, subsets
from beta_ensembles.model.analytic import LaurentTensor, _contract
from beta_ensembles.model.contours import NodeSpace
from beta_ensembles.model.polynomials import divided_diff_coeffs
from beta_ensembles.model.potential import RBodyPotential
from beta_ensembles.operators.master import MasterOperator


def resize(coeffs: np.ndarray, axis: int, old: int, new: int, size: int) -> np.ndarray:
    """Truncate or zero-pad the Laurent degree of every segment block along one axis"""
    if old == new:
        return coeffs
    moved = np.moveaxis(coeffs, axis, 0)
    blocks = moved.reshape((size, old) + moved.shape[1:])
    out = np.zeros((size, new) + moved.shape[1:], dtype=complex)
    keep = min(old, new)
    out[:, :keep] = blocks[:, :keep]
    return np.moveaxis(out.reshape((size * new,) + moved.shape[1:]), 0, axis)


def _col(v: np.ndarray, ndim: int) -> np.ndarray:
    return np.asarray(v).reshape((-1,) + (1,) * (ndim - 1))


def _attach(result: np.ndarray, arr: np.ndarray, attached: bool) -> np.ndarray:
    """
    Multiply a partial product (node axis first) by the next block. `arr`
    shares the node axis when `attached`; its external axes are appended.
    """
    extra = arr.ndim - (1 if attached else 0)
    left = result.reshape(result.shape + (1,) * extra)
    if not attached:
        return left * arr
    right = arr.reshape((arr.shape[0],) + (1,) * (result.ndim - 1) + arr.shape[1:])
    return left * right


def _reduce(arr: np.ndarray, vectors: Sequence[Optional[np.ndarray]]) -> np.ndarray:
    """Contract the leading axes of arr with vectors; axes given None are kept in order"""
    for axis in reversed(range(len(vectors))):
        if vectors[axis] is not None:
            arr = np.tensordot(vectors[axis], arr, axes=(0, axis))
    return arr


def _check_budget(shape: Tuple[int, ...], what: str) -> None:
    size = int(np.prod(shape, dtype=np.int64))
    if size > config.MAX_TENSOR:
        raise TensorBudgetExceeded(
            f"{what} needs {size} entries, above BE_MAX_TENSOR={config.MAX_TENSOR}",
            {"shape": list(shape)},
        )


@dataclass(frozen=True, eq=False)
class Block:
    """
    Factor of a contour integrand.

    Either a tensor whose first `slots` axes are integration variables and
    whose other axes are external variables in coefficient form, or a plain
    callable of one integration variable.
    """

    slots: int
    tensor: Optional[LaurentTensor] = None
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def of(cls, tensor: LaurentTensor, slots: int = 1) -> "Block":
        return cls(slots=slots, tensor=tensor)

    @property
    def batch_ndim(self) -> int:
        return 0 if self.tensor is None else self.tensor.arity - self.slots

    @property
    def batch_degrees(self) -> List[int]:
        return [self.tensor.degree] * self.batch_ndim if self.tensor is not None else []

    def sampled(self, space: NodeSpace) -> np.ndarray:
        """Values with every integration slot on the nodes of `space`"""
        if self.func is not None:
            return np.asarray(self.func(space.x), dtype=complex)
        shape = (space.size,) * self.slots + self.tensor.coeffs.shape[self.slots :]
        _check_budget(shape, "sampling a correlator on the contour")
        E = self.tensor.basis(space.x)
        return _contract(self.tensor.coeffs, [E] * self.slots)

    def at(self, x: np.ndarray) -> np.ndarray:
        """Values at points x of a single-slot block"""
        if self.slots != 1:
            raise ValueError("pointwise evaluation needs a single integration slot")
        if self.func is not None:
            return np.asarray(self.func(x), dtype=complex)
        return _contract(self.tensor.coeffs, [self.tensor.basis(x)])


def contract_potential(
    potential: RBodyPotential,
    blocks: Sequence[Tuple[Block, Sequence[int]]],
    space: NodeSpace,
    keep: bool,
) -> np.ndarray:
    """
    oint T(xi_1, .., xi_r) prod_B F_B(xi_B) over every slot, or with `keep`
    the same integral of d/dxi_1 T with xi_1 left on the nodes of `space`.

    Each block comes with the increasing argument indices its integration
    slots occupy. The result carries the node axis first when `keep`,
    followed by the external axes of the blocks in the given order.
    """
    r = potential.r
    w = space.weights
    x = space.x
    covered = sorted(s for _, slots in blocks for s in slots)
    if covered != list(range(r)):
        raise ValueError(f"blocks must cover the {r} arguments exactly once")
    samples = [blk.sampled(space) for blk, _ in blocks]
    ones = np.ones(space.size, dtype=complex)
    total = None

    for term in potential.separable_terms:
        values = [f(x) * ones for f in term.factors]
        firsts = [f.derivative(x) * ones for f in term.factors] if keep else values
        for perm in permutations(range(r)):
            result = ones
            for b, (_, slots) in enumerate(blocks):
                arr = _reduce(samples[b], [None if s == 0 else w * values[perm[s]] for s in slots])
                attached = 0 in slots
                if attached:
                    arr = _col(firsts[perm[0]], arr.ndim) * arr
                result = _attach(result, arr, attached)
            part = (term.coeff / factorial(r)) * result
            total = part if total is None else total + part

    for term in potential.pair_terms:
        kernel = term.kernel
        pairs = [(0, b) for b in range(1, r)] if keep else [(a, b) for a in range(r) for b in range(a + 1, r)]
        for a, b in pairs:
            K = kernel.d1(x[:, None], x[None, :]) if keep and a == 0 else kernel(x[:, None], x[None, :])
            Kw = K * w[None, :]
            result = ones
            for i, (_, slots) in enumerate(blocks):
                arr = _reduce(samples[i], [None if s in (a, b) else w for s in slots])
                if a in slots and b in slots:
                    arr = np.einsum("jk,jk...->j...", Kw, arr)
                elif b in slots:
                    arr = np.tensordot(Kw, arr, axes=(1, 0))
                result = _attach(result, arr, a in slots or b in slots)
            part = (term.coeff * factorial(r - 2)) * result
            total = part if total is None else total + part

    if total is None:
        shape = (space.size,)
        for blk, _ in blocks:
            shape = shape + blk.tensor.coeffs.shape[blk.slots :] if blk.tensor is not None else shape
        total = np.zeros(shape, dtype=complex)
    return total if keep else np.tensordot(w, total, axes=(0, 0))


class LoopOperators:
    """
    Operators D_1, D_2, T and the corrections K^[l] of the master operator,
    on the contour family of a master operator.

    Every operator integrates on contour `level` and samples its output on
    `level + 1`; D_1 puts its second variable on `level + 2`. Outputs are
    LaurentTensors whose axis 0 is x, followed by the external variables.
    """

    def __init__(self, op: MasterOperator, inner_nodes: int = config.INNER_NODES, inner_degree: Optional[int] = None):
        self.op = op
        self.eq = op.eq
        self.family = op.family
        self.potential = op.eq.potential
        self.beta = op.beta
        self.r = op.r
        self.hd = op.sigma_hd
        self.hard = op.hard
        self.inner_nodes = min(inner_nodes, self.family.nodes)
        limit = min(self.inner_nodes // 2 - 1, self.family.degree)
        self.inner_degree = min(inner_degree or limit, limit)
        self.D = divided_diff_coeffs(self.hd, 2) if self.hard else None

    def degree_for(self, arity: int) -> int:
        return self.family.degree if arity <= 2 else self.inner_degree

    def space(self, level: int, arity: int) -> NodeSpace:
        return self.family.space(level, None if arity <= 2 else self.inner_nodes)

    def _finish(self, values: np.ndarray, outs: Sequence[NodeSpace], batch_degrees: Sequence[int]) -> LaurentTensor:
        degree = self.degree_for(values.ndim)
        coeffs = values
        for axis, out in enumerate(outs):
            P = self.family.projector(out, degree)
            coeffs = np.moveaxis(np.tensordot(P, coeffs, axes=(1, axis)), 0, axis)
        for axis, old in enumerate(batch_degrees, start=len(outs)):
            coeffs = resize(coeffs, axis, old, degree, self.family.size)
        return LaurentTensor(self.family, coeffs, degree, level=outs[0].level)

    def _power_weights(self, space: NodeSpace) -> np.ndarray:
        return space.weights[:, None] * space.x[:, None] ** np.arange(self.D.shape[0])

    def _sigma_term(self, x: np.ndarray, moments: np.ndarray) -> np.ndarray:
        """sum_{i,a,b} D[i,a,b] x^i m[a,b,...] / sigma_hd(x)"""
        X = x[:, None] ** np.arange(self.D.shape[0])
        inner = np.tensordot(self.D, moments, axes=([1, 2], [0, 1]))
        out = np.tensordot(X, inner, axes=(1, 0))
        return out / _col(self.hd(x), out.ndim)

    def derivative_term(self, phi: LaurentTensor, level: int) -> LaurentTensor:
        """(1 - 2/beta) (d/dx phi(x) + oint sigma_hd^[2](x; xi, xi)/sigma_hd(x) phi(xi))"""
        out = self.space(level + 1, phi.arity)
        values = _contract(phi.coeffs, [self.family.basis_derivative(out.x, phi.degree, 1)])
        if self.hard:
            inner = self.space(level, phi.arity)
            S = _contract(phi.coeffs, [phi.basis(inner.x)])
            P = self._power_weights(inner)
            X = inner.x[:, None] ** np.arange(P.shape[1])
            moments = np.einsum("ja,jb,j...->ab...", P, X, S)
            values = values + self._sigma_term(out.x, moments)
        return self._finish((1.0 - 2.0 / self.beta) * values, [out], [phi.degree] * (phi.arity - 1))

    def op_D2(self, phi: LaurentTensor, level: int) -> LaurentTensor:
        """D_2[phi](x) = phi(x, x) - oint oint sigma_hd^[2](x; xi1, xi2)/sigma_hd(x) phi(xi1, xi2)"""
        if phi.arity < 2:
            raise ValueError("D_2 needs two integration slots")
        out = self.space(level + 1, phi.arity - 1)
        E = phi.basis(out.x)
        values = np.einsum("pa,pb,ab...->p...", E, E, phi.coeffs, optimize=True)
        if self.hard:
            inner = self.space(level, phi.arity)
            S = Block.of(phi, slots=2).sampled(inner)
            P = self._power_weights(inner)
            moments = np.einsum("ja,kb,jk...->ab...", P, P, S, optimize=True)
            values = values - self._sigma_term(out.x, moments)
        return self._finish(values, [out], [phi.degree] * (phi.arity - 2))

    def op_D2_pair(self, f: Block, g: Block, level: int) -> LaurentTensor:
        """D_2 of the product f(xi1) g(xi2), external axes of f before those of g"""
        arity = 1 + f.batch_ndim + g.batch_ndim
        out = self.space(level + 1, arity)
        fv, gv = f.at(out.x), g.at(out.x)
        values = _attach(fv, gv, True)
        if self.hard:
            inner = self.space(level, arity)
            P = self._power_weights(inner)
            mf = np.tensordot(P, f.sampled(inner), axes=(0, 0))
            mg = np.tensordot(P, g.sampled(inner), axes=(0, 0))
            moments = np.moveaxis(np.multiply.outer(mf, mg), mf.ndim, 1)
            values = values - self._sigma_term(out.x, moments)
        return self._finish(values, [out], f.batch_degrees + g.batch_degrees)

    def op_D1(self, f: Block, level: int) -> LaurentTensor:
        """
        D_1[f](x1, x2) = (2/beta) oint sigma_hd(xi)/sigma_hd(x1) f(xi) / ((x1 - xi)(x2 - xi)^2).

        With d = x2 - x1 the kernel splits as
        (1/d^2)(1/(x1 - xi) - 1/(x2 - xi)) - (1/d)/(x2 - xi)^2,
        so x1 and x2 are sampled on two different contours.
        """
        arity = 2 + f.batch_ndim
        inner = self.space(level, arity)
        sa = self.space(level + 1, arity)
        sb = self.space(level + 2, arity)
        S = f.sampled(inner)
        g = (2.0 / self.beta) * _col(inner.weights * self.hd(inner.x), S.ndim) * S
        xi = inner.x
        Ca = np.tensordot(1.0 / (sa.x[:, None] - xi[None, :]), g, axes=(1, 0))
        Cb = np.tensordot(1.0 / (sb.x[:, None] - xi[None, :]), g, axes=(1, 0))
        Db = np.tensordot(1.0 / (sb.x[:, None] - xi[None, :]) ** 2, g, axes=(1, 0))
        batch = (1,) * (S.ndim - 1)
        d = (sb.x[None, :] - sa.x[:, None]).reshape(sa.size, sb.size, *batch)
        values = (Ca[:, None] - Cb[None, :]) / d**2 - Db[None, :] / d
        values = values / self.hd(sa.x).reshape(sa.size, 1, *batch)
        return self._finish(values, [sa, sb], f.batch_degrees)

    def op_T(self, blocks: Sequence[Tuple[Block, Sequence[int]]], level: int) -> LaurentTensor:
        """
        T[F](x) = (2/beta) oint sigma_hd(xi_1)/sigma_hd(x) d/dxi_1 T(xi) F(xi) / ((r-1)! (x - xi_1)),
        F the product of the blocks.
        """
        arity = 1 + sum(blk.batch_ndim for blk, _ in blocks)
        inner = self.space(level, max(max(blk.slots for blk, _ in blocks), 1 if arity <= 2 else 3))
        out = self.space(level + 1, arity)
        G = contract_potential(self.potential, blocks, inner, keep=True)
        g = _col(inner.weights * self.hd(inner.x), G.ndim) * G
        C = 1.0 / (out.x[:, None] - inner.x[None, :])
        values = np.tensordot(C, g, axes=(1, 0)) / _col(self.hd(out.x), G.ndim)
        values = (2.0 / self.beta) / factorial(self.r - 1) * values
        degrees = [d for blk, _ in blocks for d in blk.batch_degrees]
        return self._finish(values, [out], degrees)

    def op_K_correction(
        self,
        l: int,
        phi: LaurentTensor,
        w1: Callable[[int], LaurentTensor],
        w_eq: LaurentTensor,
        level: int,
    ) -> LaurentTensor:
        """
        K^[l][phi], the order N^-l part of the master operator around the
        full one-point function, with w1(k) the coefficient W_1^[k].
        """
        if l < 1:
            raise ValueError("corrections start at l = 1")
        parts = [self.op_D2_pair(Block.of(w1(l - 1)), Block.of(phi), level).scaled(2.0)]
        if l == 1:
            parts.append(self.derivative_term(phi, level))
        for i in range(self.r):
            others = [s for s in range(self.r) if s != i]
            for J in subsets(others):
                if not J:
                    continue
                for orders in compositions(l - len(J), [0] * len(J), l):
                    blocks = []
                    for s in range(self.r):
                        tensor = phi if s == i else w1(orders[J.index(s)]) if s in J else w_eq
                        blocks.append((Block.of(tensor), (s,)))
                    parts.append(self.op_T(blocks, level))
        return fold(add, parts)
