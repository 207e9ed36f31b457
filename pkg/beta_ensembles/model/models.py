import json
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Annotated, Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import (
    AfterValidator,
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    computed_field,
    field_validator,
    model_validator,
)
from typing_extensions import Self

from beta_ensembles.core import config
from beta_ensembles.core.errors import ConfigurationError, DomainError


class EdgeType(str, Enum):
    soft = "soft"
    hard = "hard"


class PotentialType(str, Enum):
    polynomial_sum = "polynomial_sum"
    sinh = "sinh"
    qdeformed = "qdeformed"
    onmodel = "onmodel"


class Segment(BaseModel):
    """
    Represents one closed interval A_h of the domain.

    The flags say whether each endpoint may bind the support, i.e. whether
    a hard edge is allowed there.
    """

    model_config = ConfigDict(frozen=True)

    lo: float
    hi: float
    hard_lo: bool = True
    hard_hi: bool = True

    @computed_field
    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @computed_field
    @property
    def half(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def contains(self, x: Union[float, np.ndarray], pad: float = 0.0):
        return (x >= self.lo - pad) & (x <= self.hi + pad)


class Domain(BaseModel):
    """
    Represents the ordered union of g+1 disjoint segments.
    """

    model_config = ConfigDict(frozen=True)

    segments: Tuple[Segment, ...]

    @model_validator(mode="after")
    def check_segments(self) -> Self:
        if not self.segments:
            raise ValueError("domain needs at least one segment")
        for h, seg in enumerate(self.segments):
            if not (np.isfinite(seg.lo) and np.isfinite(seg.hi)):
                raise ValueError(f"segment {h} is unbounded")
            if seg.hi <= seg.lo:
                raise ValueError(f"segment {h} has zero or negative length")
        for h in range(1, len(self.segments)):
            if self.segments[h].lo <= self.segments[h - 1].hi:
                raise ValueError(f"overlap between segments {h - 1} and {h}")
        return self

    @property
    def g(self) -> int:
        return len(self.segments) - 1

    @property
    def endpoints(self) -> List[float]:
        return [e for seg in self.segments for e in (seg.lo, seg.hi)]

    @property
    def hull(self) -> Tuple[float, float]:
        return self.segments[0].lo, self.segments[-1].hi

    def locate(self, x: np.ndarray, pad: float = 0.0) -> np.ndarray:
        """Index of the segment containing each point, -1 outside A"""
        x = np.asarray(x, dtype=float)
        index = np.full(x.shape, -1, dtype=int)
        for h, seg in enumerate(self.segments):
            index[seg.contains(x, pad)] = h
        return index


def build_domain(
    intervals: Sequence[Sequence[float]],
    edge_flags: Optional[Sequence[Sequence[bool]]] = None,
) -> Domain:
    """
    Build a validated Domain from (lo, hi) pairs.

    Args:
        intervals: Real pairs, in any order
        edge_flags: Optional (hard_lo, hard_hi) per interval, same order

    Returns:
        Domain with segments sorted by their left endpoint

    Raises:
        DomainError: empty input, unbounded or degenerate interval, overlap
    """
    if not intervals:
        raise DomainError("domain needs at least one segment")
    flags = list(edge_flags) if edge_flags is not None else [(True, True)] * len(intervals)
    if len(flags) != len(intervals):
        raise DomainError("edge_flags must match the number of segments")

    for i, (lo, hi) in enumerate(intervals):
        if lo is None or hi is None or not (np.isfinite(lo) and np.isfinite(hi)):
            raise DomainError(f"segment {i} is unbounded", {"index": i})
        if hi <= lo:
            raise DomainError(f"segment {i} has zero or negative length", {"index": i})

    order = sorted(range(len(intervals)), key=lambda i: intervals[i][0])
    for a, b in zip(order, order[1:]):
        if intervals[b][0] <= intervals[a][1]:
            raise DomainError(
                f"overlap between segments {a} and {b}", {"indices": [a, b]}
            )
    segments = tuple(
        Segment(
            lo=float(intervals[i][0]),
            hi=float(intervals[i][1]),
            hard_lo=bool(flags[i][0]),
            hard_hi=bool(flags[i][1]),
        )
        for i in order
    )
    return Domain(segments=segments)


class Numerics(BaseModel):
    """Discretization and tolerance settings, defaults from the environment"""

    nodes: int = Field(default_factory=lambda: config.NODES, ge=16)
    cheb_degree: int = Field(default_factory=lambda: config.CHEB_DEGREE, ge=4)
    inner_nodes: int = Field(default_factory=lambda: config.INNER_NODES, ge=16)
    quad_tol: float = Field(default_factory=lambda: config.QUAD_TOL, gt=0)
    tol_eq: float = Field(default_factory=lambda: config.TOL_EQ, gt=0)
    max_outer: int = Field(default_factory=lambda: config.MAX_OUTER, ge=1)
    damping: float = Field(default_factory=lambda: config.DAMPING, gt=0, le=1)
    tol_inv: float = Field(default_factory=lambda: config.TOL_INV, gt=0)

    @field_validator("nodes", "inner_nodes")
    @classmethod
    def even_nodes(cls, value: int) -> int:
        if value % 2:
            raise ValueError("node counts must be even")
        return value

    @property
    def degree(self) -> int:
        return min(self.cheb_degree, self.nodes // 2 - 1)

    @property
    def inner_degree(self) -> int:
        return min(self.cheb_degree, self.inner_nodes // 2 - 1)


class TermSpec(BaseModel):
    """One separable product c * prod_j p_j(x_j); polys hold ascending coefficients"""

    coeff: float = 1.0
    polys: List[List[float]]


class PotentialSpec(BaseModel):
    """
    Represents the `potential` block of a model file.

    Only the parameters of the selected preset are read; `onebody` adds a
    polynomial one-body part to every preset.
    """

    model_config = ConfigDict(extra="forbid")

    type: PotentialType
    terms: List[TermSpec] = []
    scale: Optional[float] = None
    q: Optional[float] = None
    n: Optional[float] = None
    onebody: List[float] = []
    corrections: Optional[List[Any]] = None

    @field_validator("corrections")
    @classmethod
    def reject_corrections(cls, value: Optional[List[Any]]) -> Optional[List[Any]]:
        if value:
            raise ValueError(
                "N-dependent potential corrections T^[p], p >= 1, are not supported"
            )
        return value

    @field_validator("q")
    @classmethod
    def check_q(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not 0.0 < value < 1.0:
            raise ValueError("q must lie in (0, 1)")
        return value

    @model_validator(mode="after")
    def check_preset(self) -> Self:
        if self.type is PotentialType.polynomial_sum and not (self.terms or self.onebody):
            raise ValueError("polynomial_sum needs at least one term")
        if self.type is PotentialType.qdeformed and self.q is None:
            raise ValueError("qdeformed needs q")
        if self.type is PotentialType.onmodel and self.n is None:
            raise ValueError("onmodel needs n")
        return self


def _check_interval(pair: List[Optional[float]]) -> List[Optional[float]]:
    if len(pair) != 2:
        raise ValueError("segments are [lo, hi] pairs")
    return pair


Interval = Annotated[List[Optional[float]], AfterValidator(_check_interval)]


class ModelConfig(BaseModel):
    """
    Represents a beta-ensemble model file.

    Unbounded endpoints are given as null and must be truncated (see
    potential.truncate_domain) before a Domain can be built.
    """

    beta: float = Field(gt=0)
    r: int = Field(ge=1)
    N: int = Field(default=100, ge=1)
    segments: List[Interval]
    edge_flags: Optional[List[Tuple[bool, bool]]] = None
    potential: PotentialSpec
    filling: Optional[List[float]] = None
    numerics: Numerics = Field(default_factory=Numerics)

    @model_validator(mode="after")
    def check_filling(self) -> Self:
        if self.filling is None:
            return self
        if len(self.filling) != len(self.segments):
            raise ValueError("filling must have one entry per segment")
        if any(e < 0 for e in self.filling):
            raise ValueError("filling fractions must be non-negative")
        if abs(sum(self.filling) - 1.0) > 1e-12:
            raise ValueError("filling fractions must sum to 1")
        return self

    @cached_property
    def domain(self) -> Domain:
        return build_domain(self.segments, self.edge_flags)

    @property
    def bounded(self) -> bool:
        return all(e is not None and np.isfinite(e) for pair in self.segments for e in pair)

    def particle_counts(self, N: Optional[int] = None) -> List[int]:
        """N_h = round(N eps_h) with the largest-remainder correction"""
        N = self.N if N is None else N
        if self.filling is None:
            raise ConfigurationError("particle counts need filling fractions")
        exact = np.array(self.filling) * N
        counts = np.floor(exact).astype(int)
        remainder = N - counts.sum()
        for h in np.argsort(-(exact - counts), kind="stable")[:remainder]:
            counts[h] += 1
        return counts.tolist()

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> Self:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}", {"path": str(path)})
        try:
            return cls.model_validate(json.loads(path.read_text()))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON: {e}") from e
        except ValidationError as e:
            raise ConfigurationError(
                f"{path}: invalid model configuration",
                {"errors": [err["msg"] for err in e.errors()]},
            ) from e

    def with_overrides(self, **updates: Any) -> Self:
        data: Dict[str, Any] = self.model_dump()
        data.update(updates)
        return type(self).model_validate(data)
