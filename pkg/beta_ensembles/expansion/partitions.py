"""Set partitions, ordered dispatchings and order compositions used by the loop-equation sums."""

from functools import lru_cache
from itertools import product
from typing import Iterator, List, Sequence, Tuple

from beta_ensembles.core.errors import TensorBudgetExceeded

# Largest interaction arity whose partition sums are enumerated
MAX_PARTITION_ARITY = 5

Partition = Tuple[Tuple[int, ...], ...]


def _partitions(elements: Tuple[int, ...]) -> List[Partition]:
    if not elements:
        return [()]
    first, rest = elements[0], elements[1:]
    out: List[Partition] = []
    for part in _partitions(rest):
        out.append(((first,),) + part)
        for i, block in enumerate(part):
            out.append(part[:i] + ((first,) + block,) + part[i + 1 :])
    return out


@lru_cache(maxsize=None)
def set_partitions(n: int) -> Tuple[Partition, ...]:
    """
    All partitions of {0, .., n-1} into non-empty blocks.

    Blocks are sorted tuples and partitions are sorted by their first
    elements, so the enumeration order is deterministic.
    """
    parts = [tuple(sorted(tuple(sorted(b)) for b in p)) for p in _partitions(tuple(range(n)))]
    return tuple(sorted(set(parts)))


def bell(n: int) -> int:
    return len(set_partitions(n))


def check_arity(r: int) -> None:
    """
    Raises:
        TensorBudgetExceeded: the partition sums of an r-body interaction are too large
    """
    if r > MAX_PARTITION_ARITY:
        raise TensorBudgetExceeded(
            f"partition enumeration for r={r} exceeds the supported arity {MAX_PARTITION_ARITY}",
            {"r": r, "bell": bell(r) if r <= 8 else None},
        )


def dispatchings(items: Sequence[int], blocks: int) -> Iterator[Tuple[Tuple[int, ...], ...]]:
    """
    Every way to distribute `items` over `blocks` labelled blocks, some
    possibly empty. The order of the blocks counts.
    """
    items = tuple(items)
    for assignment in product(range(blocks), repeat=len(items)):
        yield tuple(tuple(i for i, b in zip(items, assignment) if b == j) for j in range(blocks))


def compositions(total: int, lower: Sequence[int], upper: int) -> Iterator[Tuple[int, ...]]:
    """Tuples k with k_i >= lower[i], k_i <= upper and sum k = total"""
    lower = tuple(lower)
    if not lower:
        if total == 0:
            yield ()
        return
    head, tail = lower[0], lower[1:]
    rest_min = sum(tail)
    for k in range(head, min(upper, total - rest_min) + 1):
        for more in compositions(total - k, tail, upper):
            yield (k,) + more


def subsets(items: Sequence[int]) -> Iterator[Tuple[int, ...]]:
    """All subsets of items, in binary order"""
    items = tuple(items)
    for mask in range(1 << len(items)):
        yield tuple(x for i, x in enumerate(items) if mask >> i & 1)
