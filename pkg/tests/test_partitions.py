import sys
from pathlib import Path

import pytest

# Add the parent directory to sys.path so we can import the project modules
sys.path.insert(0, str(Path(__file__).parent.parent))

from beta_ensembles.core.errors import TensorBudgetExceeded
from beta_ensembles.expansion.partitions import (
    MAX_PARTITION_ARITY,
    bell,
    check_arity,
    compositions,
    dispatchings,
    set_partitions,
    subsets,
)


class TestSetPartitions:
    @pytest.mark.parametrize("n, expected", [(0, 1), (1, 1), (2, 2), (3, 5), (4, 15), (5, 52)])
    def test_bell_numbers(self, n, expected):
        """Test that the number of set partitions is the Bell number"""
        assert bell(n) == expected

    def test_three_elements(self):
        """Test the five partitions of {0, 1, 2}"""
        assert set(set_partitions(3)) == {
            ((0,), (1,), (2,)),
            ((0,), (1, 2)),
            ((0, 1), (2,)),
            ((0, 2), (1,)),
            ((0, 1, 2),),
        }

    def test_deterministic_order(self):
        """Test that the enumeration is sorted and free of duplicates"""
        parts = set_partitions(4)

        assert list(parts) == sorted(parts)
        assert len(set(parts)) == len(parts)

    def test_check_arity(self):
        """Test that arities above the enumeration limit are refused"""
        check_arity(MAX_PARTITION_ARITY)

        with pytest.raises(TensorBudgetExceeded):
            check_arity(MAX_PARTITION_ARITY + 1)


class TestDispatchings:
    def test_count(self):
        """Test that every item picks one of the labelled blocks"""
        assert len(list(dispatchings([1, 2, 3], 2))) == 8

    def test_blocks_are_ordered(self):
        """Test that empty blocks are allowed and block order counts"""
        out = list(dispatchings([1, 2], 2))

        assert ((1, 2), ()) in out
        assert ((), (1, 2)) in out
        assert ((1,), (2,)) in out
        assert ((2,), (1,)) in out

    def test_no_items(self):
        """Test that an empty item list gives one dispatch of empty blocks"""
        assert list(dispatchings([], 3)) == [((), (), ())]


class TestCompositions:
    def test_bounded_parts(self):
        """Test compositions with lower bounds per part"""
        assert list(compositions(3, [0, 1], 3)) == [(0, 3), (1, 2), (2, 1)]

    def test_upper_bound(self):
        """Test that no part exceeds the upper bound"""
        assert list(compositions(4, [0, 0], 2)) == [(2, 2)]

    def test_negative_orders(self):
        """Test that a part may sit at order -1"""
        assert list(compositions(-1, [-1, -1], 0)) == [(-1, 0), (0, -1)]

    def test_empty(self):
        """Test that only a zero total splits into no parts"""
        assert list(compositions(0, [], 3)) == [()]
        assert list(compositions(1, [], 3)) == []


class TestSubsets:
    def test_binary_order(self):
        """Test the subsets of two items in binary order"""
        assert list(subsets([1, 2])) == [(), (1,), (2,), (1, 2)]

    def test_count(self):
        """Test that n items have 2^n subsets"""
        assert len(list(subsets(range(4)))) == 16
