from itertools import combinations_with_replacement

import pytest

from app.core.errors import MalformedIndexError, ResourceBudgetError
from app.services.index_core import (
    ClassTag,
    MultiIndex,
    classify,
    conjugate,
    enumerate_class,
    irreducible_part,
    irreducible_resonant,
)

SEXTIC = MultiIndex.from_sides([0, 1, 5], [-1, 3, 4])


@pytest.mark.parametrize(
    "j, tag",
    [
        (MultiIndex.from_sides([3], [3]), ClassTag.R),
        (SEXTIC, ClassTag.R),
        (MultiIndex.from_sides([2, 0], [1, 1]), ClassTag.M),
        (MultiIndex.from_sides([2, 1], [1, 1]), ClassTag.Z),
        (MultiIndex.from_sides([2, 1], []), ClassTag.NONE),
    ],
)
def test_classify_examples(j, tag):
    assert classify(j) == tag


def test_classify_rejects_odd_length():
    with pytest.raises(MalformedIndexError):
        classify(MultiIndex.from_sides([1, 2, 3], []))


def test_delta_must_be_a_sign():
    with pytest.raises(MalformedIndexError):
        MultiIndex.of([(2, 1), (-1, 1)])


def test_irreducible_part_drops_action_pairs():
    assert irreducible_part(MultiIndex.from_sides([3], [3])) == MultiIndex.empty()
    padded = MultiIndex.from_sides([2, 0, 1, 5], [2, -1, 3, 4])
    assert irreducible_part(padded) == SEXTIC
    assert SEXTIC.is_irreducible
    assert not padded.is_irreducible


def test_conjugate_keeps_class_and_flips_invariants():
    for j in enumerate_class(2, 3, ClassTag.M):
        jc = conjugate(j)
        assert classify(jc) == classify(j)
        assert jc.laplacian == -j.laplacian
        assert jc.momentum == -j.momentum
        assert conjugate(jc) == j


def test_mu_ordering():
    assert SEXTIC.mu_max == pytest.approx((1 + 25) ** 0.5)
    assert SEXTIC.mu_min == pytest.approx(1.0)
    assert SEXTIC.mu(3) == pytest.approx((1 + 9) ** 0.5)


def test_orderings_counts_distinct_tuples():
    assert MultiIndex.from_sides([2, 0], [1, 1]).orderings == 12
    assert MultiIndex.from_sides([1, 1], [1, 1]).orderings == 6


def test_enumerate_small_resonant_class():
    out = list(enumerate_class(1, 1, ClassTag.R))
    assert len(out) == 3
    assert all(j.is_action_only for j in out)


def test_no_irreducible_resonant_quartets():
    assert list(enumerate_class(2, 50, ClassTag.R, irreducible_only=True)) == []


def _brute_force_resonant(m, window):
    values = range(-window, window + 1)
    found = set()
    for plus in combinations_with_replacement(values, m):
        for minus in combinations_with_replacement(values, m):
            j = MultiIndex.from_sides(plus, minus)
            if j.is_resonant:
                found.add(j)
    return found


def test_enumeration_matches_brute_force():
    assert set(enumerate_class(3, 5, ClassTag.R)) == _brute_force_resonant(3, 5)


def test_enumeration_covers_the_sextic():
    assert SEXTIC in set(irreducible_resonant(6, 5))


def test_enumeration_budget():
    with pytest.raises(ResourceBudgetError):
        list(enumerate_class(3, 50, ClassTag.Z, cap=1000))
