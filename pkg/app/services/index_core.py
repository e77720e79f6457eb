"""
Signed Fourier multi-indices.

A mode index is j = (delta, a) with delta = +1 for xi_a and -1 for eta_a.
A multi-index is a multiset of mode indices; we only ever store it in
canonical form (entries sorted by (a, delta)), the combinatorial multiplicity
of the ordered tuples it stands for is folded into the coefficients that
reference it.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache
from itertools import combinations_with_replacement
from typing import Iterable, Iterator, Sequence

from ..core.config import settings
from ..core.errors import MalformedIndexError, ResourceBudgetError

logger = logging.getLogger(__name__)

Entry = tuple[int, int]  # (delta, a)


class ClassTag(str, Enum):
    NONE = "none"
    Z = "Z"
    M = "M"
    R = "R"


def gauge(a: int) -> float:
    """<a> = sqrt(1 + a^2)."""
    return math.sqrt(1.0 + a * a)


@dataclass(frozen=True)
class ModeIndex:
    delta: int
    wavenumber: int

    def __post_init__(self):
        if self.delta not in (1, -1):
            raise MalformedIndexError(f"delta must be +1 or -1, got {self.delta}")

    @property
    def gauge(self) -> float:
        return gauge(self.wavenumber)

    def conjugate(self) -> "ModeIndex":
        return ModeIndex(-self.delta, self.wavenumber)

    def as_entry(self) -> Entry:
        return (self.delta, self.wavenumber)


def _sort_key(entry: Entry) -> tuple[int, int]:
    delta, a = entry
    return (a, delta)


@dataclass(frozen=True)
class MultiIndex:
    entries: tuple[Entry, ...]

    # --- construction
    @classmethod
    def of(cls, entries: Iterable[Entry | ModeIndex | Sequence[int]]) -> "MultiIndex":
        out = []
        for e in entries:
            if isinstance(e, ModeIndex):
                out.append(e.as_entry())
            else:
                delta, a = int(e[0]), int(e[1])
                if delta not in (1, -1):
                    raise MalformedIndexError(f"delta must be +1 or -1, got {delta}")
                out.append((delta, a))
        return cls(tuple(sorted(out, key=_sort_key)))

    @classmethod
    def from_sides(cls, plus: Iterable[int], minus: Iterable[int]) -> "MultiIndex":
        """Build from the xi wavenumbers and the eta wavenumbers."""
        return cls.of([(1, a) for a in plus] + [(-1, b) for b in minus])

    @classmethod
    def action(cls, a: int) -> "MultiIndex":
        return cls(((-1, a), (1, a)))

    @classmethod
    def empty(cls) -> "MultiIndex":
        return cls(())

    @classmethod
    def from_json(cls, data: Sequence[Sequence[int]]) -> "MultiIndex":
        return cls.of(data)

    def to_json(self) -> list[list[int]]:
        return [[d, a] for d, a in self.entries]

    # --- arithmetic
    def __len__(self) -> int:
        return len(self.entries)

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        return MultiIndex(tuple(sorted(self.entries + other.entries, key=_sort_key)))

    @property
    def half_length(self) -> int:
        return len(self.entries) // 2

    @cached_property
    def delta_sum(self) -> int:
        return sum(d for d, _ in self.entries)

    @cached_property
    def momentum(self) -> int:
        return sum(d * a for d, a in self.entries)

    @cached_property
    def laplacian(self) -> int:
        return sum(d * a * a for d, a in self.entries)

    @cached_property
    def signed_counts(self) -> dict[int, int]:
        """sigma(a) = n_plus(a) - n_minus(a), zero entries dropped."""
        sigma: dict[int, int] = {}
        for d, a in self.entries:
            sigma[a] = sigma.get(a, 0) + d
        return {a: v for a, v in sigma.items() if v}

    @cached_property
    def counts(self) -> Counter:
        return Counter(self.entries)

    def count(self, delta: int, a: int) -> int:
        return self.counts.get((delta, a), 0)

    @cached_property
    def wavenumbers(self) -> tuple[int, ...]:
        return tuple(sorted({a for _, a in self.entries}))

    def conjugate(self) -> "MultiIndex":
        return MultiIndex.of((-d, a) for d, a in self.entries)

    def classify(self) -> ClassTag:
        if len(self.entries) % 2:
            raise MalformedIndexError(f"multi-index of odd length {len(self.entries)}")
        if not self.entries:
            raise MalformedIndexError("empty multi-index")
        if self.delta_sum != 0:
            return ClassTag.NONE
        if self.momentum != 0:
            return ClassTag.Z
        if self.laplacian != 0:
            return ClassTag.M
        return ClassTag.R

    @property
    def is_resonant(self) -> bool:
        return self.delta_sum == 0 and self.momentum == 0 and self.laplacian == 0

    @cached_property
    def irreducible(self) -> "MultiIndex":
        out = []
        for a, v in self.signed_counts.items():
            sign = 1 if v > 0 else -1
            out.extend([(sign, a)] * abs(v))
        return MultiIndex(tuple(sorted(out, key=_sort_key)))

    @property
    def is_irreducible(self) -> bool:
        return len(self.irreducible) == len(self.entries)

    @property
    def is_action_only(self) -> bool:
        return not self.signed_counts

    # --- mu ordering
    @cached_property
    def mu_entries(self) -> tuple[Entry, ...]:
        """Entries sorted by gauge descending; ties by a descending then delta descending."""
        return tuple(sorted(self.entries, key=lambda e: (abs(e[1]), e[1], e[0]), reverse=True))

    def mu(self, k: int) -> float:
        """<mu_k(j)>, 1-based."""
        return gauge(self.mu_entries[k - 1][1])

    @property
    def mu_min(self) -> float:
        return gauge(self.mu_entries[-1][1])

    @property
    def mu_max(self) -> float:
        return gauge(self.mu_entries[0][1])

    @cached_property
    def gauge_product(self) -> float:
        return math.prod(gauge(a) for _, a in self.entries)

    @cached_property
    def orderings(self) -> int:
        """Number of ordered tuples represented by this multiset."""
        n = math.factorial(len(self.entries))
        for mult in self.counts.values():
            n //= math.factorial(mult)
        return n

    def contract(self, other: "MultiIndex", a: int) -> "MultiIndex":
        """(self + other) with one (+1, a) and one (-1, a) removed."""
        merged = list(self.entries + other.entries)
        merged.remove((1, a))
        merged.remove((-1, a))
        return MultiIndex(tuple(sorted(merged, key=_sort_key)))

    def with_action(self, a: int) -> "MultiIndex":
        return self + MultiIndex.action(a)

    def __str__(self) -> str:
        return " ".join(f"{'+' if d > 0 else '-'}{a if a >= 0 else f'({a})'}" for d, a in self.entries)


def classify(j: MultiIndex) -> ClassTag:
    return j.classify()


def irreducible_part(j: MultiIndex) -> MultiIndex:
    return j.irreducible


def conjugate(j: MultiIndex) -> MultiIndex:
    return j.conjugate()


def projected_count(m: int, window: int, tag: ClassTag) -> int:
    """Upper bound on the number of canonical candidates the enumerator visits."""
    width = 2 * window + 1
    sides = math.comb(width + m - 1, m)
    if tag == ClassTag.Z:
        return sides * sides
    if tag == ClassTag.M:
        return sides * math.comb(width + m - 2, m - 1)
    if tag == ClassTag.R:
        return sides * (math.comb(width + m - 3, m - 2) if m >= 2 else 1)
    raise ValueError(f"cannot enumerate class {tag!r}")


def enumerate_class(
    m: int,
    window: int,
    tag: ClassTag | str = ClassTag.R,
    irreducible_only: bool = False,
    *,
    cap: int | None = None,
) -> Iterator[MultiIndex]:
    """Stream the canonical multi-indices of length 2m in the class, |a| <= window."""
    tag = ClassTag(tag)
    if m < 1 or window < 0:
        raise ValueError("m must be positive and window nonnegative")
    cap = settings.ENUMERATION_CAP if cap is None else cap
    projected = projected_count(m, window, tag)
    if projected > cap:
        raise ResourceBudgetError(
            f"enumerating class {tag} with m={m}, K={window} visits ~{projected} candidates (cap {cap})"
        )
    yield from _enumerate_cached(m, window, tag, irreducible_only)


@lru_cache(maxsize=64)
def _enumerate_cached(m: int, window: int, tag: ClassTag, irreducible_only: bool) -> tuple[MultiIndex, ...]:
    out = [
        MultiIndex.from_sides(plus, minus)
        for plus, minus in _sides(m, window, tag)
        if not irreducible_only or not set(plus) & set(minus)
    ]
    logger.debug(f"enumerated {len(out)} multi-indices (m={m}, K={window}, class={tag}, irr={irreducible_only})")
    return tuple(out)


def _sides(m: int, window: int, tag: ClassTag) -> Iterator[tuple[tuple[int, ...], tuple[int, ...]]]:
    values = range(-window, window + 1)
    for plus in combinations_with_replacement(values, m):
        if tag == ClassTag.Z:
            for minus in combinations_with_replacement(values, m):
                yield plus, minus
            continue
        p_sum = sum(plus)
        if tag == ClassTag.M:
            if m == 1:
                if abs(p_sum) <= window:
                    yield plus, (p_sum,)
                continue
            for prefix in combinations_with_replacement(values, m - 1):
                last = p_sum - sum(prefix)
                if prefix[-1] <= last <= window:
                    yield plus, prefix + (last,)
            continue
        # resonant: the last two eta wavenumbers solve a quadratic
        if m == 1:
            yield plus, plus
            continue
        q_sum = sum(a * a for a in plus)
        prefixes = combinations_with_replacement(values, m - 2) if m > 2 else [()]
        for prefix in prefixes:
            s = p_sum - sum(prefix)
            q = q_sum - sum(b * b for b in prefix)
            disc = 2 * q - s * s
            if disc < 0:
                continue
            d = math.isqrt(disc)
            if d * d != disc or (s - d) % 2:
                continue
            b1, b2 = (s - d) // 2, (s + d) // 2
            if prefix and b1 < prefix[-1]:
                continue
            if b1 < -window or b2 > window:
                continue
            yield plus, prefix + (b1, b2)


def irreducible_resonant(max_length: int, window: int, *, cap: int | None = None) -> list[MultiIndex]:
    """All k in Irr with length <= max_length and entries in the window."""
    out: list[MultiIndex] = []
    for m in range(2, max_length // 2 + 1):
        out.extend(enumerate_class(m, window, ClassTag.R, irreducible_only=True, cap=cap))
    return out
