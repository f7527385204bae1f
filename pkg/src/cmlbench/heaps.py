"""Immutable finite maps used for stores and heaps, and the heap algebra."""
from __future__ import annotations

from collections.abc import Mapping
from itertools import combinations, product
from typing import Iterable, Iterator


class FrozenMap(Mapping):
    """A hashable, immutable dict."""

    __slots__ = ("_d", "_hash")

    def __init__(self, items=()):
        self._d = dict(items)
        self._hash = None

    def __getitem__(self, key):
        return self._d[key]

    def __iter__(self):
        return iter(self._d)

    def __len__(self):
        return len(self._d)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._d.items()))
        return self._hash

    def __eq__(self, other):
        if isinstance(other, FrozenMap):
            return self._d == other._d
        if isinstance(other, Mapping):
            return self._d == dict(other)
        return NotImplemented

    def __repr__(self):
        inner = ", ".join(f"{k!r}: {v!r}" for k, v in sorted(self._d.items(), key=lambda kv: str(kv[0])))
        return "{" + inner + "}"

    def set(self, key, value) -> "FrozenMap":
        d = dict(self._d)
        d[key] = value
        return FrozenMap(d)

    def update(self, other) -> "FrozenMap":
        d = dict(self._d)
        d.update(other)
        return FrozenMap(d)

    def without(self, keys) -> "FrozenMap":
        keys = set(keys)
        return FrozenMap((k, v) for k, v in self._d.items() if k not in keys)

    def restrict(self, keys) -> "FrozenMap":
        keys = set(keys)
        return FrozenMap((k, v) for k, v in self._d.items() if k in keys)

    def sorted_items(self) -> list:
        return sorted(self._d.items(), key=lambda kv: str(kv[0]))


EMPTY = FrozenMap()


class HeapError(ValueError):
    pass


def heap(items=()) -> FrozenMap:
    h = FrozenMap(items)
    for addr in h:
        if not isinstance(addr, int) or addr <= 0:
            raise HeapError(f"heap addresses must be positive integers, got {addr!r}")
    return h


def heap_disjoint(h1: Mapping, h2: Mapping) -> bool:
    if len(h1) > len(h2):
        h1, h2 = h2, h1
    return not any(a in h2 for a in h1)


def heap_join(h1: Mapping, h2: Mapping) -> FrozenMap:
    if not heap_disjoint(h1, h2):
        raise HeapError(f"cannot join overlapping heaps {h1!r} and {h2!r}")
    d = dict(h1)
    d.update(h2)
    return FrozenMap(d)


def heap_join_all(heaps: Iterable[Mapping]) -> FrozenMap:
    out = EMPTY
    for h in heaps:
        out = heap_join(out, h)
    return out


def heap_remove(h: Mapping, addr: int) -> FrozenMap:
    if addr not in h:
        raise HeapError(f"address {addr} not in heap")
    return FrozenMap((a, v) for a, v in h.items() if a != addr)


def heap_minus(h: Mapping, part: Mapping) -> FrozenMap:
    """h with the cells of ``part`` removed; ``part`` must be a sub-heap of h."""
    if not is_subheap(part, h):
        raise HeapError(f"{part!r} is not a sub-heap of {h!r}")
    return FrozenMap((a, v) for a, v in h.items() if a not in part)


def is_subheap(part: Mapping, h: Mapping) -> bool:
    return all(a in h and h[a] == v for a, v in part.items())


def compatible(h1: Mapping, h2: Mapping) -> bool:
    """Two heaps are compatible when they agree on every shared address."""
    if len(h1) > len(h2):
        h1, h2 = h2, h1
    return all(h2.get(a, v) == v for a, v in h1.items())


def enumerate_splits(h: Mapping) -> Iterator[tuple]:
    """All ordered pairs (h1, h2) with h1 . h2 = h, each exactly once."""
    items = sorted(h.items())
    n = len(items)
    for mask in range(1 << n):
        left, right = {}, {}
        for j, (a, v) in enumerate(items):
            (left if mask >> j & 1 else right)[a] = v
        yield FrozenMap(left), FrozenMap(right)


def subheaps(h: Mapping) -> Iterator[FrozenMap]:
    items = sorted(h.items())
    for r in range(len(items) + 1):
        for combo in combinations(items, r):
            yield FrozenMap(combo)


def all_heaps(addresses: Iterable[int], values: Iterable[int], max_cells: int | None = None) -> Iterator[FrozenMap]:
    """Every heap whose domain lies in ``addresses`` and whose contents lie in ``values``.

    Heaps are produced in order of increasing size.
    """
    addresses = sorted(addresses)
    values = list(values)
    top = len(addresses) if max_cells is None else min(max_cells, len(addresses))
    for size in range(top + 1):
        for dom in combinations(addresses, size):
            for vals in product(values, repeat=size):
                yield FrozenMap(zip(dom, vals))


def all_stores(names: Iterable[str], values: Iterable[int]) -> Iterator[FrozenMap]:
    names = sorted(names)
    values = list(values)
    for vals in product(values, repeat=len(names)):
        yield FrozenMap(zip(names, vals))
