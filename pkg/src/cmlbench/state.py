"""Stores, heaps, partitioned local states and concrete configurations."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .formulas import ResourceContext, ctx_dom, ctx_inv, sat
from .heaps import (
    EMPTY, FrozenMap, HeapError, enumerate_splits, heap, heap_disjoint,
    heap_join, heap_remove,
)
from .syntax import TokenStream, Unbound

__all__ = [
    "FrozenMap", "HeapError", "LocalState", "Configuration", "enumerate_splits",
    "heap", "heap_disjoint", "heap_join", "heap_remove", "is_local_state",
    "local_state_problems", "parse_state", "show_state", "with_resource_flags",
]


@dataclass(frozen=True, eq=False)
class LocalState:
    """Store, process/environment/available heaps and held resource sets."""

    s: FrozenMap = EMPTY
    h1: FrozenMap = EMPTY
    h2: FrozenMap = EMPTY
    H: FrozenMap = EMPTY
    N1: frozenset = frozenset()
    N2: frozenset = frozenset()
    # States are hashed constantly during exploration; keep the hash.
    _hash: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_hash", hash((self.s, self.h1, self.h2, self.H, self.N1, self.N2)))

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, LocalState):
            return NotImplemented
        return (self._hash == other._hash and self.s == other.s and self.h1 == other.h1
                and self.h2 == other.h2 and self.H == other.H and self.N1 == other.N1
                and self.N2 == other.N2)

    def swapped(self) -> "LocalState":
        """Exchange the process and environment portions."""
        return LocalState(self.s, self.h2, self.h1, self.H, self.N2, self.N1)

    def full_heap(self) -> FrozenMap:
        return heap_join(heap_join(self.h1, self.h2), self.H)

    def replace(self, **kw) -> "LocalState":
        return replace(self, **kw)


@dataclass(frozen=True)
class Configuration:
    """A remaining computation paired with a local state; ``k is None`` means finished."""

    k: object
    ls: LocalState


def with_resource_flags(ls: LocalState, ctx: ResourceContext) -> LocalState:
    """Set s(r) to 0 for held resources and 1 for free ones, for every r in dom(ctx)."""
    held = ls.N1 | ls.N2
    s = ls.s.update({r: 0 if r in held else 1 for r in ctx_dom(ctx)})
    return ls.replace(s=s)


def local_state_problems(ls: LocalState, ctx: ResourceContext) -> list:
    out = []
    if not heap_disjoint(ls.h1, ls.h2):
        out.append("h1 and h2 overlap")
    if not heap_disjoint(ls.h1, ls.H):
        out.append("h1 and H overlap")
    if not heap_disjoint(ls.h2, ls.H):
        out.append("h2 and H overlap")
    if ls.N1 & ls.N2:
        out.append(f"N1 and N2 share {sorted(ls.N1 & ls.N2)}")
    held = ls.N1 | ls.N2
    for r in sorted(ctx_dom(ctx) | held):
        want = 0 if r in held else 1
        if ls.s.get(r) != want:
            out.append(f"store maps resource {r} to {ls.s.get(r)}, expected {want}")
    try:
        if not sat(ls.s, ls.H, ctx_inv(ctx.exclude(held))):
            out.append("H does not satisfy the invariants of the available resources")
    except Unbound as exc:
        out.append(f"invariant mentions unbound identifier {exc.args[0]}")
    return out


def is_local_state(ls: LocalState, ctx: ResourceContext) -> bool:
    return not local_state_problems(ls, ctx)


# ---------------------------------------------------------------------------
# State literals: store{x=1} heap1{1:7} heap2{} H{} N1{} N2{}

_SECTIONS = {"store": "s", "heap1": "h1", "heap2": "h2", "H": "H", "N1": "N1", "N2": "N2"}


def parse_state_from(ts: TokenStream) -> LocalState:
    fields = {}
    while ts.peek().kind == "name" and ts.peek().text in _SECTIONS and ts.at("{", 1):
        key = _SECTIONS[ts.next().text]
        if key in fields:
            ts.fail(f"duplicate state section {key}")
        ts.expect("{")
        if key in ("N1", "N2"):
            names = []
            if not ts.at("}"):
                names.append(ts.name())
                while ts.accept(","):
                    names.append(ts.name())
            fields[key] = frozenset(names)
        elif key == "s":
            items = {}
            if not ts.at("}"):
                while True:
                    name = ts.name()
                    ts.expect("=")
                    items[name] = ts.integer()
                    if not ts.accept(","):
                        break
            fields[key] = FrozenMap(items)
        else:
            items = {}
            if not ts.at("}"):
                while True:
                    addr = ts.integer()
                    ts.expect(":")
                    items[addr] = ts.integer()
                    if not ts.accept(","):
                        break
            try:
                fields[key] = heap(items)
            except HeapError as exc:
                ts.fail(str(exc))
        ts.expect("}")
    return LocalState(**fields)


def parse_state(text: str) -> LocalState:
    ts = TokenStream(text)
    ls = parse_state_from(ts)
    ts.done()
    return ls


def _show_heap(h) -> str:
    return ", ".join(f"{a}:{v}" for a, v in sorted(h.items()))


def show_state(ls: LocalState) -> str:
    store = ", ".join(f"{k}={v}" for k, v in sorted(ls.s.items()))
    return (f"store{{{store}}} heap1{{{_show_heap(ls.h1)}}} heap2{{{_show_heap(ls.h2)}}} "
            f"H{{{_show_heap(ls.H)}}} N1{{{', '.join(sorted(ls.N1))}}} N2{{{', '.join(sorted(ls.N2))}}}")
