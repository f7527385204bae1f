"""Separation-logic formulas: parsing, satisfaction, substitution, precision
and resource contexts."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Union

from .heaps import EMPTY, FrozenMap, all_heaps, all_stores, compatible, enumerate_splits
from .syntax import (
    BAnd, BFalse, BNot, BOr, BTrue, Cmp, Expr, ParseError, TokenStream, bool_vars, eval_bool_in,
    eval_expr_in, expr_vars, parse_expr_from, show_bool, show_expr, subst_bool,
    subst_expr,
)


@dataclass(frozen=True)
class Bool:
    b: object  # an atomic BoolExpr: Cmp, BTrue or BFalse


@dataclass(frozen=True)
class Emp:
    pass


@dataclass(frozen=True)
class PointsTo:
    addr: Expr
    value: Expr


@dataclass(frozen=True)
class Star:
    left: "SLFormula"
    right: "SLFormula"


@dataclass(frozen=True)
class And:
    left: "SLFormula"
    right: "SLFormula"


@dataclass(frozen=True)
class Or:
    left: "SLFormula"
    right: "SLFormula"


@dataclass(frozen=True)
class Not:
    arg: "SLFormula"


SLFormula = Union[Bool, Emp, PointsTo, Star, And, Or, Not]

TRUE = Bool(BTrue())
FALSE = Bool(BFalse())
EMP = Emp()


def from_bool(b) -> SLFormula:
    """Lift a boolean expression, pushing its connectives to formula level."""
    if isinstance(b, BNot):
        return Not(from_bool(b.arg))
    if isinstance(b, BAnd):
        return And(from_bool(b.left), from_bool(b.right))
    if isinstance(b, BOr):
        return Or(from_bool(b.left), from_bool(b.right))
    return Bool(b)


def star_all(parts: Iterable[SLFormula]) -> SLFormula:
    parts = list(parts)
    if not parts:
        return EMP
    out = parts[0]
    for p in parts[1:]:
        out = Star(out, p)
    return out


def free_vars(p: SLFormula) -> frozenset:
    if isinstance(p, Bool):
        return bool_vars(p.b)
    if isinstance(p, PointsTo):
        return expr_vars(p.addr) | expr_vars(p.value)
    if isinstance(p, (Star, And, Or)):
        return free_vars(p.left) | free_vars(p.right)
    if isinstance(p, Not):
        return free_vars(p.arg)
    return frozenset()


def substitute(p: SLFormula, e: Expr, i: str) -> SLFormula:
    """p[e/i]."""
    return subst_formula(p, {i: e})


def subst_formula(p: SLFormula, mapping: dict) -> SLFormula:
    if isinstance(p, Bool):
        return Bool(subst_bool(p.b, mapping))
    if isinstance(p, PointsTo):
        return PointsTo(subst_expr(p.addr, mapping), subst_expr(p.value, mapping))
    if isinstance(p, Star):
        return Star(subst_formula(p.left, mapping), subst_formula(p.right, mapping))
    if isinstance(p, And):
        return And(subst_formula(p.left, mapping), subst_formula(p.right, mapping))
    if isinstance(p, Or):
        return Or(subst_formula(p.left, mapping), subst_formula(p.right, mapping))
    if isinstance(p, Not):
        return Not(subst_formula(p.arg, mapping))
    return p


def sat(store, heap, p: SLFormula) -> bool:
    """Does the state (store, heap) satisfy p?  Raises Unbound on a missing identifier."""
    if isinstance(p, Bool):
        return eval_bool_in(p.b, store)
    if isinstance(p, Emp):
        return len(heap) == 0
    if isinstance(p, PointsTo):
        # Exact points-to: the heap is the single cell.
        if len(heap) != 1:
            return False
        l = eval_expr_in(p.addr, store)
        return l in heap and heap[l] == eval_expr_in(p.value, store)
    if isinstance(p, And):
        return sat(store, heap, p.left) and sat(store, heap, p.right)
    if isinstance(p, Or):
        return sat(store, heap, p.left) or sat(store, heap, p.right)
    if isinstance(p, Not):
        return not sat(store, heap, p.arg)
    if isinstance(p, Star):
        return any(sat(store, h1, p.left) and sat(store, h2, p.right)
                   for h1, h2 in enumerate_splits(heap))
    raise TypeError(p)


def emp_forcing(p: SLFormula) -> bool:
    """Syntactic check that every heap satisfying p is empty."""
    if isinstance(p, Emp):
        return True
    if isinstance(p, And):
        return emp_forcing(p.left) or emp_forcing(p.right)
    if isinstance(p, (Or, Star)):
        return emp_forcing(p.left) and emp_forcing(p.right)
    return False


# ---------------------------------------------------------------------------
# Precision


@dataclass(frozen=True)
class Bounds:
    addresses: tuple
    values: tuple

    @staticmethod
    def of(addr_bound: int, value_bound: int) -> "Bounds":
        return Bounds(tuple(range(1, addr_bound + 1)), tuple(range(0, value_bound + 1)))


class _HeapSet:
    """A set of heaps over fixed bounds: finite, or everything except a finite set."""

    __slots__ = ("heaps", "cofinite")

    def __init__(self, heaps, cofinite=False):
        self.heaps = frozenset(heaps)
        self.cofinite = cofinite

    def contains(self, h) -> bool:
        return (h in self.heaps) != self.cofinite


def _universe(bounds: Bounds) -> list:
    return list(all_heaps(bounds.addresses, bounds.values))


def _models(p, store, bounds, universe_cache) -> _HeapSet:
    if isinstance(p, Bool):
        return _HeapSet((), cofinite=eval_bool_in(p.b, store))
    if isinstance(p, Emp):
        return _HeapSet([EMPTY])
    if isinstance(p, PointsTo):
        l, v = eval_expr_in(p.addr, store), eval_expr_in(p.value, store)
        # Models are heaps over the bounds; a cell outside them has none.
        if l not in bounds.addresses or v not in bounds.values:
            return _HeapSet(())
        return _HeapSet([FrozenMap({l: v})])
    if isinstance(p, Not):
        m = _models(p.arg, store, bounds, universe_cache)
        return _HeapSet(m.heaps, not m.cofinite)
    if isinstance(p, And):
        a = _models(p.left, store, bounds, universe_cache)
        b = _models(p.right, store, bounds, universe_cache)
        if a.cofinite and b.cofinite:
            return _HeapSet(a.heaps | b.heaps, True)
        if a.cofinite:
            a, b = b, a
        return _HeapSet((h for h in a.heaps if b.contains(h)))
    if isinstance(p, Or):
        a = _models(p.left, store, bounds, universe_cache)
        b = _models(p.right, store, bounds, universe_cache)
        if a.cofinite and b.cofinite:
            return _HeapSet(a.heaps & b.heaps, True)
        if a.cofinite or b.cofinite:
            fin, cof = (b, a) if a.cofinite else (a, b)
            return _HeapSet(cof.heaps - fin.heaps, True)
        return _HeapSet(a.heaps | b.heaps)
    if isinstance(p, Star):
        a = _models(p.left, store, bounds, universe_cache)
        b = _models(p.right, store, bounds, universe_cache)
        if not a.cofinite and not b.cofinite:
            out = set()
            for h1 in a.heaps:
                for h2 in b.heaps:
                    if not any(x in h2 for x in h1):
                        d = dict(h1)
                        d.update(h2)
                        out.add(FrozenMap(d))
            return _HeapSet(out)
        if "u" not in universe_cache:
            universe_cache["u"] = _universe(bounds)
        out = [h for h in universe_cache["u"]
               if any(a.contains(h1) and b.contains(h2) for h1, h2 in enumerate_splits(h))]
        return _HeapSet(out)
    raise TypeError(p)


def satisfying_heaps(p: SLFormula, store, bounds: Bounds) -> list:
    """Every heap over the bounds satisfying p in this store, smallest first."""
    m = _models(p, store, bounds, {})
    if m.cofinite:
        return [h for h in all_heaps(bounds.addresses, bounds.values) if h not in m.heaps]
    addrs, vals = set(bounds.addresses), set(bounds.values)
    out = [h for h in m.heaps if all(a in addrs and v in vals for a, v in h.items())]
    return sorted(out, key=lambda h: (len(h), sorted(h.items())))


def _has_compatible_pair(m: _HeapSet, bounds: Bounds) -> bool:
    if m.cofinite:
        # Everything but a finite set: look for two distinct compatible small heaps.
        small = [h for h in all_heaps(bounds.addresses, bounds.values, max_cells=1)
                 if h not in m.heaps]
        for h1, h2 in combinations(small, 2):
            if compatible(h1, h2):
                return True
        pool = [h for h in all_heaps(bounds.addresses, bounds.values) if h not in m.heaps]
        return _pairwise(pool, bounds)
    return _pairwise(list(m.heaps), bounds)


def _pairwise(heaps: list, bounds: Bounds) -> bool:
    if len(heaps) < 2:
        return False
    members = set(heaps)
    if EMPTY in members:
        return True
    heaps.sort(key=len)
    if len(heaps) <= 400:
        for i, h1 in enumerate(heaps):
            for h2 in heaps[i + 1:]:
                if compatible(h1, h2):
                    return True
        return False
    # Many candidates: search for a heap over the bounds holding two members.
    for g in all_heaps(bounds.addresses, bounds.values):
        found = 0
        for r in range(len(g) + 1):
            for cells in combinations(sorted(g.items()), r):
                if FrozenMap(cells) in members:
                    found += 1
                    if found == 2:
                        return True
    return False


def is_precise(p: SLFormula, store, heap_domain=None, value_domain=None,
               bounds: Bounds | None = None) -> bool:
    """At most one sub-heap satisfies p, for every heap over the bounds and this store."""
    if bounds is None:
        bounds = Bounds(tuple(sorted(heap_domain)), tuple(sorted(value_domain)))
    if emp_forcing(p):
        return True
    m = _models(p, store, bounds, {})
    return not _has_compatible_pair(m, bounds)


def is_precise_all_stores(p: SLFormula, bounds: Bounds) -> bool:
    """Precision for every store over free(p) with values in the bounds."""
    if emp_forcing(p):
        return True
    return all(is_precise(p, s, bounds=bounds) for s in all_stores(free_vars(p), bounds.values))


def precise_bruteforce(p: SLFormula, store, bounds: Bounds) -> bool:
    """Reference oracle: count satisfying sub-heaps of every heap over the bounds."""
    for h in all_heaps(bounds.addresses, bounds.values):
        count = 0
        for sub, _rest in enumerate_splits(h):
            if sat(store, sub, p):
                count += 1
                if count > 1:
                    return False
    return True


# ---------------------------------------------------------------------------
# Resource contexts


@dataclass(frozen=True)
class ResourceEntry:
    name: str
    protected: frozenset
    invariant: SLFormula


@dataclass(frozen=True)
class ResourceContext:
    entries: tuple = ()

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate resource names in context: {names}")

    def lookup(self, r: str) -> ResourceEntry | None:
        for e in self.entries:
            if e.name == r:
                return e
        return None

    def restrict(self, names) -> "ResourceContext":
        names = set(names)
        return ResourceContext(tuple(e for e in self.entries if e.name in names))

    def exclude(self, names) -> "ResourceContext":
        names = set(names)
        return ResourceContext(tuple(e for e in self.entries if e.name not in names))

    def extend(self, entry: ResourceEntry) -> "ResourceContext":
        return ResourceContext(self.entries + (entry,))

    def as_key(self) -> frozenset:
        return frozenset(self.entries)


EMPTY_CTX = ResourceContext()


def ctx_owned(ctx: ResourceContext) -> frozenset:
    out = frozenset()
    for e in ctx.entries:
        out |= e.protected
    return out


def ctx_inv(ctx: ResourceContext) -> SLFormula:
    return star_all(e.invariant for e in ctx.entries)


def ctx_dom(ctx: ResourceContext) -> frozenset:
    return frozenset(e.name for e in ctx.entries)


def ctx_well_formed(ctx: ResourceContext, bounds: Bounds) -> bool:
    return not ctx_problems(ctx, bounds)


def ctx_problems(ctx: ResourceContext, bounds: Bounds) -> list:
    out = []
    for e in ctx.entries:
        extra = free_vars(e.invariant) - e.protected
        if extra:
            out.append(f"invariant of {e.name} mentions unprotected {sorted(extra)}")
        if not is_precise_all_stores(e.invariant, bounds):
            out.append(f"invariant of {e.name} is not precise")
    return out


# ---------------------------------------------------------------------------
# Parsing and printing

_CMP = ("<=", "<", "=")


def parse_formula_from(ts: TokenStream) -> SLFormula:
    p = _f_and(ts)
    while ts.accept("\\/"):
        p = Or(p, _f_and(ts))
    return p


def _f_and(ts):
    p = _f_star(ts)
    while ts.accept("/\\"):
        p = And(p, _f_star(ts))
    return p


def _f_star(ts):
    p = _f_not(ts)
    while ts.accept("*"):
        p = Star(p, _f_not(ts))
    return p


def _f_not(ts):
    if ts.accept("!"):
        return Not(_f_not(ts))
    return _f_atom(ts)


def _f_atom(ts):
    if ts.accept("emp"):
        return EMP
    if ts.accept("true"):
        return TRUE
    if ts.accept("false"):
        return FALSE
    if ts.at("("):
        save = ts.i
        try:
            ts.next()
            p = parse_formula_from(ts)
            ts.expect(")")
            if not any(ts.at(op) for op in _CMP + ("+", "|->")):
                return p
        except ParseError:
            pass
        ts.i = save
    left = parse_expr_from(ts)
    if ts.accept("|->"):
        return PointsTo(left, parse_expr_from(ts))
    for op in _CMP:
        if ts.accept(op):
            return Bool(Cmp(op, left, parse_expr_from(ts)))
    ts.fail("expected '|->' or a comparison")


def parse_formula(text: str) -> SLFormula:
    ts = TokenStream(text)
    p = parse_formula_from(ts)
    ts.done()
    return p


_PREC = {Or: 1, And: 2, Star: 3}
_SYM = {Or: "\\/", And: "/\\", Star: "*"}


def show_formula(p: SLFormula, prec: int = 0) -> str:
    if isinstance(p, Bool):
        s = show_bool(p.b)
        return f"({s})" if prec > 3 and isinstance(p.b, Cmp) else s
    if isinstance(p, Emp):
        return "emp"
    if isinstance(p, PointsTo):
        s = f"{show_expr(p.addr)} |-> {show_expr(p.value)}"
        return f"({s})" if prec > 3 else s
    if isinstance(p, Not):
        return "!" + show_formula(p.arg, 4)
    level = _PREC[type(p)]
    s = f"{show_formula(p.left, level)} {_SYM[type(p)]} {show_formula(p.right, level + 1)}"
    return f"({s})" if prec > level else s


def parse_context_from(ts: TokenStream, stop: str | None = None) -> ResourceContext:
    """``r(x,y): p; r2(z): q`` (possibly empty)."""
    entries = []
    while ts.peek().kind == "name" and ts.at("(", 1):
        name = ts.name()
        ts.expect("(")
        ids = []
        if not ts.at(")"):
            ids.append(ts.name())
            while ts.accept(","):
                ids.append(ts.name())
        ts.expect(")")
        ts.expect(":")
        inv = parse_formula_from(ts)
        entries.append(ResourceEntry(name, frozenset(ids), inv))
        if not ts.accept(";"):
            break
    return ResourceContext(tuple(entries))


def parse_context(text: str) -> ResourceContext:
    ts = TokenStream(text)
    ctx = parse_context_from(ts)
    ts.done()
    return ctx


def show_context(ctx: ResourceContext) -> str:
    return "; ".join(f"{e.name}({','.join(sorted(e.protected))}): {show_formula(e.invariant)}"
                     for e in ctx.entries)
