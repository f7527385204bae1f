"""Patterns over configurations, assertions, bounded validity and the embedding
of separation-logic triples into assertions with an empty key set."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import combinations, product
from typing import Iterator

from .config import Limits
from .formulas import (
    EMP, EMPTY_CTX, Bounds, ResourceContext, SLFormula, ctx_dom, ctx_inv, ctx_owned,
    ctx_problems, emp_forcing, free_vars, parse_context_from, parse_formula_from,
    sat, satisfying_heaps, show_context, show_formula,
)
from .heaps import EMPTY, FrozenMap, HeapError, all_stores, heap
from .opsem import Semantics
from .state import Configuration, LocalState, is_local_state
from .syntax import (
    Add, Cons, Ident, IntLit, TokenStream, Unbound, action_footprint,
    command_footprint, iter_subcommands, parse_action_from, parse_command_from,
    parse_expr_from, show_action, show_command,
)
from .traces import Builder, Witness, explore


class _Free:
    """The free-match position: imposes no constraint when matching."""

    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "-"

    def __reduce__(self):
        return (_Free, ())


FREE = _Free()


# ---------------------------------------------------------------------------
# Linear expressions over logical variables


@dataclass(frozen=True)
class Lin:
    """const + sum(coeff * var)."""

    const: int = 0
    coeffs: FrozenMap = EMPTY

    @staticmethod
    def var(name: str) -> "Lin":
        return Lin(0, FrozenMap({name: 1}))

    @staticmethod
    def of(c: int) -> "Lin":
        return Lin(c)

    @staticmethod
    def from_expr(e) -> "Lin":
        if isinstance(e, IntLit):
            return Lin(e.value)
        if isinstance(e, Ident):
            return Lin.var(e.name)
        if isinstance(e, Add):
            return Lin.from_expr(e.left) + Lin.from_expr(e.right)
        raise TypeError(f"not a linear expression: {e!r}")

    @property
    def vars(self) -> frozenset:
        return frozenset(self.coeffs)

    def __add__(self, other: "Lin") -> "Lin":
        d = dict(self.coeffs)
        for v, c in other.coeffs.items():
            d[v] = d.get(v, 0) + c
            if d[v] == 0:
                del d[v]
        return Lin(self.const + other.const, FrozenMap(d))

    def scale(self, k: int) -> "Lin":
        return Lin(self.const * k, FrozenMap({v: c * k for v, c in self.coeffs.items()}) if k else EMPTY)

    def subst(self, env) -> "Lin":
        """Replace variables bound in ``env`` (values are ints or Lins)."""
        out = Lin(self.const)
        for v, c in self.coeffs.items():
            if v in env:
                x = env[v]
                out = out + (x.scale(c) if isinstance(x, Lin) else Lin(c * x))
            else:
                out = out + Lin(0, FrozenMap({v: c}))
        return out

    def rename(self, ren: dict) -> "Lin":
        return Lin(self.const, FrozenMap({ren.get(v, v): c for v, c in self.coeffs.items()}))

    def is_const(self) -> bool:
        return not self.coeffs

    def eval(self, env) -> int:
        return self.const + sum(c * env[v] for v, c in self.coeffs.items())

    def show(self) -> str:
        """Printed as a sum of variables and a constant; coefficients must be positive."""
        parts = []
        for v, c in sorted(self.coeffs.items()):
            if c < 0:
                raise ValueError(f"cannot print negative coefficient of {v}")
            parts.extend([v] * c)
        if self.const or not parts:
            parts.append(str(self.const))
        return "+".join(parts)


def solvable(eqs: list) -> bool:
    """Is there an integer assignment to the variables satisfying every (Lin, target)?

    Exact: unimodular column operations bring the coefficient matrix to lower
    triangular form, after which forward substitution decides solvability.
    """
    eqs = list(eqs)
    vs = sorted(set().union(*(lin.vars for lin, _ in eqs))) if eqs else []
    rows = [[lin.coeffs.get(v, 0) for v in vs] for lin, _ in eqs]
    rhs = [t - lin.const for lin, t in eqs]
    n, p, ys = len(vs), 0, []
    for i, row in enumerate(rows):
        # Euclid across columns p.. of this row, keeping the gcd in column p.
        while p < n:
            nz = [j for j in range(p, n) if row[j]]
            if len(nz) <= 1:
                if nz and nz[0] != p:
                    for r in rows:
                        r[p], r[nz[0]] = r[nz[0]], r[p]
                break
            j0 = min(nz, key=lambda j: abs(row[j]))
            for j in nz:
                if j != j0:
                    q = row[j] // row[j0]
                    for r in rows:
                        r[j] -= q * r[j0]
        rest = rhs[i] - sum(row[j] * ys[j] for j in range(p))
        if p < n and row[p]:
            if rest % row[p]:
                return False
            ys.append(rest // row[p])
            p += 1
        elif rest:
            return False
    return True


# ---------------------------------------------------------------------------
# Patterns and assertions


@dataclass(frozen=True)
class Pattern:
    """Existentially quantified configuration template with a formula.

    ``k`` is a Command, an Action (allocation judgments), an int (a computed
    value) or None for a finished computation.
    """

    X: frozenset = frozenset()
    k: object = None
    s: FrozenMap = EMPTY
    h1: object = EMPTY
    h2: object = EMPTY
    H: object = EMPTY
    N1: object = frozenset()
    N2: object = frozenset()
    p: SLFormula = EMP

    def logical_vars(self) -> frozenset:
        out = frozenset()
        for lin in self.s.values():
            out |= lin.vars
        return out

    def free_logical(self) -> frozenset:
        return self.logical_vars() - self.X

    def replace(self, **kw) -> "Pattern":
        return replace(self, **kw)


def normalize_pattern(pat: Pattern) -> Pattern:
    """Rename bound variables canonically and drop unused ones."""
    ren = {}
    for _i, lin in sorted(pat.s.items()):
        for v in sorted(lin.vars):
            if v in pat.X and v not in ren:
                ren[v] = f"?{len(ren)}"
    s = FrozenMap({i: lin.rename(ren) for i, lin in pat.s.items()})
    return pat.replace(X=frozenset(ren.values()), s=s)


@dataclass(frozen=True)
class Assertion:
    ctx: ResourceContext
    A: frozenset
    B: frozenset
    pre: Pattern
    post: Pattern


@dataclass(frozen=True)
class Verdict:
    status: str  # "Valid", "Invalid" or "Unsupported"
    witness: Witness | None = None
    reason: str = ""
    checked: int = 0

    @property
    def valid(self) -> bool:
        return self.status == "Valid"


def _flags(s: FrozenMap, ctx: ResourceContext, held) -> FrozenMap:
    return s.update({r: 0 if r in held else 1 for r in ctx_dom(ctx)})


def match_config(cfg, pat: Pattern, B, tau=None) -> bool:
    """Does the configuration match the pattern on key set B under valuation tau?"""
    ls = cfg.ls if isinstance(cfg, Configuration) else cfg
    tau = tau or {}
    if pat.h1 is not FREE and ls.h1 != pat.h1:
        return False
    if pat.N1 is not FREE and ls.N1 != pat.N1:
        return False
    fixed = {v: tau[v] for v in pat.free_logical() if v in tau}
    missing = pat.free_logical() - set(fixed)
    if missing:
        raise ValueError(f"valuation does not cover {sorted(missing)}")
    eqs = []
    for i in B:
        if i not in pat.s or i not in ls.s:
            return False
        eqs.append((pat.s[i].subst(fixed), ls.s[i]))
    if not solvable(eqs):
        return False
    try:
        return sat(ls.s, ls.h1, pat.p)
    except Unbound:
        return False


def _is_command(k) -> bool:
    return k is not None and not isinstance(k, int) and not _is_action(k)


def _is_action(k) -> bool:
    return type(k).__name__ in {"Delta", "Read", "Write", "HeapRead", "HeapWrite", "Alloc",
                                "Disp", "Try", "Acq", "Rel", "AbortAct"}


@lru_cache(maxsize=256)
def _ctx_problems_cached(ctx: ResourceContext, bounds: Bounds) -> tuple:
    return tuple(ctx_problems(ctx, bounds))


def assertion_problems(a: Assertion, limits: Limits | None = None) -> list:
    limits = limits or Limits()
    out = list(_ctx_problems_cached(a.ctx, limits.heap_bounds()))
    fp = free_vars(a.pre.p) | free_vars(a.post.p)
    if not fp <= a.A:
        out.append(f"formulas mention {sorted(fp - a.A)} outside the rely set")
    names = ctx_dom(a.ctx)
    if fp & names:
        out.append(f"formulas mention resource names {sorted(fp & names)}")
    for e in a.ctx.entries:
        if free_vars(e.invariant) & names:
            out.append(f"invariant of {e.name} mentions resource names")
    k = a.pre.k
    if k is None or isinstance(k, int):
        out.append("precondition must contain a command")
    else:
        kf = (action_footprint(k).free if _is_action(k) else command_footprint(k).free) - names
        kf = {v for v in kf if isinstance(v, str)}  # action footprints also hold addresses
        if not kf <= ctx_owned(a.ctx) | a.A:
            out.append(f"command uses {sorted(kf - ctx_owned(a.ctx) - a.A)} outside owned(ctx) and the rely set")
    for side, pat in (("pre", a.pre), ("post", a.post)):
        if not a.B <= set(pat.s):
            out.append(f"key set {sorted(a.B - set(pat.s))} not in the {side} store pattern")
    return out


def assertion_well_formed(a: Assertion, limits: Limits | None = None) -> bool:
    return not assertion_problems(a, limits)


# ---------------------------------------------------------------------------
# Validity


def h2_mode_for(ctx: ResourceContext, k) -> str:
    """Coarsest environment-heap treatment that is exact for this judgment.

    When every invariant forces an empty heap no heap ever moves between the
    process and resources, so the environment heap only matters through
    allocation freshness ("domain"), or not at all without allocation.
    """
    if not all(emp_forcing(e.invariant) for e in ctx.entries):
        return "full"
    if _is_command(k) and any(isinstance(c, Cons) for c in iter_subcommands(k)):
        return "domain"
    return "none"


def _subsets(xs) -> list:
    xs = sorted(xs)
    return [frozenset(c) for r in range(len(xs) + 1) for c in combinations(xs, r)]


def _identifiers(a: Assertion) -> list:
    k = a.pre.k
    kf = command_footprint(k).free if _is_command(k) else frozenset()
    ids = (a.A | ctx_owned(a.ctx) | set(a.pre.s) | set(a.post.s) | kf
           | free_vars(a.pre.p) | free_vars(a.post.p) | free_vars(ctx_inv(a.ctx)))
    return sorted(ids - ctx_dom(a.ctx))


def _taus(a: Assertion, values) -> list:
    fv = sorted(a.pre.free_logical() | a.post.free_logical())
    return [dict(zip(fv, vs)) for vs in product(values, repeat=len(fv))]


def _h2_candidates(mode, used, limits: Limits) -> list:
    out = [EMPTY]
    if mode == "none":
        return out
    vals = (0,) if mode == "domain" else limits.values
    for l in limits.addresses:
        if l not in used:
            out.extend(FrozenMap({l: v}) for v in vals)
    return out


def initial_states(a: Assertion, limits: Limits, store: FrozenMap | None = None) -> Iterator[tuple]:
    """(local state, valuations matching the precondition) in deterministic order.

    The environment heap starts empty or with a single cell (see ``h2_mode_for``).
    """
    bounds = limits.heap_bounds()
    names = ctx_dom(a.ctx)
    mode = h2_mode_for(a.ctx, a.pre.k)
    taus = _taus(a, limits.values)
    stores = [store] if store is not None else all_stores(_identifiers(a), limits.values)
    for s in stores:
        if a.pre.h1 is FREE:
            try:
                h1s = satisfying_heaps(a.pre.p, s, bounds)
            except Unbound:
                h1s = []
        else:
            h1s = [a.pre.h1]
        N1s = _subsets(names) if a.pre.N1 is FREE else [a.pre.N1]
        for h1 in h1s:
            for N1 in N1s:
                probe = LocalState(s, h1, N1=N1)
                ok = [t for t in taus if match_config(probe, a.pre, a.B, t)]
                if not ok:
                    continue
                for N2 in _subsets(names - N1):
                    avail = a.ctx.exclude(N1 | N2)
                    inv = ctx_inv(avail)
                    try:
                        Hs = [H for H in satisfying_heaps(inv, s, bounds) if not set(H) & set(h1)]
                    except Unbound:
                        Hs = []
                    for H in Hs:
                        for h2 in _h2_candidates(mode, set(h1) | set(H), limits):
                            ls = LocalState(_flags(s, a.ctx, N1 | N2), h1, h2, H, N1, N2)
                            if is_local_state(ls, a.ctx):
                                yield ls, ok


class _Checker:
    def __init__(self, a: Assertion, limits: Limits):
        self.a = a
        self.limits = limits
        self.sem = Semantics(a.ctx, a.A, a.B, limits.env_budget(h2_mode_for(a.ctx, a.pre.k)))
        self.root = Builder(limits.trace_bounds()).root(a.pre.k)

    def check_state(self, ls, taus):
        a = self.a

        def post_ok(final):
            return all(match_config(final, a.post, a.B, t) for t in taus)

        res = explore(self.root, ls, self.sem, terminal_ok=post_ok)
        if res.abort is not None:
            return res.abort, "an execution aborts"
        if res.violation is not None:
            return res.violation, "a final state does not match the postcondition"
        return None

    def check_stores(self, stores) -> tuple:
        """Check stores in order; return the first failure and per-store state counts."""
        counts = []
        for s in stores:
            n = 0
            for ls, taus in initial_states(self.a, self.limits, store=s):
                n += 1
                bad = self.check_state(ls, taus)
                if bad:
                    counts.append((s, n))
                    return bad, counts
            counts.append((s, n))
        return None, counts


def _worker(args):
    a, limits, stores = args
    return _Checker(a, limits).check_stores(stores)


def check_validity(a: Assertion, limits: Limits | None = None) -> Verdict:
    """Bounded validity: from every matching initial state, no execution aborts
    and every final state matches the postcondition under the same valuation."""
    limits = limits or Limits()
    if a.post.k is not None:
        return Verdict("Unsupported", reason="postcondition is not a finished computation")
    if not _is_command(a.pre.k):
        return Verdict("Unsupported", reason="precondition does not hold a command")
    problems = assertion_problems(a, limits)
    if problems:
        return Verdict("Unsupported", reason="ill-formed assertion: " + "; ".join(problems))
    stores = list(all_stores(_identifiers(a), limits.values))
    if limits.jobs > 1 and len(stores) > 1:
        chunks = [stores[i::limits.jobs] for i in range(limits.jobs)]
        with ProcessPoolExecutor(limits.jobs) as pool:
            results = list(pool.map(_worker, [(a, limits, c) for c in chunks]))
    else:
        results = [_Checker(a, limits).check_stores(stores)]
    # Merge as if the stores had been checked in enumeration order: the first
    # failing store wins, and only states up to its failure are counted.
    order = {s: i for i, s in enumerate(stores)}
    counts = {s: n for _, cs in results for s, n in cs}
    fails = [(order[cs[-1][0]], bad) for bad, cs in results if bad]
    if fails:
        first, bad = min(fails, key=lambda f: f[0])
        checked = sum(counts[s] for s in stores[:first + 1])
        return Verdict("Invalid", bad[0], bad[1], checked)
    return Verdict("Valid", checked=sum(counts.values()))


# ---------------------------------------------------------------------------
# Separation-logic triples and their embedding


@dataclass(frozen=True)
class CSLTriple:
    ctx: ResourceContext
    A: frozenset
    p: SLFormula
    k: object
    q: SLFormula


def clone_name(z: str, post: bool = False) -> str:
    return f"{z}_w" if post else f"{z}_v"


def s2m(csl: CSLTriple, Z=None) -> Assertion:
    """Embed a triple as an assertion with an empty key set and free-match heaps."""
    need = (command_footprint(csl.k).free | free_vars(csl.p) | free_vars(csl.q)
            | ctx_owned(csl.ctx)) - ctx_dom(csl.ctx)
    Z = frozenset(need if Z is None else Z)
    if not need <= Z:
        raise ValueError(f"identifier universe misses {sorted(need - Z)}")

    def pat(k, post, p):
        s = FrozenMap({z: Lin.var(clone_name(z, post)) for z in Z})
        X = frozenset(clone_name(z, post) for z in Z)
        return Pattern(X, k, s, FREE, FREE, FREE, FREE, FREE, p)

    return Assertion(csl.ctx, frozenset(csl.A), frozenset(), pat(csl.k, False, csl.p), pat(None, True, csl.q))


def triple_problems(csl: CSLTriple, limits: Limits | None = None) -> list:
    """A triple is well formed exactly when its embedding is."""
    return assertion_problems(s2m(csl), limits)


def csl_valid(csl: CSLTriple, limits: Limits | None = None) -> bool:
    """Bounded validity of a triple: from every state satisfying p (process
    heap), no execution aborts and every final state satisfies q.

    Ill-formed triples are not judgments and are never valid.
    """
    if triple_problems(csl, limits):
        return False
    limits = limits or Limits()
    bounds = limits.heap_bounds()
    names = ctx_dom(csl.ctx)
    ids = sorted((command_footprint(csl.k).free | free_vars(csl.p) | free_vars(csl.q)
                  | ctx_owned(csl.ctx) | set(csl.A)) - names)
    mode = h2_mode_for(csl.ctx, csl.k)
    sem = Semantics(csl.ctx, csl.A, frozenset(), limits.env_budget(mode))
    root = Builder(limits.trace_bounds()).root(csl.k)

    def post_ok(ls):
        try:
            return sat(ls.s, ls.h1, csl.q)
        except Unbound:
            return False

    for s in all_stores(ids, limits.values):
        try:
            h1s = satisfying_heaps(csl.p, s, bounds)
        except Unbound:
            continue
        for h1 in h1s:
            for N1 in _subsets(names):
                for N2 in _subsets(names - N1):
                    try:
                        Hs = satisfying_heaps(ctx_inv(csl.ctx.exclude(N1 | N2)), s, bounds)
                    except Unbound:
                        continue
                    for H in Hs:
                        if set(H) & set(h1):
                            continue
                        for h2 in _h2_candidates(mode, set(h1) | set(H), limits):
                            ls = LocalState(_flags(s, csl.ctx, N1 | N2), h1, h2, H, N1, N2)
                            if not is_local_state(ls, csl.ctx):
                                continue
                            res = explore(root, ls, sem, terminal_ok=post_ok)
                            if res.abort or res.violation:
                                return False
    return True


def check_s2m_transfer(csl: CSLTriple, limits: Limits | None = None) -> bool:
    """False only if the triple is valid at the bounds but its embedding is not."""
    if not csl_valid(csl, limits):
        return True
    return check_validity(s2m(csl), limits).valid


# ---------------------------------------------------------------------------
# Concrete syntax
#
#   context { r(a,x): x=a /\ emp } rely {a,t} key {x,t}
#   pre  { exists tv xv av . k=<...> s={x:xv,t:tv,a:av} h1={} h2={} H={} N1={} N2={} /\ emp }
#   post { ... k=<.> ... }


def _names_set(ts: TokenStream) -> frozenset:
    ts.expect("{")
    out = []
    if not ts.at("}"):
        out.append(ts.name())
        while ts.accept(","):
            out.append(ts.name())
    ts.expect("}")
    return frozenset(out)


def _heap_lit(ts: TokenStream):
    if ts.accept("-"):
        return FREE
    ts.expect("{")
    items = {}
    if not ts.at("}"):
        while True:
            a = ts.integer()
            ts.expect(":")
            items[a] = ts.integer()
            if not ts.accept(","):
                break
    ts.expect("}")
    try:
        return heap(items)
    except HeapError as exc:
        ts.fail(str(exc))


def _k_component(ts: TokenStream):
    ts.expect("<")
    if ts.accept(".") or ts.at(">"):
        ts.expect(">")
        return None
    if ts.at("trace") and ts.at(":", 1):
        ts.next()
        ts.next()
        a = parse_action_from(ts)
        ts.expect(">")
        return a
    if ts.peek().kind == "int" or (ts.at("-") and ts.peek(1).kind == "int"):
        v = ts.integer()
        ts.expect(">")
        return v
    k = parse_command_from(ts)
    ts.expect(">")
    return k


def parse_pattern_from(ts: TokenStream) -> Pattern:
    X = []
    if ts.accept("exists"):
        while not ts.at("."):
            X.append(ts.name())
        ts.expect(".")
    fields = {"X": frozenset(X)}
    while ts.peek().kind == "name" and ts.at("=", 1):
        key = ts.next().text
        ts.expect("=")
        if key in fields:
            ts.fail(f"duplicate pattern field {key}")
        if key == "k":
            fields["k"] = _k_component(ts)
        elif key == "s":
            ts.expect("{")
            items = {}
            if not ts.at("}"):
                while True:
                    i = ts.name()
                    ts.expect(":")
                    items[i] = Lin.from_expr(parse_expr_from(ts))
                    if not ts.accept(","):
                        break
            ts.expect("}")
            fields["s"] = FrozenMap(items)
        elif key in ("h1", "h2", "H"):
            fields[key] = _heap_lit(ts)
        elif key in ("N1", "N2"):
            fields[key] = FREE if ts.accept("-") else _names_set(ts)
        else:
            ts.fail(f"unknown pattern field {key}")
    if "k" not in fields:
        ts.fail("pattern needs a k= component")
    if ts.accept("/\\"):
        fields["p"] = parse_formula_from(ts)
    return Pattern(**fields)


def parse_assertion_from(ts: TokenStream) -> Assertion:
    ctx = EMPTY_CTX
    A = B = frozenset()
    if ts.accept("context"):
        ts.expect("{")
        ctx = parse_context_from(ts)
        ts.expect("}")
    if ts.accept("rely"):
        A = _names_set(ts)
    if ts.accept("key"):
        B = _names_set(ts)
    ts.expect("pre")
    ts.expect("{")
    pre = parse_pattern_from(ts)
    ts.expect("}")
    ts.expect("post")
    ts.expect("{")
    post = parse_pattern_from(ts)
    ts.expect("}")
    return Assertion(ctx, A, B, pre, post)


def parse_assertion(text: str) -> Assertion:
    ts = TokenStream(text)
    a = parse_assertion_from(ts)
    ts.done()
    return a


def parse_triple(text: str) -> CSLTriple:
    """``context {..} rely {..} pre { p } program { k } post { q }``."""
    ts = TokenStream(text)
    ctx, A = EMPTY_CTX, frozenset()
    if ts.accept("context"):
        ts.expect("{")
        ctx = parse_context_from(ts)
        ts.expect("}")
    if ts.accept("rely"):
        A = _names_set(ts)
    ts.expect("pre")
    ts.expect("{")
    p = parse_formula_from(ts)
    ts.expect("}")
    ts.expect("program")
    ts.expect("{")
    k = parse_command_from(ts)
    ts.expect("}")
    ts.expect("post")
    ts.expect("{")
    q = parse_formula_from(ts)
    ts.expect("}")
    ts.done()
    return CSLTriple(ctx, A, p, k, q)


def _show_names(ns) -> str:
    return "-" if ns is FREE else "{" + ",".join(sorted(ns)) + "}"


def _show_heap(h) -> str:
    return "-" if h is FREE else "{" + ", ".join(f"{a}:{v}" for a, v in sorted(h.items())) + "}"


def show_k(k) -> str:
    if k is None:
        return "<.>"
    if isinstance(k, int):
        return f"<{k}>"
    if _is_action(k):
        return f"<trace: {show_action(k)}>"
    return f"<{show_command(k)}>"


def show_pattern(pat: Pattern) -> str:
    head = f"exists {' '.join(sorted(pat.X))} . " if pat.X else ""
    s = ", ".join(f"{i}:{lin.show()}" for i, lin in sorted(pat.s.items()))
    return (f"{head}k={show_k(pat.k)} s={{{s}}} h1={_show_heap(pat.h1)} h2={_show_heap(pat.h2)} "
            f"H={_show_heap(pat.H)} N1={_show_names(pat.N1)} N2={_show_names(pat.N2)} "
            f"/\\ {show_formula(pat.p)}")


def show_assertion(a: Assertion) -> str:
    return (f"context {{ {show_context(a.ctx)} }} rely {_show_names(a.A)} key {_show_names(a.B)}\n"
            f"pre {{ {show_pattern(a.pre)} }}\n"
            f"post {{ {show_pattern(a.post)} }}")
