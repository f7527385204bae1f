"""Derivation trees and per-rule checking.

Every rule is checked for its structural shape and its displayed side
conditions.  With ``guards=True`` (the default) a few extra conditions are
enforced that keep accepted derivations valid at the bounds; they are listed
in ``GUARDS``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

from .cml import (
    FREE, Assertion, Lin, Pattern, _heap_lit, assertion_problems, match_config,
    normalize_pattern, parse_assertion_from, show_assertion,
)
from .config import Limits
from .formulas import (
    TRUE, And, Bool, Not, Or, PointsTo, Star, ctx_dom, ctx_owned, emp_forcing, free_vars,
    from_bool, parse_formula_from, sat, show_formula, substitute,
)
from .heaps import EMPTY, all_heaps, all_stores, heap_disjoint, heap_join, heap_minus, is_subheap
from .state import LocalState
from .syntax import (
    Add, Alloc, Assign, BNot, Cmp, Dispose, Ident, If, IntLit, Lookup, Par, ParseError,
    Resource, Seq, Skip, TokenStream, Unbound, Update, While, WithWhen, aux_violations,
    command_footprint, erase_aux, expr_vars, strip_skips,
)

ARITY = {
    "SKIP": 0, "ASSIGNMENT": 0, "LOOKUP": 0, "UPDATE": 0, "DISPOSAL": 0, "ALLOCATION": 0,
    "SEQUENCE": 2, "CONDITIONAL": 2, "PARALLEL": 2, "LOOP": 1, "ENVIRONMENT-MOVES": 1,
    "REGION": 1, "RESOURCE": 1, "FRAME": 1, "CONSEQUENCE": 1, "AUXILIARY": 1,
}

GUARDS = {
    "ASSIGNMENT": "an assignment to a key identifier reads only key identifiers",
    "LOOKUP": "the address expression reads only key identifiers",
    "UPDATE": "expressions read only key identifiers; the heap change preserves the formula",
    "DISPOSAL": "the address expression reads only key identifiers; the heap change preserves the formula",
    "ALLOCATION": "the heap change preserves the formula",
    "PARALLEL": "key store values of the two sides share no bound variable; the formula split follows the heap split",
    "REGION": "the invariant forces an empty heap",
    "RESOURCE": "the invariant forces an empty heap",
    "FRAME": "the framed formula forces an empty heap",
}


@dataclass(frozen=True)
class RuleInstance:
    rule: str
    premises: tuple  # RuleInstance (a sub-derivation) or Assertion (an open hypothesis)
    conclusion: Assertion
    side: dict = field(default_factory=dict, compare=False, hash=False)

    def premise_assertions(self) -> list:
        return [p.conclusion if isinstance(p, RuleInstance) else p for p in self.premises]


Derivation = RuleInstance


# ---------------------------------------------------------------------------
# Normal forms


def formula_key(p):
    """Structural key modulo associativity and commutativity of *, /\\ and \\/."""
    if isinstance(p, (Star, And, Or)):
        ops, stack = [], [p]
        while stack:
            q = stack.pop()
            if type(q) is type(p):
                stack.extend((q.left, q.right))
            else:
                ops.append(formula_key(q))
        return (type(p).__name__, tuple(sorted(ops, key=repr)))
    if isinstance(p, Not):
        return ("Not", formula_key(p.arg))
    return p


def same_formula(p, q) -> bool:
    return formula_key(p) == formula_key(q)


def pattern_key(pat: Pattern, with_k: bool = True) -> tuple:
    n = normalize_pattern(pat)
    return (n.X, n.k if with_k else None, n.s, n.h1, n.h2, n.H, n.N1, n.N2, formula_key(n.p))


def store_key(pat: Pattern) -> tuple:
    n = normalize_pattern(pat)
    return (n.X, n.s)


def _ls_key(pat: Pattern) -> tuple:
    """Everything but the command and the formula."""
    n = normalize_pattern(pat)
    return (n.X, n.s, n.h1, n.h2, n.H, n.N1, n.N2)


def lin_of(e, s) -> Lin:
    """The store pattern's value of an expression (identifiers replaced by their entries)."""
    if isinstance(e, IntLit):
        return Lin(e.value)
    if isinstance(e, Ident):
        if e.name not in s:
            raise KeyError(e.name)
        return s[e.name]
    if isinstance(e, Add):
        return lin_of(e.left, s) + lin_of(e.right, s)
    raise TypeError(e)


def _formula_ints(p) -> list:
    out = []

    def ex(e):
        if isinstance(e, IntLit):
            out.append(e.value)
        elif isinstance(e, Add):
            ex(e.left)
            ex(e.right)

    def walk(q):
        if isinstance(q, Bool) and isinstance(q.b, Cmp):
            ex(q.b.left)
            ex(q.b.right)
        elif isinstance(q, PointsTo):
            ex(q.addr)
            ex(q.value)
        elif isinstance(q, (Star, And, Or)):
            walk(q.left)
            walk(q.right)
        elif isinstance(q, Not):
            walk(q.arg)

    walk(p)
    return out


# ---------------------------------------------------------------------------
# Semantic implication between patterns


def _generalizes(lhs: Pattern, rhs: Pattern, B) -> bool:
    """rhs differs from lhs only by forgetting key store values.

    Same heaps, held resources and formula, and every key entry of rhs is a
    distinct bound variable of its own, so its equations always have a
    solution.  Then every match of lhs is a match of rhs.
    """
    if (lhs.h1, lhs.N1, formula_key(lhs.p)) != (rhs.h1, rhs.N1, formula_key(rhs.p)):
        return False
    if not all(i in lhs.s for i in B):
        return False
    seen = set()
    for i in B:
        lin = rhs.s.get(i)
        if lin is None or lin.const or len(lin.coeffs) != 1:
            return False
        (v, c), = lin.coeffs.items()
        if c != 1 or v not in rhs.X or v in seen:
            return False
        seen.add(v)
    return True


def implication_counterexample(lhs: Pattern, rhs: Pattern, B, limits: Limits | None = None):
    """A (store, h1, N1, tau) matching lhs but not rhs on B, or None.

    Identifier values range over a widened interval so that arithmetic
    offsets in the patterns cannot hide a counterexample just outside the
    value bound.
    """
    limits = limits or Limits()
    B = frozenset(B)
    if _generalizes(lhs, rhs, B) or pattern_key(lhs) == pattern_key(rhs):
        return None
    ids = sorted(B | free_vars(lhs.p) | free_vars(rhs.p))
    consts = [lin.const for pat in (lhs, rhs) for lin in pat.s.values()]
    consts += _formula_ints(lhs.p) + _formula_ints(rhs.p)
    W = limits.value + max(map(abs, consts), default=0) + 1
    values = range(-W, limits.value + W + 1)
    if lhs.h1 is not FREE:
        h1s = [lhs.h1]
    else:
        h1s = list(all_heaps(limits.addresses, limits.values))
    if lhs.N1 is not FREE:
        N1s = [lhs.N1]
    elif rhs.N1 is not FREE:
        N1s = [rhs.N1, frozenset({"?other"})]
    else:
        N1s = [frozenset()]
    fv = sorted(lhs.free_logical() | rhs.free_logical())
    taus = [dict(zip(fv, vs)) for vs in product(limits.values, repeat=len(fv))]
    keys = sorted(B)
    # The store part of a match only depends on the key identifiers' values and
    # the valuation, so it is solved once per (pattern, valuation, key values).
    store_memo: dict = {}

    def matches(pat, side, ls, n, t):
        if pat.h1 is not FREE and ls.h1 != pat.h1:
            return False
        if pat.N1 is not FREE and ls.N1 != pat.N1:
            return False
        key = (side, n, tuple(ls.s[i] for i in keys))
        ok = store_memo.get(key)
        if ok is None:
            ok = store_memo[key] = match_config(ls.replace(h1=EMPTY), pat.replace(h1=FREE, p=TRUE), B, t)
        if not ok:
            return False
        try:
            return sat(ls.s, ls.h1, pat.p)
        except Unbound:
            return False

    for s in all_stores(ids, values):
        for h1 in h1s:
            for N1 in N1s:
                ls = LocalState(s, h1, N1=N1)
                for n, t in enumerate(taus):
                    if matches(lhs, 0, ls, n, t) and not matches(rhs, 1, ls, n, t):
                        return (s, h1, N1, t)
    return None


def check_implication(lhs: Pattern, rhs: Pattern, B, limits: Limits | None = None) -> bool:
    return implication_counterexample(lhs, rhs, B, limits) is None


def is_auxiliary_set(Y, k) -> bool:
    return not aux_violations(Y, k)


# ---------------------------------------------------------------------------
# Rule checking


class _Report:
    def __init__(self):
        self.violations: list = []

    def need(self, cond, msg):
        if not cond:
            self.violations.append(msg)
        return bool(cond)


def _fmt(xs) -> str:
    return "{" + ",".join(sorted(xs)) + "}"


def _same_ctx(a: Assertion, b: Assertion) -> bool:
    return a.ctx.as_key() == b.ctx.as_key()


def _preserves(p, h_old, h_new, limits: Limits) -> bool:
    for s in all_stores(free_vars(p), limits.values):
        try:
            if sat(s, h_old, p) and not sat(s, h_new, p):
                return False
        except Unbound:
            return False
    return True


def _concrete(*xs) -> bool:
    return all(x is not FREE for x in xs)


def check_rule(inst: RuleInstance, limits: Limits | None = None, guards: bool = True) -> list:
    """Violations of one rule instance (empty when the instance is accepted)."""
    limits = limits or Limits()
    rep = _Report()
    rule = inst.rule
    if rule not in ARITY:
        return [f"unknown rule {rule}"]
    prem = inst.premise_assertions()
    if len(prem) != ARITY[rule]:
        return [f"{rule} takes {ARITY[rule]} premise(s), got {len(prem)}"]
    C = inst.conclusion
    for label, a in [("conclusion", C)] + [(f"premise {n + 1}", a) for n, a in enumerate(prem)]:
        for prob in assertion_problems(a, limits):
            rep.violations.append(f"{label} ill-formed: {prob}")
    if rep.violations:
        return rep.violations
    _CHECKERS[rule](rep, C, prem, inst.side, limits, guards)
    return rep.violations


def _terminated(rep, *pats):
    for p in pats:
        rep.need(p.k is None, "postcondition must be a finished computation")


def _skip(rep, C, P, side, limits, guards):
    rep.need(isinstance(C.pre.k, Skip), "command is not skip")
    _terminated(rep, C.post)
    rep.need(pattern_key(C.pre, False) == pattern_key(C.post, False), "pre and post patterns differ")
    rep.need(free_vars(C.pre.p) <= C.A, "free(p) not within the rely set")


def _assignment(rep, C, P, side, limits, guards):
    k = C.pre.k
    if not rep.need(isinstance(k, Assign), "command is not an assignment"):
        return
    _terminated(rep, C.post)
    i, e = k.target, k.expr
    rep.need(i not in ctx_owned(C.ctx), f"{i} is owned by a resource")
    rep.need(expr_vars(e) <= C.A, f"free(e) {_fmt(expr_vars(e) - C.A)} outside the rely set")
    try:
        val = lin_of(e, C.pre.s)
    except KeyError as exc:
        rep.need(False, f"store pattern has no entry for {exc.args[0]}")
        return
    expected = C.pre.replace(k=None, s=C.pre.s.set(i, val), p=C.post.p)
    rep.need(pattern_key(expected) == pattern_key(C.post), "post pattern is not the pre pattern with the assignment applied")
    rep.need(same_formula(C.pre.p, substitute(C.post.p, e, i)), "precondition formula is not q[e/i]")
    if guards and i in C.B:
        rep.need(expr_vars(e) <= C.B, f"guard: assignment to key {i} reads non-key {_fmt(expr_vars(e) - C.B)}")


def _const_of(rep, e, s, what):
    try:
        lin = lin_of(e, s)
    except KeyError as exc:
        rep.need(False, f"store pattern has no entry for {exc.args[0]}")
        return None
    if not rep.need(lin.is_const(), f"{what} is not determined by the store pattern"):
        return None
    return lin.const


def _lookup(rep, C, P, side, limits, guards):
    k = C.pre.k
    if not rep.need(isinstance(k, Lookup), "command is not a lookup"):
        return
    _terminated(rep, C.post)
    i, e = k.target, k.addr
    rep.need(i not in ctx_owned(C.ctx), f"{i} is owned by a resource")
    rep.need(expr_vars(e) <= C.A, "free(e) outside the rely set")
    if not rep.need(C.pre.h1 is not FREE, "process heap must be concrete"):
        return
    l = _const_of(rep, e, C.pre.s, "address")
    if l is None or not rep.need(l in C.pre.h1, f"address {l} not in the process heap"):
        return
    v = C.pre.h1[l]
    expected = C.pre.replace(k=None, s=C.pre.s.set(i, Lin(v)), p=C.post.p)
    rep.need(pattern_key(expected) == pattern_key(C.post), "post pattern is not the pre pattern with the lookup applied")
    rep.need(same_formula(C.pre.p, substitute(C.post.p, IntLit(v), i)), "precondition formula is not q[v/i]")
    if guards:
        rep.need(expr_vars(e) <= C.B, "guard: address expression reads non-key identifiers")


def _heap_change(rep, C, exprs, new_h1, limits, guards):
    fv = frozenset().union(*(expr_vars(e) for e in exprs))
    if C.pre.N1 is not FREE:
        allowed = C.A | ctx_owned(C.ctx.restrict(C.pre.N1))
        rep.need(fv <= allowed, f"reads {_fmt(fv - allowed)} outside the rely set and held resources")
    expected = C.pre.replace(k=None, h1=new_h1)
    rep.need(pattern_key(expected) == pattern_key(C.post), "post pattern is not the pre pattern with the heap change applied")
    if guards:
        rep.need(fv <= C.B, "guard: expressions read non-key identifiers")
        rep.need(_preserves(C.pre.p, C.pre.h1, new_h1, limits), "guard: heap change does not preserve the formula")


def _update(rep, C, P, side, limits, guards):
    k = C.pre.k
    if not rep.need(isinstance(k, Update), "command is not a heap update"):
        return
    _terminated(rep, C.post)
    if not rep.need(C.pre.h1 is not FREE, "process heap must be concrete"):
        return
    l = _const_of(rep, k.addr, C.pre.s, "address")
    v = _const_of(rep, k.value, C.pre.s, "value")
    if l is None or v is None or not rep.need(l in C.pre.h1, f"address {l} not in the process heap"):
        return
    _heap_change(rep, C, (k.addr, k.value), C.pre.h1.set(l, v), limits, guards)


def _disposal(rep, C, P, side, limits, guards):
    k = C.pre.k
    if not rep.need(isinstance(k, Dispose), "command is not a disposal"):
        return
    _terminated(rep, C.post)
    if not rep.need(C.pre.h1 is not FREE, "process heap must be concrete"):
        return
    l = _const_of(rep, k.addr, C.pre.s, "address")
    if l is None or not rep.need(l in C.pre.h1, f"address {l} not in the process heap"):
        return
    _heap_change(rep, C, (k.addr,), C.pre.h1.without([l]), limits, guards)


def _allocation(rep, C, P, side, limits, guards):
    a = C.pre.k
    if not rep.need(isinstance(a, Alloc), "precondition does not hold an allocation action"):
        return
    rep.need(C.post.k == a.addr, "post computation is not the allocated address")
    if not rep.need(C.pre.h1 is not FREE, "process heap must be concrete"):
        return
    cells = dict(zip(range(a.addr, a.addr + len(a.values)), a.values))
    rep.need(a.addr > 0 and a.values, "allocation needs a positive address and at least one value")
    for h in (C.pre.h1, C.pre.h2, C.pre.H):
        if h is not FREE:
            rep.need(not set(cells) & set(h), "allocated cells are not fresh")
    if rep.violations:
        return
    new_h1 = C.pre.h1.update(cells)
    expected = C.pre.replace(k=a.addr, h1=new_h1)
    rep.need(pattern_key(expected) == pattern_key(C.post), "post pattern is not the pre pattern extended by the new cells")
    if guards:
        rep.need(_preserves(C.pre.p, C.pre.h1, new_h1, limits), "guard: allocation does not preserve the formula")


def _sequence(rep, C, P, side, limits, guards):
    P1, P2 = P
    rep.need(C.pre.k == Seq(P1.pre.k, P2.pre.k), "command is not the sequence of the premises' commands")
    _terminated(rep, C.post, P1.post, P2.post)
    rep.need(_same_ctx(C, P1) and _same_ctx(C, P2), "contexts differ")
    rep.need(C.B == P1.B == P2.B, "key sets differ")
    rep.need(C.A == P1.A | P2.A, "rely set is not the union of the premises' rely sets")
    rep.need(pattern_key(P1.post, False) == pattern_key(P2.pre, False), "first postcondition differs from second precondition")
    rep.need(pattern_key(C.pre, False) == pattern_key(P1.pre, False), "precondition differs from the first premise's")
    rep.need(pattern_key(C.post) == pattern_key(P2.post), "postcondition differs from the second premise's")
    rep.need(P1.pre.h2 == P1.post.h2 == P2.post.h2 and P1.pre.N2 == P1.post.N2 == P2.post.N2,
             "environment heap and resources must stay fixed")


def _conditional(rep, C, P, side, limits, guards):
    P1, P2 = P
    k = C.pre.k
    if not rep.need(isinstance(k, If), "command is not a conditional"):
        return
    rep.need(P1.pre.k == k.then and P2.pre.k == k.orelse, "premise commands are not the branches")
    _terminated(rep, C.post, P1.post, P2.post)
    rep.need(_same_ctx(C, P1) and _same_ctx(C, P2), "contexts differ")
    rep.need(C.A == P1.A == P2.A and C.B == P1.B == P2.B, "rely or key sets differ")
    pos = C.pre.replace(p=And(C.pre.p, from_bool(k.cond)))
    neg = C.pre.replace(p=And(C.pre.p, from_bool(BNot(k.cond))))
    rep.need(pattern_key(P1.pre, False) == pattern_key(pos, False), "first premise precondition is not p /\\ b")
    rep.need(pattern_key(P2.pre, False) == pattern_key(neg, False), "second premise precondition is not p /\\ !b")
    rep.need(pattern_key(P1.post) == pattern_key(C.post) == pattern_key(P2.post), "postconditions differ")
    rep.need(C.pre.h2 == C.post.h2 and C.pre.N2 == C.post.N2, "environment heap and resources must stay fixed")


def _loop(rep, C, P, side, limits, guards):
    (P1,) = P
    k = C.pre.k
    if not rep.need(isinstance(k, While), "command is not a loop"):
        return
    rep.need(P1.pre.k == k.body, "premise command is not the loop body")
    _terminated(rep, C.post, P1.post)
    rep.need(_same_ctx(C, P1) and C.A == P1.A and C.B == P1.B, "context, rely or key set differ")
    rep.need(pattern_key(P1.pre, False) == pattern_key(C.pre.replace(p=And(C.pre.p, from_bool(k.cond))), False),
             "premise precondition is not p /\\ b")
    rep.need(pattern_key(P1.post) == pattern_key(C.pre.replace(k=None)), "premise postcondition is not the invariant")
    rep.need(pattern_key(C.post) == pattern_key(C.pre.replace(k=None, p=And(C.pre.p, from_bool(BNot(k.cond))))),
             "postcondition is not p /\\ !b")


def _parallel(rep, C, P, side, limits, guards):
    P1, P2 = P
    k = C.pre.k
    if not rep.need(isinstance(k, Par), "command is not a parallel composition"):
        return
    rep.need(P1.pre.k == k.left and P2.pre.k == k.right, "premise commands are not the components")
    _terminated(rep, C.post, P1.post, P2.post)
    rep.need(_same_ctx(C, P1) and _same_ctx(C, P2), "contexts differ")
    rep.need(C.A == P1.A | P2.A, "rely set is not A1 u A2")
    rep.need(C.B == P1.B | P2.B, "key set is not B1 u B2")
    m1, m2 = command_footprint(k.left).mod, command_footprint(k.right).mod
    for mod, S, msg in ((m1, P2.A, "mod(k1)∩A2"), (m1, P2.B, "mod(k1)∩B2"),
                        (m2, P1.A, "mod(k2)∩A1"), (m2, P1.B, "mod(k2)∩B1")):
        rep.need(not mod & S, f"side condition {msg} ≠ ∅: {_fmt(mod & S)}")
    pats = (C.pre, C.post, P1.pre, P1.post, P2.pre, P2.post)
    if not rep.need(all(_concrete(x.h1, x.h2, x.H, x.N1, x.N2) for x in pats),
                    "free-match heaps or resource sets cannot be split"):
        return
    rep.need(not P1.pre.N1 & P2.pre.N1, "side condition N1∩N2 ≠ ∅")
    for a, b, c, which in ((C.pre, P1.pre, P2.pre, "pre"), (C.post, P1.post, P2.post, "post")):
        h1, h2, h3 = b.h1, c.h1, a.h2
        if not rep.need(heap_disjoint(h1, h2) and heap_disjoint(h1, h3) and heap_disjoint(h2, h3),
                        f"{which}: heap portions overlap"):
            continue
        rep.need(a.h1 == heap_join(h1, h2), f"{which}: process heap is not the join of the premises' heaps")
        rep.need(b.h2 == heap_join(h2, h3), f"{which}: first premise environment heap is not h2·h3")
        rep.need(c.h2 == heap_join(h1, h3), f"{which}: second premise environment heap is not h1·h3")
        rep.need(a.H == b.H == c.H, f"{which}: available heaps differ")
        n1, n2, n3 = b.N1, c.N1, a.N2
        rep.need(not (n1 & n2) and not ((n1 | n2) & n3), f"{which}: resource portions overlap")
        rep.need(a.N1 == n1 | n2, f"{which}: held resources are not N1 u N2")
        rep.need(b.N2 == n2 | n3 and c.N2 == n1 | n3, f"{which}: premise environment resources do not match")
        rep.need(store_key(a) == store_key(b) == store_key(c), f"{which}: store patterns differ")
    rep.need(same_formula(C.pre.p, Star(P1.pre.p, P2.pre.p)), "precondition formula is not p1 * p2")
    rep.need(same_formula(C.post.p, Star(P1.post.p, P2.post.p)), "postcondition formula is not q1 * q2")
    split = side.get("split")
    if split is not None:
        rep.need(split == (P1.pre.h1, P2.pre.h1), "split witness does not match the premises' heaps")
    if guards:
        s2, X2 = C.post.s, C.post.X
        v1 = frozenset().union(*(s2[i].vars for i in P1.B if i in s2))
        v2 = frozenset().union(*(s2[i].vars for i in P2.B if i in s2))
        rep.need(not v1 & v2 & X2, f"guard: key store values share bound variables {_fmt(v1 & v2 & X2)}")
        h1, h2 = P1.pre.h1, P2.pre.h1
        if heap_disjoint(h1, h2):
            whole = heap_join(h1, h2)
            fv = free_vars(P1.pre.p) | free_vars(P2.pre.p)
            for s in all_stores(fv, limits.values):
                try:
                    if sat(s, whole, Star(P1.pre.p, P2.pre.p)) and not (
                            sat(s, h1, P1.pre.p) and sat(s, h2, P2.pre.p)):
                        rep.need(False, "guard: precondition split does not follow the heap split")
                        break
                except Unbound:
                    pass


def _env_moves(rep, C, P, side, limits, guards):
    (P2,) = P
    rep.need(C.post.k == C.pre.k and C.pre.k is not None, "conclusion must leave its command unexecuted")
    _terminated(rep, P2.post)
    rep.need(_same_ctx(C, P2), "contexts differ")
    pats = (C.pre, C.post, P2.pre, P2.post)
    if not rep.need(all(_concrete(x.h1, x.h2, x.H, x.N1, x.N2) for x in pats),
                    "free-match heaps or resource sets are not supported here"):
        return
    a, a2, b, b2 = C.pre, C.post, P2.pre, P2.post
    rep.need(store_key(a) == store_key(b), "premise store differs from the conclusion's")
    rep.need(store_key(a2) == store_key(b2), "premise final store differs from the conclusion's")
    rep.need(b.h1 == a.h2 and b.h2 == a.h1 and b.H == a.H and b.N1 == a.N2 and b.N2 == a.N1,
             "premise precondition is not the swapped conclusion precondition")
    rep.need(a2.h1 == a.h1 and a2.N1 == a.N1, "process heap and resources must stay fixed")
    rep.need(b2.h1 == a2.h2 and b2.h2 == a.h1 and b2.H == a2.H and b2.N1 == a2.N2 and b2.N2 == a.N1,
             "premise postcondition is not the swapped conclusion postcondition")
    rep.need(same_formula(a.p, a2.p), "formula must be preserved")
    w = command_footprint(P2.pre.k).writes if P2.pre.k is not None else frozenset()
    rep.need(not w & C.A, f"side condition writes(k2)∩A1 ≠ ∅: {_fmt(w & C.A)}")
    rep.need(not w & C.B, f"side condition writes(k2)∩B1 ≠ ∅: {_fmt(w & C.B)}")


def _region(rep, C, P, side, limits, guards):
    (P1,) = P
    k = C.pre.k
    if not rep.need(isinstance(k, WithWhen), "command is not a critical region"):
        return
    entry = C.ctx.lookup(k.name)
    if not rep.need(entry is not None, f"resource {k.name} not in the context"):
        return
    Y, R = entry.protected, entry.invariant
    rep.need(P1.pre.k == k.body, "premise command is not the region body")
    _terminated(rep, C.post, P1.post)
    rep.need(P1.ctx.as_key() == C.ctx.exclude([k.name]).as_key(), "premise context is not the context without the resource")
    rep.need(P1.A == C.A | Y, "premise rely set is not A u Y")
    rep.need(P1.B == C.B, "key sets differ")
    rep.need(_ls_key(P1.pre) == _ls_key(C.pre), "premise precondition state pattern differs")
    rep.need(_ls_key(P1.post) == _ls_key(C.post), "premise postcondition state pattern differs")
    rep.need(same_formula(P1.pre.p, Star(And(C.pre.p, from_bool(k.cond)), R)), "premise precondition is not (p /\\ b) * R")
    rep.need(same_formula(P1.post.p, Star(C.post.p, R)), "premise postcondition is not q * R")
    if guards:
        rep.need(emp_forcing(R), "guard: invariant does not force an empty heap")


def _resource(rep, C, P, side, limits, guards):
    (P1,) = P
    k = C.pre.k
    if not rep.need(isinstance(k, Resource), "command is not a resource declaration"):
        return
    entry = P1.ctx.lookup(k.name)
    if not rep.need(entry is not None, f"premise context lacks resource {k.name}"):
        return
    Y, R = entry.protected, entry.invariant
    rep.need(P1.pre.k == k.body, "premise command is not the resource body")
    _terminated(rep, C.post, P1.post)
    rep.need(C.ctx.as_key() == P1.ctx.exclude([k.name]).as_key() and k.name not in ctx_dom(C.ctx),
             "conclusion context is not the premise context without the resource")
    rep.need(C.A == P1.A | Y, "rely set is not A u Y")
    rep.need(C.B == P1.B, "key sets differ")
    for a, b, which in ((C.pre, P1.pre, "pre"), (C.post, P1.post, "post")):
        if not rep.need(_concrete(a.h1, b.h1, a.H, b.H), f"{which}: free-match heaps cannot be split"):
            continue
        if not rep.need(is_subheap(b.h1, a.h1), f"{which}: premise process heap is not part of the conclusion's"):
            continue
        h = heap_minus(a.h1, b.h1)
        rep.need(heap_disjoint(a.H, h) and b.H == heap_join(a.H, h),
                 f"{which}: the resource heap does not move from the process heap to the available heap")
        rep.need(store_key(a) == store_key(b) and a.h2 == b.h2 and a.N1 == b.N1 and a.N2 == b.N2,
                 f"{which}: store, environment heap or resource sets differ")
    rep.need(same_formula(C.pre.p, Star(P1.pre.p, R)), "precondition is not p * R")
    rep.need(same_formula(C.post.p, Star(P1.post.p, R)), "postcondition is not q * R")
    if guards:
        rep.need(emp_forcing(R), "guard: invariant does not force an empty heap")


def _frame(rep, C, P, side, limits, guards):
    (P1,) = P
    R = side.get("R")
    if R is None:
        if not rep.need(isinstance(C.pre.p, Star), "cannot infer the framed formula; give side { R { ... } }"):
            return
        R = C.pre.p.right
    rep.need(C.pre.k == P1.pre.k, "commands differ")
    _terminated(rep, C.post, P1.post)
    rep.need(_same_ctx(C, P1) and C.B == P1.B, "context or key set differ")
    rep.need(C.A == P1.A | free_vars(R), "rely set is not A u free(R)")
    mod = command_footprint(C.pre.k).mod if C.pre.k is not None else frozenset()
    rep.need(not mod & free_vars(R), f"side condition mod(k)∩free(R) ≠ ∅: {_fmt(mod & free_vars(R))}")
    rep.need(_ls_key(C.pre) == _ls_key(P1.pre) and _ls_key(C.post) == _ls_key(P1.post), "state patterns differ")
    rep.need(same_formula(C.pre.p, Star(P1.pre.p, R)), "precondition is not p * R")
    rep.need(same_formula(C.post.p, Star(P1.post.p, R)), "postcondition is not q * R")
    if guards:
        rep.need(emp_forcing(R), "guard: framed formula does not force an empty heap")


def _consequence(rep, C, P, side, limits, guards):
    (P1,) = P
    rep.need(C.pre.k == P1.pre.k, "commands differ")
    _terminated(rep, C.post, P1.post)
    rep.need(_same_ctx(C, P1) and C.B == P1.B, "context or key set differ")
    rep.need(P1.A <= C.A, "premise rely set is not contained in the conclusion's")
    if rep.violations:
        return
    cex = implication_counterexample(C.pre, P1.pre, C.B, limits)
    rep.need(cex is None, f"precondition does not imply the premise's (counterexample store {dict(cex[0]) if cex else ''})")
    cex = implication_counterexample(P1.post, C.post, C.B, limits)
    rep.need(cex is None, f"premise postcondition does not imply the conclusion's (counterexample store {dict(cex[0]) if cex else ''})")


def _auxiliary(rep, C, P, side, limits, guards):
    (P1,) = P
    Y = side.get("Y")
    if Y is None:
        Y = frozenset(P1.pre.s) - frozenset(C.pre.s)
    Y = frozenset(Y)
    _terminated(rep, C.post, P1.post)
    rep.need(_same_ctx(C, P1), "contexts differ")
    rep.need(P1.A == C.A | Y, "premise rely set is not A u Y")
    rep.need(P1.B == C.B | Y, "premise key set is not B u Y")
    bad = aux_violations(Y, P1.pre.k)
    if not rep.need(not bad, f"{_fmt(Y)} is not auxiliary: {_fmt(bad)} used elsewhere"):
        return
    rep.need(strip_skips(C.pre.k) == strip_skips(erase_aux(P1.pre.k, Y)), "command is not the premise's with Y erased")
    rep.need(not Y & (free_vars(P1.pre.p) | free_vars(P1.post.p)), "Y meets free(p) u free(q)")
    rep.need(not Y & ctx_owned(C.ctx), "Y meets owned(context)")
    for a, b, which in ((C.pre, P1.pre, "pre"), (C.post, P1.post, "post")):
        expected = b.replace(s=b.s.without(Y))
        rep.need(pattern_key(a, False) == pattern_key(expected, False), f"{which}: pattern is not the premise's with Y removed")


_CHECKERS = {
    "SKIP": _skip, "ASSIGNMENT": _assignment, "LOOKUP": _lookup, "UPDATE": _update,
    "DISPOSAL": _disposal, "ALLOCATION": _allocation, "SEQUENCE": _sequence,
    "CONDITIONAL": _conditional, "LOOP": _loop, "PARALLEL": _parallel,
    "ENVIRONMENT-MOVES": _env_moves, "REGION": _region, "RESOURCE": _resource,
    "FRAME": _frame, "CONSEQUENCE": _consequence, "AUXILIARY": _auxiliary,
}


def _subsets(names) -> list:
    names = sorted(names)
    return [frozenset(n for j, n in enumerate(names) if mask >> j & 1) for mask in range(1 << len(names))]


def parallel_choices(left: Assertion, right: Assertion, names, B=None,
                     limits: Limits | None = None, guards: bool = True) -> list:
    """Try PARALLEL over every (A1, B1, A2, B2) drawn from subsets of ``names``.

    The premises are ``left`` and ``right`` with their rely and key sets
    replaced; the conclusion composes them (rely A1 u A2, key ``B`` if given
    else B1 u B2).  Returns ``(A1, B1, A2, B2, violations)`` per choice.
    """
    subs = _subsets(names)
    k = Par(left.pre.k, right.pre.k)
    pre = left.pre.replace(k=k, p=Star(left.pre.p, right.pre.p))
    post = left.post.replace(p=Star(left.post.p, right.post.p))
    out = []
    for A1, B1, A2, B2 in product(subs, repeat=4):
        p1 = Assertion(left.ctx, A1, B1, left.pre, left.post)
        p2 = Assertion(right.ctx, A2, B2, right.pre, right.post)
        concl = Assertion(left.ctx, A1 | A2, frozenset(B) if B is not None else B1 | B2, pre, post)
        out.append((A1, B1, A2, B2, check_rule(RuleInstance("PARALLEL", (p1, p2), concl), limits, guards)))
    return out


# ---------------------------------------------------------------------------
# Derivations


@dataclass
class DerivationReport:
    ok: bool
    failure: tuple | None = None  # (path, rule, violations)
    hypotheses: list = field(default_factory=list)
    checked: int = 0

    def describe(self) -> str:
        if self.failure:
            path, rule, vs = self.failure
            where = "root" if not path else "root" + "".join(f".premise[{i}]" for i in path)
            return f"{rule} at {where} rejected:\n  " + "\n  ".join(vs)
        if self.hypotheses:
            return f"all {self.checked} rule instances accepted, but {len(self.hypotheses)} premise(s) are unproven hypotheses"
        return f"derivation accepted ({self.checked} rule instances)"


def check_derivation(d: RuleInstance, limits: Limits | None = None, guards: bool = True) -> DerivationReport:
    """Post-order check; reports the first rejected node."""
    limits = limits or Limits()
    hyps: list = []
    count = 0

    def walk(node, path):
        nonlocal count
        for n, p in enumerate(node.premises):
            if isinstance(p, RuleInstance):
                bad = walk(p, path + (n,))
                if bad:
                    return bad
            else:
                hyps.append(p)
        count += 1
        vs = check_rule(node, limits, guards)
        if vs:
            return (path, node.rule, vs)
        return None

    failure = walk(d, ())
    return DerivationReport(failure is None and not hyps, failure, hyps, count)


def iter_nodes(d: RuleInstance):
    yield d
    for p in d.premises:
        if isinstance(p, RuleInstance):
            yield from iter_nodes(p)


# ---------------------------------------------------------------------------
# Concrete syntax
#
#   rule NAME { premise { rule ... } premise { <assertion> } conclusion { <assertion> }
#               side { Y={a,b} R { formula } split h1={..} h2={..} } }


def _rule_name(ts: TokenStream) -> str:
    parts = [ts.next().text]
    while ts.at("-") and ts.peek(1).kind == "name":
        ts.next()
        parts.append(ts.next().text)
    return "-".join(parts).upper().replace("_", "-")



def _parse_side(ts: TokenStream) -> dict:
    side = {}
    ts.expect("{")
    while not ts.accept("}"):
        if ts.accept("Y"):
            ts.expect("=")
            ts.expect("{")
            ys = []
            if not ts.at("}"):
                ys.append(ts.name())
                while ts.accept(","):
                    ys.append(ts.name())
            ts.expect("}")
            side["Y"] = frozenset(ys)
        elif ts.accept("R"):
            ts.expect("{")
            side["R"] = parse_formula_from(ts)
            ts.expect("}")
        elif ts.accept("split"):
            ts.expect("h1")
            ts.expect("=")
            a = _heap_lit(ts)
            ts.expect("h2")
            ts.expect("=")
            b = _heap_lit(ts)
            side["split"] = (a, b)
        else:
            ts.fail(f"unknown side entry {ts.peek().text!r}")
    return side


def parse_derivation_from(ts: TokenStream) -> RuleInstance:
    ts.expect("rule")
    name = _rule_name(ts)
    ts.expect("{")
    premises, conclusion, side = [], None, {}
    while not ts.accept("}"):
        if ts.accept("premise"):
            ts.expect("{")
            premises.append(parse_derivation_from(ts) if ts.at("rule") else parse_assertion_from(ts))
            ts.expect("}")
        elif ts.accept("conclusion"):
            ts.expect("{")
            conclusion = parse_assertion_from(ts)
            ts.expect("}")
        elif ts.accept("side"):
            side = _parse_side(ts)
        else:
            ts.fail(f"expected premise, conclusion or side, found {ts.peek().text!r}")
    if conclusion is None:
        raise ParseError(f"rule {name} has no conclusion")
    return RuleInstance(name, tuple(premises), conclusion, side)


def parse_derivation(text: str) -> RuleInstance:
    ts = TokenStream(text)
    d = parse_derivation_from(ts)
    ts.done()
    return d


def _indent(text: str, n: int) -> str:
    pad = " " * n
    return "\n".join(pad + line for line in text.splitlines())


def show_derivation(d: RuleInstance) -> str:
    lines = [f"rule {d.rule} {{"]
    for p in d.premises:
        body = show_derivation(p) if isinstance(p, RuleInstance) else show_assertion(p)
        lines += ["  premise {", _indent(body, 4), "  }"]
    lines += ["  conclusion {", _indent(show_assertion(d.conclusion), 4), "  }"]
    if d.side:
        parts = []
        if "Y" in d.side:
            parts.append("Y={" + ",".join(sorted(d.side["Y"])) + "}")
        if "R" in d.side:
            parts.append("R { " + show_formula(d.side["R"]) + " }")
        if "split" in d.side:
            a, b = d.side["split"]
            fmt = lambda h: "{" + ", ".join(f"{x}:{v}" for x, v in sorted(h.items())) + "}"
            parts.append(f"split h1={fmt(a)} h2={fmt(b)}")
        lines.append("  side { " + " ".join(parts) + " }")
    lines.append("}")
    return "\n".join(lines)
