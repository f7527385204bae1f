"""Seeded random generators shared by the property tests and the acceptance suite."""
from __future__ import annotations

import random

from cmlbench.formulas import EMP, TRUE, And, Bool, Not, Or, PointsTo, Star, parse_context
from cmlbench.heaps import FrozenMap
from cmlbench.state import LocalState, is_local_state, with_resource_flags
from cmlbench.syntax import (
    CMP_OPS, DELTA, Acq, Add, Alloc, Assign, BAnd, BFalse, BNot, BOr, BTrue, Cmp, Cons,
    Disp, Dispose, HeapRead, HeapWrite, Ident, If, IntLit, ListExpr, Lookup, Par, Read,
    Rel, Resource, Seq, Skip, Trace, Try, Update, While, WithWhen, Write,
)

IDS = ("x", "y", "z")
VALS = (0, 1)
ADDRS = (1, 2, 3)


# ---------------------------------------------------------------------------
# Syntax


def expr(rng: random.Random, ids=IDS, depth=1, lit=2):
    if depth <= 0 or rng.random() < 0.6:
        return IntLit(rng.randint(0, lit)) if rng.random() < 0.4 else Ident(rng.choice(ids))
    return Add(expr(rng, ids, depth - 1, lit), expr(rng, ids, depth - 1, lit))


def comparison(rng, ids=IDS, depth=1, lit=2):
    return Cmp(rng.choice(CMP_OPS), expr(rng, ids, depth, lit), expr(rng, ids, depth, lit))


def boolean(rng, ids=IDS, depth=1):
    r = rng.random()
    if depth <= 0 or r < 0.5:
        u = rng.random()
        return BTrue() if u < 0.1 else BFalse() if u < 0.2 else comparison(rng, ids, 0)
    if r < 0.65:
        return BNot(boolean(rng, ids, depth - 1))
    ctor = BAnd if r < 0.85 else BOr
    return ctor(boolean(rng, ids, depth - 1), boolean(rng, ids, depth - 1))


def command(rng, ids=IDS, depth=2, res=("r",), heap=True, par=True, loops=True, blocks=True):
    """A random command; ``res`` names resources usable in regions and blocks."""
    leaves = ["skip", "assign", "assign"]
    if heap:
        leaves += ["lookup", "update", "cons", "dispose"]
    if depth <= 0 or rng.random() < 0.35:
        kind = rng.choice(leaves)
        i = rng.choice(ids)
        if kind == "skip":
            return Skip()
        if kind == "assign":
            return Assign(i, expr(rng, ids, 1))
        if kind == "lookup":
            return Lookup(i, expr(rng, ids, 0))
        if kind == "update":
            return Update(expr(rng, ids, 0), expr(rng, ids, 0))
        if kind == "cons":
            return Cons(i, ListExpr(tuple(expr(rng, ids, 0) for _ in range(rng.randint(1, 2)))))
        return Dispose(expr(rng, ids, 0))
    kinds = ["seq", "seq", "if"]
    if loops:
        kinds.append("while")
    if res:
        kinds += ["with", "with"] + (["resource"] if blocks else [])
    if par:
        kinds.append("par")
    kind = rng.choice(kinds)
    sub = lambda: command(rng, ids, depth - 1, res, heap, par, loops, blocks)  # noqa: E731
    if kind == "seq":
        return Seq(sub(), sub())
    if kind == "if":
        return If(boolean(rng, ids, 1), sub(), sub())
    if kind == "while":
        return While(boolean(rng, ids, 0), sub())
    if kind == "with":
        return WithWhen(rng.choice(res), boolean(rng, ids, 0), sub())
    if kind == "resource":
        return Resource(rng.choice(res), sub())
    return Par(sub(), sub())


def formula(rng, ids=IDS, depth=2, lit=2):
    r = rng.random()
    if depth <= 0 or r < 0.4:
        u = rng.random()
        if u < 0.25:
            return EMP
        if u < 0.55:
            return PointsTo(expr(rng, ids, 0, lit), expr(rng, ids, 0, lit))
        if u < 0.65:
            return TRUE
        return Bool(comparison(rng, ids, 0, lit))
    if r < 0.5:
        return Not(formula(rng, ids, depth - 1, lit))
    ctor = rng.choice((Star, Star, And, Or))
    return ctor(formula(rng, ids, depth - 1, lit), formula(rng, ids, depth - 1, lit))


def store(rng, ids=IDS, vals=VALS) -> FrozenMap:
    return FrozenMap({i: rng.choice(vals) for i in ids})


def heap(rng, addrs=ADDRS, vals=VALS, p=0.5) -> FrozenMap:
    return FrozenMap({a: rng.choice(vals) for a in addrs if rng.random() < p})


# ---------------------------------------------------------------------------
# Actions, traces and partitioned states for the frame and decomposition checks

FRAME_CTX_TEXT = "r(w): 1 |-> w; q(u): u = 0 /\\ emp"
FRAME_CTX = parse_context(FRAME_CTX_TEXT)
FRAME_IDS = ("x", "y", "w", "u")
FRAME_RES = ("r", "q")


def action_universe(ids=FRAME_IDS, vals=VALS, addrs=ADDRS, res=FRAME_RES) -> list:
    out = [DELTA]
    for i in ids:
        for v in vals:
            out += [Read(i, v), Write(i, v)]
    for l in addrs:
        out.append(Disp(l))
        for v in vals:
            out += [HeapRead(l, v), HeapWrite(l, v), Alloc(l, (v,))]
    for r in res:
        out += [Try(r), Acq(r), Rel(r)]
    return out


def action(rng, ids=FRAME_IDS, vals=VALS, addrs=ADDRS, res=FRAME_RES):
    return rng.choice(action_universe(ids, vals, addrs, res))


def trace(rng, n: int, **kw) -> Trace:
    return Trace(tuple(action(rng, **kw) for _ in range(n)))


def subset(rng, xs, p=0.5) -> frozenset:
    return frozenset(x for x in xs if rng.random() < p)


def split_state(rng, ctx=FRAME_CTX, ids=FRAME_IDS, addrs=ADDRS, vals=VALS):
    """A random partitioned state: (s, h1, h2, h3, H, N1, N2, N3).

    h1 and h2 are the two halves of the process heap, h3 the environment's;
    N1, N2 and N3 are the matching held-resource sets.
    """
    while True:
        s = dict(store(rng, ids, vals))
        owner = {e.name: rng.choice(("N1", "N2", "N3", "free", "free")) for e in ctx.entries}
        H = {}
        for e in ctx.entries:
            if owner[e.name] != "free":
                continue
            if e.name == "r":
                H[1] = s["w"]
            elif e.name == "q":
                s["u"] = 0
        parts = {"h1": {}, "h2": {}, "h3": {}}
        for a in addrs:
            if a in H:
                continue
            where = rng.choice(("h1", "h2", "h3", None))
            if where:
                parts[where][a] = rng.choice(vals)
        N = {k: frozenset(r for r, o in owner.items() if o == k) for k in ("N1", "N2", "N3")}
        fm = {k: FrozenMap(v) for k, v in parts.items()}
        big = with_resource_flags(
            LocalState(FrozenMap(s), fm["h1"].update(fm["h2"]), fm["h3"], FrozenMap(H),
                       N["N1"] | N["N2"], N["N3"]), ctx)
        if is_local_state(big, ctx):
            return big.s, fm["h1"], fm["h2"], fm["h3"], FrozenMap(H), N["N1"], N["N2"], N["N3"]


# ---------------------------------------------------------------------------
# Race-free programs for the interpreter comparison


def _private(rng, ids, depth, addr):
    """Sequential code over private identifiers, one private cell and region
    accesses to the shared identifier g under resource r."""
    if depth <= 0 or rng.random() < 0.4:
        kind = rng.choice(("assign", "assign", "update", "lookup", "region"))
        i = rng.choice(ids)
        if kind == "assign":
            return Assign(i, expr(rng, ids, 1, 1))
        if kind == "update":
            return Update(IntLit(addr), expr(rng, ids, 0, 1))
        if kind == "lookup":
            return Lookup(i, IntLit(addr))
        body = rng.choice((Assign("g", Add(Ident("g"), IntLit(1))), Assign(i, Ident("g")),
                           Assign("g", expr(rng, ids, 0, 1))))
        return WithWhen("r", rng.choice((BTrue(), Cmp("<", Ident("g"), IntLit(2)))), body)
    kind = rng.choice(("seq", "seq", "if", "while"))
    if kind == "seq":
        return Seq(_private(rng, ids, depth - 1, addr), _private(rng, ids, depth - 1, addr))
    if kind == "if":
        return If(boolean(rng, ids, 0), _private(rng, ids, depth - 1, addr),
                  _private(rng, ids, depth - 1, addr))
    return While(Cmp("<", Ident(ids[0]), IntLit(1)), Assign(ids[0], Add(Ident(ids[0]), IntLit(1))))


def race_free_program(rng):
    """``prefix; resource r in (left || right)`` where the branches share only
    g, and only inside regions."""
    prefix = rng.choice((Skip(), Assign("x", IntLit(rng.randint(0, 1))),
                         Cons("x", ListExpr((IntLit(0),))), Update(IntLit(1), IntLit(1))))
    left = _private(rng, ("x", "y"), 2, 1)
    right = _private(rng, ("z", "v"), 2, 2)
    return Seq(prefix, Resource("r", Par(left, right)))
