"""Trace semantics of expressions, booleans and commands.

Commands are compiled into a lazily expanded automaton whose paths are the
command's traces.  Two views are offered:

* enumeration (``TraceSet``), where every read is instantiated over the value
  domain, exactly as in the store-independent denotation;
* exploration (``explore``), where a read ``i=v`` is only offered for the value
  the current state holds.  Any other value would block at execution, so the
  set of reachable outcomes is the same, but the search stays small.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .opsem import ABORTED, Next, Semantics
from .state import LocalState
from .syntax import (
    ABORT, DELTA, AbortAct, Acq, Action, Add, Alloc, Assign, BAnd, BFalse, BNot,
    BOr, BTrue, Cmp, Command, Cons, Disp, Dispose, Expr, HeapRead, HeapWrite,
    Ident, If, IntLit, Lookup, Par, Read, Rel, Resource, Seq, Skip, Trace,
    Try, Update, While, WithWhen, Write, action_footprint, trace_footprint,
)


@dataclass(frozen=True)
class TraceBounds:
    """Finite generation bounds.

    ``loop`` is the number of complete loop iterations kept before the
    remaining unfolding is cut and marked divergent; ``wait`` the number of
    unsuccessful attempts at a critical region.
    """

    values: tuple = (0, 1, 2, 3)
    addresses: tuple = (1, 2, 3, 4, 5, 6)
    loop: int = 3
    wait: int = 2

    @staticmethod
    def of(value_bound=3, addr_bound=6, loop=3, wait=2) -> "TraceBounds":
        return TraceBounds(tuple(range(value_bound + 1)), tuple(range(1, addr_bound + 1)), loop, wait)


# ---------------------------------------------------------------------------
# Direct denotations of expressions and booleans


def eval_expr(e: Expr, values: Iterable[int]) -> set:
    """All (trace, value) pairs of an expression; reads range over ``values``."""
    values = tuple(values)
    if isinstance(e, IntLit):
        return {(Trace((DELTA,)), e.value)}
    if isinstance(e, Ident):
        return {(Trace((Read(e.name, v),)), v) for v in values}
    if isinstance(e, Add):
        return {(Trace(t1.actions + t2.actions), v1 + v2)
                for t1, v1 in eval_expr(e.left, values)
                for t2, v2 in eval_expr(e.right, values)}
    raise TypeError(f"not an integer expression: {e!r}")


def eval_list(items, values) -> set:
    out = {(Trace(()), ())}
    for it in items:
        out = {(Trace(t.actions + t2.actions), vs + (v,))
               for t, vs in out for t2, v in eval_expr(it, values)}
    return out


def _compare(op, a, b) -> bool:
    return a == b if op == "=" else (a < b if op == "<" else a <= b)


def eval_bool(b, values: Iterable[int]) -> tuple:
    """(traces evaluating to true, traces evaluating to false)."""
    values = tuple(values)
    if isinstance(b, BTrue):
        return {Trace((DELTA,))}, set()
    if isinstance(b, BFalse):
        return set(), {Trace((DELTA,))}
    if isinstance(b, Cmp):
        t, f = set(), set()
        for t1, v1 in eval_expr(b.left, values):
            for t2, v2 in eval_expr(b.right, values):
                (t if _compare(b.op, v1, v2) else f).add(Trace(t1.actions + t2.actions))
        return t, f
    if isinstance(b, BNot):
        t, f = eval_bool(b.arg, values)
        return f, t
    lt, lf = eval_bool(b.left, values)
    rt, rf = eval_bool(b.right, values)

    def cat(xs, ys):
        return {Trace(x.actions + y.actions) for x in xs for y in ys}

    if isinstance(b, BAnd):
        return cat(lt, rt), cat(lt, rf) | cat(lf, rt) | cat(lf, rf)
    return cat(lt, rt) | cat(lt, rf) | cat(lf, rt), cat(lf, rf)


# ---------------------------------------------------------------------------
# Operations on concrete traces


def races(a: Action, b: Action) -> bool:
    # Allocation needs its cells fresh in the whole heap, so it can never
    # overlap a concurrent access to a live cell: it is not a race partner.
    if isinstance(a, Alloc) or isinstance(b, Alloc):
        return False
    fa, fb = action_footprint(a), action_footprint(b)
    return bool(fa.writes & fb.free or fb.writes & fa.free)


def writes_compatible(t1: Trace, A1, B1, t2: Trace, A2, B2) -> bool:
    """The side condition attached to a pair of traces in a parallel composition."""
    w1, w2 = trace_footprint(t1).writes, trace_footprint(t2).writes
    return not (w1 & set(A2) or w1 & set(B2) or w2 & set(A1) or w2 & set(B1))


def interleave(t1: Trace, A1=None, B1=None, t2: Trace = None, A2=None, B2=None) -> set:
    """All order-preserving merges of two traces plus an abort wherever heads race.

    When the four sets are supplied, a pair violating ``writes_compatible``
    contributes nothing (the filter of the enclosing parallel clause).
    """
    if None not in (A1, B1, A2, B2) and not writes_compatible(t1, A1, B1, t2, A2, B2):
        return set()
    diverges = t1.diverges or t2.diverges
    a1, a2 = t1.actions, t2.actions
    memo: dict = {}

    def merge(i, j) -> frozenset:
        key = (i, j)
        if key in memo:
            return memo[key]
        if i == len(a1):
            out = {a2[j:]}
        elif j == len(a2):
            out = {a1[i:]}
        else:
            lam, mu = a1[i], a2[j]
            out = set()
            for head, rest in ((lam, lambda: merge(i + 1, j)), (mu, lambda: merge(i, j + 1))):
                if isinstance(head, AbortAct):
                    out.add((head,))
                else:
                    out.update((head,) + m for m in rest())
            if races(lam, mu):
                out.add((ABORT,))
        memo[key] = frozenset(out)
        return memo[key]

    result = set()
    for acts in merge(0, 0):
        ends_abort = bool(acts) and isinstance(acts[-1], AbortAct)
        result.add(Trace(acts, diverges and not ends_abort))
    return result


def r_projection_ok(t: Trace, r: str) -> bool:
    """Can the r-actions of t run from a state where r is available?"""
    held = False
    for a in t.actions:
        if isinstance(a, Acq) and a.res == r:
            if held:
                return False
            held = True
        elif isinstance(a, Rel) and a.res == r:
            if not held:
                return False
            held = False
        elif isinstance(a, Try) and a.res == r:
            if not held:
                return False
    return True


def restrict_resource(T: Iterable[Trace], r: str) -> set:
    return {t for t in T if r_projection_ok(t, r)}


# ---------------------------------------------------------------------------
# Automaton


class Node:
    """A point in a command's trace automaton.  Subclasses implement ``edges``."""

    final = False
    cut = False

    def edges(self, ls):
        """List of (action, successor) pairs.  ``ls`` is None in enumeration mode."""
        return ()


class _Terminal(Node):
    def __init__(self, name, final=False, cut=False):
        self.name, self.final, self.cut = name, final, cut

    def __repr__(self):
        return self.name


DONE = _Terminal("DONE", final=True)
CUT = _Terminal("CUT", cut=True)
ABORT_NODE = _Terminal("ABORT")


class ActNode(Node):
    __slots__ = ("action", "nxt")

    def __init__(self, action, nxt):
        self.action, self.nxt = action, nxt

    def edges(self, ls):
        return ((self.action, self.nxt),)


class ChoiceNode(Node):
    __slots__ = ("options",)

    def __init__(self, options):
        self.options = tuple(options)

    def edges(self, ls):
        out = []
        for o in self.options:
            out.extend(o.edges(ls))
        return out


class _ValueNode(Node):
    """A node whose successors depend on a value; successors are memoised."""

    __slots__ = ("fn", "_kids")

    def __init__(self, fn):
        self.fn = fn
        self._kids = {}

    def kid(self, v):
        n = self._kids.get(v)
        if n is None:
            n = self._kids[v] = self.fn(v)
        return n


class ReadNode(_ValueNode):
    __slots__ = ("ident", "values")

    def __init__(self, ident, values, fn):
        super().__init__(fn)
        self.ident, self.values = ident, values

    def edges(self, ls):
        if ls is None:
            return [(Read(self.ident, v), self.kid(v)) for v in self.values]
        v = ls.s.get(self.ident, 0)
        return ((Read(self.ident, v), self.kid(v)),)


class HeapReadNode(_ValueNode):
    __slots__ = ("addr", "values")

    def __init__(self, addr, values, fn):
        super().__init__(fn)
        self.addr, self.values = addr, values

    def edges(self, ls):
        if ls is None:
            return [(HeapRead(self.addr, v), self.kid(v)) for v in self.values]
        v = ls.h1.get(self.addr, 0)
        return ((HeapRead(self.addr, v), self.kid(v)),)


class AllocNode(_ValueNode):
    __slots__ = ("vals", "addresses")

    def __init__(self, vals, addresses, fn):
        super().__init__(fn)
        self.vals, self.addresses = tuple(vals), addresses

    def edges(self, ls):
        n = len(self.vals)
        top = max(self.addresses) if self.addresses else 0
        out = []
        for l in self.addresses:
            if l + n - 1 > top:
                continue
            # Non-fresh addresses stay as edges: the step blocks, but the edge
            # still takes part in race detection against a parallel branch.
            out.append((Alloc(l, self.vals), self.kid(l)))
        return out


class CmdNode(Node):
    """Run command ``k`` then continue with ``cont``; expanded on first use."""

    __slots__ = ("builder", "k", "cont", "fuel", "_body")

    def __init__(self, builder, k, cont, fuel):
        self.builder, self.k, self.cont, self.fuel = builder, k, cont, fuel
        self._body = None

    def body(self) -> Node:
        if self._body is None:
            self._body = self.builder.expand(self.k, self.cont, self.fuel)
        return self._body

    def edges(self, ls):
        return self.body().edges(ls)


class SeqNode(Node):
    __slots__ = ("builder", "first", "cont")

    def __init__(self, builder, first, cont):
        self.builder, self.first, self.cont = builder, first, cont

    def edges(self, ls):
        b = self.builder
        return [(a, n if n is ABORT_NODE else b.seq(n, self.cont)) for a, n in self.first.edges(ls)]


class ParNode(Node):
    __slots__ = ("builder", "left", "right", "sets")

    def __init__(self, builder, left, right, sets):
        self.builder, self.left, self.right, self.sets = builder, left, right, sets

    def edges(self, ls):
        b = self.builder
        le = list(self.left.edges(ls))
        re_ = list(self.right.edges(ls))
        if self.sets is not None:
            A1, B1, A2, B2 = self.sets
            le = [(a, n) for a, n in le if not action_footprint(a).writes & (A2 | B2)]
            re_ = [(a, n) for a, n in re_ if not action_footprint(a).writes & (A1 | B1)]
        out = []
        for a, n in le:
            out.append((a, n if n is ABORT_NODE else b.par(n, self.right, self.sets)))
        for a, n in re_:
            out.append((a, n if n is ABORT_NODE else b.par(self.left, n, self.sets)))
        if any(races(a, c) for a, _ in le for c, _ in re_):
            out.append((ABORT, ABORT_NODE))
        return out


class ResNode(Node):
    """Keep only traces whose r-actions are executable from r available, then
    replace those actions by delta."""

    __slots__ = ("builder", "inner", "r", "held")

    def __init__(self, builder, inner, r, held):
        self.builder, self.inner, self.r, self.held = builder, inner, r, held

    def edges(self, ls):
        b, r, held = self.builder, self.r, self.held
        out = []
        for a, n in self.inner.edges(ls):
            nh = held
            if isinstance(a, (Acq, Rel, Try)) and a.res == r:
                if isinstance(a, Acq):
                    if held:
                        continue
                    nh = True
                elif isinstance(a, Rel):
                    if not held:
                        continue
                    nh = False
                elif not held:
                    continue
                a = DELTA
            out.append((a, n if n is ABORT_NODE else b.res(n, r, nh)))
        return out


class Builder:
    """Builds and interns automaton nodes for one set of bounds."""

    def __init__(self, bounds: TraceBounds, par_sets: dict | None = None):
        self.bounds = bounds
        self.par_sets = par_sets or {}
        self._cmd: dict = {}
        self._seq: dict = {}
        self._par: dict = {}
        self._res: dict = {}

    # -- interning ----------------------------------------------------------
    def cmd(self, k, cont, fuel=None) -> Node:
        if fuel == 0:
            return CUT
        key = (k, cont, fuel)
        n = self._cmd.get(key)
        if n is None:
            n = self._cmd[key] = CmdNode(self, k, cont, fuel)
        return n

    def seq(self, first, cont) -> Node:
        if first is DONE:
            return cont
        if first is CUT or first is ABORT_NODE:
            return first
        if cont is DONE:
            return first
        key = (first, cont)
        n = self._seq.get(key)
        if n is None:
            n = self._seq[key] = SeqNode(self, first, cont)
        return n

    def par(self, left, right, sets) -> Node:
        if left is DONE:
            return right
        if right is DONE:
            return left
        if left is CUT and right is CUT:
            return CUT
        key = (left, right, sets)
        n = self._par.get(key)
        if n is None:
            n = self._par[key] = ParNode(self, left, right, sets)
        return n

    def res(self, inner, r, held) -> Node:
        if inner is DONE or inner is CUT or inner is ABORT_NODE:
            return inner
        key = (inner, r, held)
        n = self._res.get(key)
        if n is None:
            n = self._res[key] = ResNode(self, inner, r, held)
        return n

    # -- expressions ----------------------------------------------------------
    def expr(self, e, k: Callable[[int], Node]) -> Node:
        if isinstance(e, IntLit):
            return ActNode(DELTA, k(e.value))
        if isinstance(e, Ident):
            return ReadNode(e.name, self.bounds.values, k)
        if isinstance(e, Add):
            return self.expr(e.left, lambda v1: self.expr(e.right, lambda v2: k(v1 + v2)))
        raise TypeError(f"not an integer expression: {e!r}")

    def exprs(self, items, k: Callable[[tuple], Node], acc=()) -> Node:
        if not items:
            return k(acc)
        return self.expr(items[0], lambda v: self.exprs(items[1:], k, acc + (v,)))

    def bexpr(self, b, kt: Node, kf: Node) -> Node:
        if isinstance(b, BTrue):
            return ActNode(DELTA, kt)
        if isinstance(b, BFalse):
            return ActNode(DELTA, kf)
        if isinstance(b, Cmp):
            return self.expr(b.left, lambda v1: self.expr(
                b.right, lambda v2: kt if _compare(b.op, v1, v2) else kf))
        if isinstance(b, BNot):
            return self.bexpr(b.arg, kf, kt)
        if isinstance(b, BAnd):
            return self.bexpr(b.left, self.bexpr(b.right, kt, kf), self.bexpr(b.right, kf, kf))
        if isinstance(b, BOr):
            return self.bexpr(b.left, self.bexpr(b.right, kt, kt), self.bexpr(b.right, kt, kf))
        raise TypeError(b)

    # -- commands -----------------------------------------------------------
    def expand(self, k, cont, fuel) -> Node:
        bd = self.bounds
        if isinstance(k, Skip):
            return ActNode(DELTA, cont)
        if isinstance(k, Assign):
            return self.expr(k.expr, lambda v: ActNode(Write(k.target, v), cont))
        if isinstance(k, Lookup):
            return self.expr(k.addr, lambda l: HeapReadNode(
                l, bd.values, lambda v: ActNode(Write(k.target, v), cont)))
        if isinstance(k, Update):
            return self.expr(k.addr, lambda l: self.expr(
                k.value, lambda v: ActNode(HeapWrite(l, v), cont)))
        if isinstance(k, Cons):
            return self.exprs(k.items.items, lambda vals: AllocNode(
                vals, bd.addresses, lambda l: ActNode(Write(k.target, l), cont)))
        if isinstance(k, Dispose):
            return self.expr(k.addr, lambda l: ActNode(Disp(l), cont))
        if isinstance(k, Seq):
            return self.cmd(k.first, self.cmd(k.second, cont))
        if isinstance(k, If):
            return self.bexpr(k.cond, self.cmd(k.then, cont), self.cmd(k.orelse, cont))
        if isinstance(k, While):
            # fuel counts remaining guard evaluations; the last one is cut.
            fuel = bd.loop + 1 if fuel is None else fuel
            again = self.cmd(k, cont, fuel - 1)
            return self.bexpr(k.cond, self.cmd(k.body, again), ActNode(DELTA, cont))
        if isinstance(k, WithWhen):
            return ActNode(DELTA, self._wait(k, cont, 0))
        if isinstance(k, Resource):
            return self.seq(self.res(self.cmd(k.body, DONE), k.name, False), cont)
        if isinstance(k, Par):
            sets = self.par_sets.get(k)
            if sets is not None:
                sets = tuple(frozenset(x) for x in sets)
            return self.seq(self.par(self.cmd(k.left, DONE), self.cmd(k.right, DONE), sets), cont)
        raise TypeError(k)

    def _wait(self, k: WithWhen, cont, n) -> Node:
        again = self._wait(k, cont, n + 1) if n < self.bounds.wait else CUT
        r = k.name
        enter_or_fail = self.bexpr(
            k.cond,
            self.cmd(k.body, ActNode(Rel(r), cont)),
            ActNode(Rel(r), again))
        return ChoiceNode((ActNode(Try(r), again), ActNode(Acq(r), enter_or_fail)))

    def root(self, k: Command) -> Node:
        return self.cmd(k, DONE)


# ---------------------------------------------------------------------------
# Trace sets


class TraceSet:
    """Lazily enumerable, duplicate-free set of traces of a command at bounds."""

    def __init__(self, k: Command, bounds: TraceBounds, par_sets=None, limit: int | None = None):
        self.k = k
        self.bounds = bounds
        self.builder = Builder(bounds, par_sets)
        self.root = self.builder.root(k)
        self.limit = limit

    def __iter__(self) -> Iterator[Trace]:
        return enumerate_traces(self.root, self.limit)

    def as_set(self) -> set:
        return set(self)


def enumerate_traces(root: Node, limit: int | None = None) -> Iterator[Trace]:
    seen = set()
    stack = [(root, ())]
    while stack:
        node, acts = stack.pop()
        if node.final or node.cut or node is ABORT_NODE:
            t = Trace(acts, node.cut)
            if t not in seen:
                seen.add(t)
                yield t
                if limit is not None and len(seen) >= limit:
                    return
            continue
        for a, n in reversed(list(node.edges(None))):
            stack.append((n, acts + (a,)))


def traces_of(k: Command, bounds: TraceBounds | None = None, par_sets=None,
              limit: int | None = None) -> TraceSet:
    return TraceSet(k, bounds or TraceBounds(), par_sets, limit)


# ---------------------------------------------------------------------------
# Exploration: executing every trace of a command under the action semantics


@dataclass
class Witness:
    initial: LocalState
    actions: tuple
    outcome: object  # ABORTED or a final LocalState

    @property
    def trace(self) -> Trace:
        return Trace(self.actions)


@dataclass
class Exploration:
    terminals: set = field(default_factory=set)
    abort: Witness | None = None
    violation: Witness | None = None
    visited: int = 0


def explore(root: Node, ls0: LocalState, sem: Semantics,
            terminal_ok: Callable[[LocalState], bool] | None = None,
            stop_early: bool = True, max_states: int | None = None) -> Exploration:
    """Breadth-first search over (automaton node, local state) pairs.

    Every step is a full "environment moves, action, environment moves" step.
    Records terminal states, and a witness for the first abort and the first
    terminal state rejected by ``terminal_ok``.
    """
    res = Exploration()
    start = (root, ls0)
    parent = {start: None}
    queue = deque([start])

    def path(key, last=None) -> tuple:
        acts = []
        while parent[key] is not None:
            key, a = parent[key]
            acts.append(a)
        acts.reverse()
        if last is not None:
            acts.append(last)
        return tuple(acts)

    while queue:
        key = queue.popleft()
        node, ls = key
        if node.final:
            if ls not in res.terminals:
                res.terminals.add(ls)
                if terminal_ok is not None and res.violation is None and not terminal_ok(ls):
                    res.violation = Witness(ls0, path(key), ls)
                    if stop_early:
                        break
            continue
        if node.cut or node is ABORT_NODE:
            continue
        for pre in sem.env_closure(ls):
            for a, child in node.edges(pre):
                for o in sem.step(a, pre):
                    if o is ABORTED:
                        if res.abort is None:
                            res.abort = Witness(ls0, path(key, a), ABORTED)
                        continue
                    if not isinstance(o, Next):
                        continue
                    for post in sem.env_closure(o.ls):
                        k2 = (child, post)
                        if k2 not in parent:
                            parent[k2] = (key, a)
                            queue.append(k2)
            if res.abort is not None and stop_early:
                break
        if res.abort is not None and stop_early:
            break
        if max_states is not None and len(parent) > max_states:
            raise RuntimeError(f"state space exceeds {max_states} configurations")
    res.visited = len(parent)
    return res


def run_command(k: Command, ls: LocalState, sem: Semantics, bounds: TraceBounds,
                par_sets=None, stop_early: bool = False) -> Exploration:
    return explore(Builder(bounds, par_sets).root(k), ls, sem, stop_early=stop_early)
