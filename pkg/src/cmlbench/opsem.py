"""Labelled transitions for single actions, environment moves and trace execution."""
from __future__ import annotations

from dataclasses import dataclass

from .formulas import ResourceContext, ctx_dom, ctx_inv, ctx_owned, sat
from .heaps import subheaps
from .state import Configuration, LocalState
from .syntax import (
    AbortAct, Acq, Action, Alloc, Delta, Disp, HeapRead, HeapWrite, Read, Rel,
    Trace, Try, Unbound, Write, action_footprint,
)


@dataclass(frozen=True)
class Next:
    ls: LocalState


class _Sentinel:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name

    def __reduce__(self):
        # Unpickle to the module-level instance so identity checks keep working.
        return self.name.upper()


ABORTED = _Sentinel("Aborted")
BLOCKED = _Sentinel("Blocked")


@dataclass(frozen=True)
class EnvBudget:
    """Finite description of the environment: how many moves and over which values.

    ``heap_mode`` controls environment heap moves: "full" allows writes, allocation
    and disposal on h2; "domain" keeps only allocation and disposal (cell contents
    fixed to 0); "none" disables heap moves.  The coarser modes are exact when the
    environment heap cannot be observed, see ``cml.h2_mode_for``.
    """

    max_moves: int = 2
    values: tuple = (0, 1, 2, 3)
    addresses: tuple = (1, 2, 3, 4, 5, 6)
    heap_mode: str = "full"

    def __post_init__(self):
        if self.max_moves < 0:
            raise ValueError("max_moves must be non-negative")
        if self.heap_mode not in ("full", "domain", "none"):
            raise ValueError(f"unknown heap mode {self.heap_mode!r}")


def _inv_of(ctx: ResourceContext, r: str):
    return ctx_inv(ctx.restrict([r]))


def _sat_or_false(s, h, p) -> bool:
    try:
        return sat(s, h, p)
    except Unbound:
        return False


def step_action(a: Action, ls: LocalState, ctx: ResourceContext, A, B) -> tuple:
    """One process step.  Returns a tuple of outcomes (Next, ABORTED or BLOCKED)."""
    s, h1 = ls.s, ls.h1
    if isinstance(a, Delta):
        return (Next(ls),)
    if isinstance(a, Read):
        if a.ident not in ctx_owned(ctx.restrict(ls.N1)) | frozenset(A):
            return (ABORTED,)
        return (Next(ls),) if s.get(a.ident) == a.value else (BLOCKED,)
    if isinstance(a, HeapRead):
        if a.addr not in h1:
            return (ABORTED,)
        return (Next(ls),) if h1[a.addr] == a.value else (BLOCKED,)
    if isinstance(a, Write):
        if a.ident in ctx_owned(ctx.exclude(ls.N1)):
            return (ABORTED,)
        return (Next(ls.replace(s=s.set(a.ident, a.value))),)
    if isinstance(a, HeapWrite):
        if a.addr not in h1:
            return (ABORTED,)
        return (Next(ls.replace(h1=h1.set(a.addr, a.value))),)
    if isinstance(a, Alloc):
        cells = range(a.addr, a.addr + len(a.values))
        if a.addr <= 0 or not a.values:
            return (BLOCKED,)
        if any(c in h1 or c in ls.h2 or c in ls.H for c in cells):
            return (BLOCKED,)
        return (Next(ls.replace(h1=h1.update(zip(cells, a.values)))),)
    if isinstance(a, Disp):
        if a.addr not in h1:
            return (ABORTED,)
        return (Next(ls.replace(h1=h1.without([a.addr]))),)
    if isinstance(a, Try):
        return (Next(ls),) if a.res in ls.N1 | ls.N2 else (BLOCKED,)
    if isinstance(a, Acq):
        if a.res in ls.N1 | ls.N2:
            return (BLOCKED,)
        inv = _inv_of(ctx, a.res)
        out = []
        for hr in subheaps(ls.H):
            if _sat_or_false(s, hr, inv):
                out.append(Next(LocalState(
                    s.set(a.res, 0), h1.update(hr), ls.h2, ls.H.without(hr),
                    ls.N1 | {a.res}, ls.N2)))
        return tuple(out) if out else (BLOCKED,)
    if isinstance(a, Rel):
        if a.res not in ls.N1:
            # Releasing a resource the process does not hold is an ownership fault.
            return (ABORTED,)
        inv = _inv_of(ctx, a.res)
        out = []
        for hr in subheaps(h1):
            if _sat_or_false(s, hr, inv):
                out.append(Next(LocalState(
                    s.set(a.res, 1), h1.without(hr), ls.h2, ls.H.update(hr),
                    ls.N1 - {a.res}, ls.N2)))
        return tuple(out) if out else (ABORTED,)
    if isinstance(a, AbortAct):
        return (ABORTED,)
    raise TypeError(a)


class Semantics:
    """Process steps under a fixed context, rely set, key set and environment budget.

    Environment closures are memoised per state.
    """

    def __init__(self, ctx: ResourceContext, A, B, budget: EnvBudget):
        self.ctx = ctx
        self.A = frozenset(A)
        self.B = frozenset(B)
        self.budget = budget
        self._closure: dict = {}
        self._res_names = ctx_dom(ctx)

    # -- environment -------------------------------------------------------
    def env_candidates(self, ls: LocalState):
        """Candidate environment actions, in the environment's own view."""
        b = self.budget
        protected = self.A | self.B | self._res_names | ls.N1 | ls.N2
        for i in sorted(ls.s):
            if i in protected:
                continue
            cur = ls.s[i]
            for v in b.values:
                if v != cur:
                    yield Write(i, v)
        if b.heap_mode == "full":
            for l in sorted(ls.h2):
                for v in b.values:
                    if v != ls.h2[l]:
                        yield HeapWrite(l, v)
        if b.heap_mode != "none":
            used = set(ls.h1) | set(ls.h2) | set(ls.H)
            fill = b.values if b.heap_mode == "full" else (0,)
            for l in b.addresses:
                if l not in used:
                    for v in fill:
                        yield Alloc(l, (v,))
            for l in sorted(ls.h2):
                yield Disp(l)
        for r in sorted(self._res_names - ls.N1 - ls.N2):
            yield Acq(r)
        for r in sorted(ls.N2):
            yield Rel(r)

    def env_step(self, ls: LocalState) -> set:
        out = set()
        env_view = ls.swapped()
        for mu in self.env_candidates(ls):
            fp = action_footprint(mu)
            if fp.writes & self.A or fp.writes & self.B:
                continue
            for o in step_action(mu, env_view, self.ctx, frozenset(), frozenset()):
                if isinstance(o, Next):
                    out.add(o.ls.swapped())
        return out

    def env_closure(self, ls: LocalState) -> frozenset:
        hit = self._closure.get(ls)
        if hit is not None:
            return hit
        seen = {ls}
        frontier = [ls]
        for _ in range(self.budget.max_moves):
            nxt = []
            for st in frontier:
                for st2 in self.env_step(st):
                    if st2 not in seen:
                        seen.add(st2)
                        nxt.append(st2)
            frontier = nxt
            if not frontier:
                break
        out = frozenset(seen)
        self._closure[ls] = out
        return out

    # -- process -----------------------------------------------------------
    def step(self, a: Action, ls: LocalState) -> tuple:
        return step_action(a, ls, self.ctx, self.A, self.B)

    def big_step(self, a: Action, ls: LocalState) -> set:
        out = set()
        for pre in self.env_closure(ls):
            for o in self.step(a, pre):
                if o is ABORTED:
                    out.add(ABORTED)
                elif isinstance(o, Next):
                    for post in self.env_closure(o.ls):
                        out.add(Next(post))
        return out

    def run_trace(self, t: Trace, ls: LocalState) -> set:
        current = {ls}
        aborted = False
        for a in t.actions:
            nxt = set()
            for st in current:
                for o in self.big_step(a, st):
                    if o is ABORTED:
                        aborted = True
                    else:
                        nxt.add(o.ls)
            current = nxt
        out = set() if t.diverges else {Next(st) for st in current}
        if aborted:
            out.add(ABORTED)
        return out


def env_moves(ls: LocalState, ctx: ResourceContext, A, B, budget: EnvBudget) -> frozenset:
    return Semantics(ctx, A, B, budget).env_closure(ls)


def big_step(a: Action, ls: LocalState, ctx: ResourceContext, A, B, budget: EnvBudget) -> set:
    return Semantics(ctx, A, B, budget).big_step(a, ls)


def run_trace(t: Trace, cfg, ctx: ResourceContext, A, B, budget: EnvBudget) -> set:
    """Execute a trace from a configuration (or a bare local state)."""
    ls = cfg.ls if isinstance(cfg, Configuration) else cfg
    return Semantics(ctx, A, B, budget).run_trace(t, ls)
