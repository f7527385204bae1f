"""Command-line front end.

Exit codes: 0 for Valid / accepted / precise / no abort, 1 for Invalid /
rejected / imprecise / abort reachable, 2 for errors and Unsupported.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .cml import check_validity, h2_mode_for, parse_assertion, parse_triple, s2m, show_assertion
from .config import Limits
from .formulas import (
    EMPTY_CTX, ctx_dom, is_precise, is_precise_all_stores, parse_context, parse_formula,
)
from .opsem import ABORTED, Semantics
from .proof import check_derivation, parse_derivation
from .state import LocalState, local_state_problems, parse_state, show_state, with_resource_flags
from .syntax import (
    ParseError, command_footprint, parse_program, parse_trace, show_action, show_trace,
)
from .traces import TraceSet, run_command


class CliError(Exception):
    pass


class Out:
    """Text or JSON-lines emitter."""

    def __init__(self, fmt: str, stream=None):
        self.fmt = fmt
        self.stream = stream or sys.stdout

    def emit(self, text: str, /, **record):
        if self.fmt == "json-lines":
            self.stream.write(json.dumps(record, sort_keys=True) + "\n")
        else:
            self.stream.write(text + "\n")


def _read(arg: str) -> str:
    """A path, ``-`` for stdin, or literal text when no such file exists."""
    if arg == "-":
        return sys.stdin.read()
    if os.path.exists(arg):
        with open(arg) as fh:
            return fh.read()
    return arg


def _names(arg: str | None):
    if arg is None:
        return None
    return frozenset(n.strip() for n in arg.split(",") if n.strip())


def limits_from(args) -> Limits:
    return Limits(args.value_bound, args.addr_bound, args.loop_bound, args.wait_bound,
                  args.env_budget, args.jobs)


def _witness_lines(w) -> list:
    return [show_action(a) for a in w.actions]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_run(args, limits: Limits, out: Out) -> int:
    if args.assertion:
        a = parse_assertion(_read(args.assertion))
        k, ctx, A, B = a.pre.k, a.ctx, a.A, a.B
    else:
        if not args.program:
            raise CliError("run needs a program or --assertion")
        k = parse_program(_read(args.program))
        ctx = parse_context(args.context) if args.context else EMPTY_CTX
        A = B = None
    ids = command_footprint(k).free - ctx_dom(ctx)
    A = _names(args.rely) if args.rely is not None else (A if A is not None else ids)
    B = _names(args.key) if args.key is not None else (B if B is not None else frozenset())
    ls = parse_state(_read(args.state)) if args.state else LocalState()
    ls = ls.replace(s=ls.s.update({i: 0 for i in sorted(ids) if i not in ls.s}))
    ls = with_resource_flags(ls, ctx)
    problems = local_state_problems(ls, ctx)
    if problems:
        raise CliError("initial state is not a local state: " + "; ".join(problems))
    sem = Semantics(ctx, A, B, limits.env_budget(h2_mode_for(ctx, k)))
    if args.replay:
        t = parse_trace(_read(args.replay))
        outcomes = sem.run_trace(t, ls)
        finals = sorted(show_state(o.ls) for o in outcomes if o is not ABORTED)
        aborted = ABORTED in outcomes
        for f in finals:
            out.emit(f"final {f}", kind="final", state=f)
        out.emit(f"abort: {'yes' if aborted else 'no'}", kind="summary", abort=aborted, finals=len(finals))
        return 1 if aborted else 0
    res = run_command(k, ls, sem, limits.trace_bounds())
    views = sorted({show_state(LocalState(t.s, t.h1)) for t in res.terminals})
    for v in views:
        out.emit(f"terminal {v}", kind="terminal", state=v)
    if res.abort is not None:
        acts = _witness_lines(res.abort)
        out.emit("abort reachable via:\n  " + "\n  ".join(acts), kind="abort", trace=acts,
                 initial=show_state(ls))
    out.emit(f"{len(views)} terminal state(s), abort: {'yes' if res.abort else 'no'}, "
             f"{res.visited} configurations explored",
             kind="summary", terminals=len(views), abort=res.abort is not None, visited=res.visited)
    return 1 if res.abort is not None else 0


def cmd_traces(args, limits: Limits, out: Out) -> int:
    k = parse_program(_read(args.program))
    ts = sorted(TraceSet(k, limits.trace_bounds(), limit=args.limit), key=show_trace)
    for n, t in enumerate(ts):
        acts = [show_action(a) for a in t.actions]
        out.emit(f"// trace {n}\n{show_trace(t)}".rstrip("\n"),
                 kind="trace", index=n, actions=acts, diverges=t.diverges)
    out.emit(f"{len(ts)} trace(s)", kind="summary", count=len(ts))
    return 0


def cmd_check(args, limits: Limits, out: Out) -> int:
    a = parse_assertion(_read(args.assertion))
    v = check_validity(a, limits)
    if v.status == "Valid":
        out.emit(f"Valid ({v.checked} initial states checked)", kind="verdict", status="Valid", checked=v.checked)
        return 0
    if v.status == "Unsupported":
        out.emit(f"Unsupported: {v.reason}", kind="verdict", status="Unsupported", reason=v.reason)
        return 2
    w = v.witness
    acts = _witness_lines(w)
    outcome = "abort" if w.outcome is ABORTED else show_state(w.outcome)
    out.emit(f"Invalid: {v.reason}\ninitial {show_state(w.initial)}\ntrace:\n  " + "\n  ".join(acts)
             + f"\noutcome {outcome}",
             kind="verdict", status="Invalid", reason=v.reason, initial=show_state(w.initial),
             trace=acts, outcome=outcome)
    if args.witness_out:
        with open(args.witness_out, "w") as fh:
            fh.write(show_trace(w.trace) + "\n")
    return 1


def cmd_prove(args, limits: Limits, out: Out) -> int:
    d = parse_derivation(_read(args.derivation))
    rep = check_derivation(d, limits, guards=not args.no_guards)
    if rep.failure:
        path, rule, vs = rep.failure
        out.emit(rep.describe(), kind="report", ok=False, rule=rule, path=list(path), violations=vs)
        return 1
    out.emit(rep.describe(), kind="report", ok=rep.ok, checked=rep.checked,
             hypotheses=[show_assertion(h) for h in rep.hypotheses])
    return 0 if rep.ok else 1


def cmd_s2m(args, limits: Limits, out: Out) -> int:
    csl = parse_triple(_read(args.triple))
    try:
        a = s2m(csl, _names(args.ids))
    except ValueError as exc:
        raise CliError(str(exc))
    out.emit(show_assertion(a), kind="assertion", text=show_assertion(a))
    return 0


def cmd_precise(args, limits: Limits, out: Out) -> int:
    p = parse_formula(_read(args.formula))
    bounds = limits.heap_bounds()
    if args.store:
        ok = is_precise(p, parse_state(args.store).s, bounds=bounds)
    else:
        ok = is_precise_all_stores(p, bounds)
    out.emit("precise" if ok else "imprecise", kind="precise", precise=ok)
    return 0 if ok else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    d = Limits()
    common.add_argument("--value-bound", type=int, default=d.value, help="values range over 0..N")
    common.add_argument("--addr-bound", type=int, default=d.addr, help="addresses range over 1..N")
    common.add_argument("--loop-bound", type=int, default=d.loop, help="loop iterations per trace")
    common.add_argument("--wait-bound", type=int, default=d.wait, help="failed waits per critical region")
    common.add_argument("--env-budget", type=int, default=d.env, help="environment moves between steps")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for validity checking")
    common.add_argument("--format", choices=("text", "json-lines"), default="text")

    ap = argparse.ArgumentParser(prog="cmlbench", description="Bounded checking for concurrent matching logic.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="explore all interleavings of a program")
    p.add_argument("program", nargs="?", help="program file or text")
    p.add_argument("--state", help="initial state literal, e.g. 'store{x=0} heap1{1:0}'")
    p.add_argument("--context", help="resource context, e.g. 'r(a,x): x=a /\\ emp'")
    p.add_argument("--rely", help="comma-separated rely set (default: all program identifiers)")
    p.add_argument("--key", help="comma-separated key set (default: empty)")
    p.add_argument("--assertion", help="take program, context, rely and key sets from an assertion file")
    p.add_argument("--replay", help="trace file to replay instead of exploring")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("traces", parents=[common], help="enumerate the traces of a program")
    p.add_argument("program")
    p.add_argument("--limit", type=int, default=None, help="stop after N traces")
    p.set_defaults(fn=cmd_traces)

    p = sub.add_parser("check", parents=[common], help="bounded validity of an assertion")
    p.add_argument("assertion")
    p.add_argument("--witness-out", help="write the counterexample trace to this file")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("prove", parents=[common], help="check a derivation")
    p.add_argument("derivation")
    p.add_argument("--no-guards", action="store_true", help="check only the displayed rule conditions")
    p.set_defaults(fn=cmd_prove)

    p = sub.add_parser("s2m", parents=[common], help="embed a separation-logic triple as an assertion")
    p.add_argument("triple")
    p.add_argument("--ids", help="comma-separated identifier universe")
    p.set_defaults(fn=cmd_s2m)

    p = sub.add_parser("precise", parents=[common], help="decide precision of a formula")
    p.add_argument("formula", help="formula text or file")
    p.add_argument("--store", help="fix the store, e.g. 'store{x=1}'")
    p.set_defaults(fn=cmd_precise)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    out = Out(args.format)
    try:
        limits = limits_from(args)
        return args.fn(args, limits, out)
    except (CliError, ParseError, ValueError, OSError) as exc:
        out.emit(f"error: {exc}", kind="error", message=str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
