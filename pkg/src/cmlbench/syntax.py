"""Commands, expressions and actions of the heap language, with a parser,
a printer and the footprint functions used by the logic's side conditions."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Union


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class IntLit:
    value: int


@dataclass(frozen=True)
class Ident:
    name: str


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class ListExpr:
    items: tuple


Expr = Union[IntLit, Ident, Add, ListExpr]


@dataclass(frozen=True)
class BTrue:
    pass


@dataclass(frozen=True)
class BFalse:
    pass


@dataclass(frozen=True)
class Cmp:
    op: str  # one of "=", "<", "<="
    left: Expr
    right: Expr


@dataclass(frozen=True)
class BNot:
    arg: "BoolExpr"


@dataclass(frozen=True)
class BAnd:
    left: "BoolExpr"
    right: "BoolExpr"


@dataclass(frozen=True)
class BOr:
    left: "BoolExpr"
    right: "BoolExpr"


BoolExpr = Union[BTrue, BFalse, Cmp, BNot, BAnd, BOr]

CMP_OPS = ("=", "<", "<=")


def expr_vars(e: Expr) -> frozenset:
    if isinstance(e, Ident):
        return frozenset([e.name])
    if isinstance(e, Add):
        return expr_vars(e.left) | expr_vars(e.right)
    if isinstance(e, ListExpr):
        out = frozenset()
        for it in e.items:
            out |= expr_vars(it)
        return out
    return frozenset()


def bool_vars(b: BoolExpr) -> frozenset:
    if isinstance(b, Cmp):
        return expr_vars(b.left) | expr_vars(b.right)
    if isinstance(b, BNot):
        return bool_vars(b.arg)
    if isinstance(b, (BAnd, BOr)):
        return bool_vars(b.left) | bool_vars(b.right)
    return frozenset()


class Unbound(KeyError):
    """Raised when an expression mentions an identifier the store lacks."""


def eval_expr_in(e: Expr, store) -> int:
    if isinstance(e, IntLit):
        return e.value
    if isinstance(e, Ident):
        try:
            return store[e.name]
        except KeyError:
            raise Unbound(e.name) from None
    if isinstance(e, Add):
        return eval_expr_in(e.left, store) + eval_expr_in(e.right, store)
    raise TypeError(f"list expression has no integer value: {e!r}")


def eval_bool_in(b: BoolExpr, store) -> bool:
    if isinstance(b, BTrue):
        return True
    if isinstance(b, BFalse):
        return False
    if isinstance(b, Cmp):
        lv, rv = eval_expr_in(b.left, store), eval_expr_in(b.right, store)
        if b.op == "=":
            return lv == rv
        if b.op == "<":
            return lv < rv
        return lv <= rv
    if isinstance(b, BNot):
        return not eval_bool_in(b.arg, store)
    if isinstance(b, BAnd):
        return eval_bool_in(b.left, store) and eval_bool_in(b.right, store)
    return eval_bool_in(b.left, store) or eval_bool_in(b.right, store)


def subst_expr(e: Expr, mapping: dict) -> Expr:
    """Replace identifiers by expressions (mapping: name -> Expr)."""
    if isinstance(e, Ident):
        return mapping.get(e.name, e)
    if isinstance(e, Add):
        return Add(subst_expr(e.left, mapping), subst_expr(e.right, mapping))
    if isinstance(e, ListExpr):
        return ListExpr(tuple(subst_expr(i, mapping) for i in e.items))
    return e


def subst_bool(b: BoolExpr, mapping: dict) -> BoolExpr:
    if isinstance(b, Cmp):
        return Cmp(b.op, subst_expr(b.left, mapping), subst_expr(b.right, mapping))
    if isinstance(b, BNot):
        return BNot(subst_bool(b.arg, mapping))
    if isinstance(b, BAnd):
        return BAnd(subst_bool(b.left, mapping), subst_bool(b.right, mapping))
    if isinstance(b, BOr):
        return BOr(subst_bool(b.left, mapping), subst_bool(b.right, mapping))
    return b


# ---------------------------------------------------------------------------
# Commands


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Assign:
    target: str
    expr: Expr


@dataclass(frozen=True)
class Lookup:
    target: str
    addr: Expr


@dataclass(frozen=True)
class Update:
    addr: Expr
    value: Expr


@dataclass(frozen=True)
class Cons:
    target: str
    items: ListExpr


@dataclass(frozen=True)
class Dispose:
    addr: Expr


@dataclass(frozen=True)
class Seq:
    first: "Command"
    second: "Command"


@dataclass(frozen=True)
class If:
    cond: BoolExpr
    then: "Command"
    orelse: "Command"


@dataclass(frozen=True)
class While:
    cond: BoolExpr
    body: "Command"


@dataclass(frozen=True)
class Resource:
    name: str
    body: "Command"


@dataclass(frozen=True)
class WithWhen:
    name: str
    cond: BoolExpr
    body: "Command"


@dataclass(frozen=True)
class Par:
    left: "Command"
    right: "Command"


Command = Union[Skip, Assign, Lookup, Update, Cons, Dispose, Seq, If, While,
                Resource, WithWhen, Par]


# ---------------------------------------------------------------------------
# Actions and traces


@dataclass(frozen=True)
class Delta:
    pass


@dataclass(frozen=True)
class Read:
    ident: str
    value: int


@dataclass(frozen=True)
class Write:
    ident: str
    value: int


@dataclass(frozen=True)
class HeapRead:
    addr: int
    value: int


@dataclass(frozen=True)
class HeapWrite:
    addr: int
    value: int


@dataclass(frozen=True)
class Alloc:
    addr: int
    values: tuple


@dataclass(frozen=True)
class Disp:
    addr: int


@dataclass(frozen=True)
class Try:
    res: str


@dataclass(frozen=True)
class Acq:
    res: str


@dataclass(frozen=True)
class Rel:
    res: str


@dataclass(frozen=True)
class AbortAct:
    pass


Action = Union[Delta, Read, Write, HeapRead, HeapWrite, Alloc, Disp, Try, Acq,
               Rel, AbortAct]

DELTA = Delta()
ABORT = AbortAct()


@dataclass(frozen=True)
class Trace:
    actions: tuple = ()
    diverges: bool = False

    def __post_init__(self):
        for a in self.actions[:-1]:
            if isinstance(a, AbortAct):
                raise ValueError("abort may only end a trace")

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def then(self, other: "Trace") -> "Trace":
        if self.diverges or (self.actions and isinstance(self.actions[-1], AbortAct)):
            return self
        return Trace(self.actions + other.actions, other.diverges)


@dataclass(frozen=True)
class Footprint:
    reads: frozenset = frozenset()
    writes: frozenset = frozenset()
    mod: frozenset = frozenset()
    res: frozenset = frozenset()

    @property
    def free(self) -> frozenset:
        return self.reads | self.writes


_EMPTY_FP = Footprint()


def action_footprint(a: Action) -> Footprint:
    if isinstance(a, Write):
        s = frozenset([a.ident])
        return Footprint(writes=s, mod=s)
    if isinstance(a, Read):
        return Footprint(reads=frozenset([a.ident]))
    if isinstance(a, HeapRead):
        return Footprint(reads=frozenset([a.addr]))
    if isinstance(a, HeapWrite):
        return Footprint(writes=frozenset([a.addr]))
    if isinstance(a, Alloc):
        n = max(len(a.values), 1)
        return Footprint(writes=frozenset(range(a.addr, a.addr + n)))
    if isinstance(a, Disp):
        return Footprint(writes=frozenset([a.addr]))
    if isinstance(a, (Try, Acq, Rel)):
        return Footprint(res=frozenset([a.res]))
    return _EMPTY_FP


def trace_footprint(t) -> Footprint:
    reads, writes, mod, res = set(), set(), set(), set()
    for a in t:
        fp = action_footprint(a)
        reads |= fp.reads
        writes |= fp.writes
        mod |= fp.mod
        res |= fp.res
    return Footprint(frozenset(reads), frozenset(writes), frozenset(mod), frozenset(res))


def erase_resource_actions(t: Trace, r: str) -> Trace:
    acts = tuple(DELTA if isinstance(a, (Try, Acq, Rel)) and a.res == r else a
                 for a in t.actions)
    return Trace(acts, t.diverges)


@dataclass(frozen=True)
class CommandFootprint:
    free: frozenset
    mod: frozenset
    res: frozenset = frozenset()

    @property
    def writes(self) -> frozenset:
        # Heap cells written by a command are not known statically; the only
        # writes that can meet a rely or key set are identifier writes.
        return self.mod


def command_footprint(k: Command) -> CommandFootprint:
    free, mod, res = set(), set(), set()

    def walk(c):
        if isinstance(c, Assign):
            free.add(c.target)
            mod.add(c.target)
            free.update(expr_vars(c.expr))
        elif isinstance(c, Lookup):
            free.add(c.target)
            mod.add(c.target)
            free.update(expr_vars(c.addr))
        elif isinstance(c, Update):
            free.update(expr_vars(c.addr) | expr_vars(c.value))
        elif isinstance(c, Cons):
            free.add(c.target)
            mod.add(c.target)
            free.update(expr_vars(c.items))
        elif isinstance(c, Dispose):
            free.update(expr_vars(c.addr))
        elif isinstance(c, (Seq, Par)):
            a, b = (c.first, c.second) if isinstance(c, Seq) else (c.left, c.right)
            walk(a)
            walk(b)
        elif isinstance(c, If):
            free.update(bool_vars(c.cond))
            walk(c.then)
            walk(c.orelse)
        elif isinstance(c, While):
            free.update(bool_vars(c.cond))
            walk(c.body)
        elif isinstance(c, Resource):
            res.add(c.name)
            walk(c.body)
        elif isinstance(c, WithWhen):
            res.add(c.name)
            free.update(bool_vars(c.cond))
            walk(c.body)

    walk(k)
    return CommandFootprint(frozenset(free), frozenset(mod), frozenset(res))


def resource_names(k: Command) -> frozenset:
    return command_footprint(k).res


def erase_aux(k: Command, Y) -> Command:
    """Replace every assignment to an identifier in ``Y`` by ``skip``."""
    Y = frozenset(Y)
    bad = aux_violations(Y, k)
    if bad:
        raise ValueError(f"not an auxiliary set: {sorted(bad)} used outside auxiliary assignments")
    return _erase(k, Y)


def _erase(k, Y):
    if isinstance(k, Assign):
        return Skip() if k.target in Y else k
    if isinstance(k, Seq):
        return Seq(_erase(k.first, Y), _erase(k.second, Y))
    if isinstance(k, Par):
        return Par(_erase(k.left, Y), _erase(k.right, Y))
    if isinstance(k, If):
        return If(k.cond, _erase(k.then, Y), _erase(k.orelse, Y))
    if isinstance(k, While):
        return While(k.cond, _erase(k.body, Y))
    if isinstance(k, Resource):
        return Resource(k.name, _erase(k.body, Y))
    if isinstance(k, WithWhen):
        return WithWhen(k.name, k.cond, _erase(k.body, Y))
    return k


def aux_violations(Y, k: Command) -> set:
    """Identifiers of Y that occur somewhere other than an auxiliary assignment.

    An occurrence is allowed only as the target of a plain assignment ``y:=e``
    with ``y`` in Y, or inside the right-hand side of such an assignment.
    """
    Y = frozenset(Y)
    bad: set = set()

    def walk(c):
        if isinstance(c, Assign):
            if c.target not in Y:
                bad.update(expr_vars(c.expr) & Y)
        elif isinstance(c, Lookup):
            bad.update(({c.target} | expr_vars(c.addr)) & Y)
        elif isinstance(c, Update):
            bad.update((expr_vars(c.addr) | expr_vars(c.value)) & Y)
        elif isinstance(c, Cons):
            bad.update(({c.target} | expr_vars(c.items)) & Y)
        elif isinstance(c, Dispose):
            bad.update(expr_vars(c.addr) & Y)
        elif isinstance(c, Seq):
            walk(c.first)
            walk(c.second)
        elif isinstance(c, Par):
            walk(c.left)
            walk(c.right)
        elif isinstance(c, If):
            bad.update(bool_vars(c.cond) & Y)
            walk(c.then)
            walk(c.orelse)
        elif isinstance(c, While):
            bad.update(bool_vars(c.cond) & Y)
            walk(c.body)
        elif isinstance(c, Resource):
            walk(c.body)
        elif isinstance(c, WithWhen):
            bad.update(bool_vars(c.cond) & Y)
            walk(c.body)

    walk(k)
    return bad


def strip_skips(k: Command) -> Command:
    """Normalise ``skip; k`` and ``k; skip`` to ``k`` throughout."""
    if isinstance(k, Seq):
        a, b = strip_skips(k.first), strip_skips(k.second)
        if isinstance(a, Skip):
            return b
        if isinstance(b, Skip):
            return a
        return Seq(a, b)
    if isinstance(k, Par):
        return Par(strip_skips(k.left), strip_skips(k.right))
    if isinstance(k, If):
        return If(k.cond, strip_skips(k.then), strip_skips(k.orelse))
    if isinstance(k, While):
        return While(k.cond, strip_skips(k.body))
    if isinstance(k, Resource):
        return Resource(k.name, strip_skips(k.body))
    if isinstance(k, WithWhen):
        return WithWhen(k.name, k.cond, strip_skips(k.body))
    return k


# ---------------------------------------------------------------------------
# Lexer


class ParseError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{msg} at line {line}, column {col}" if line else msg)
        self.line, self.col = line, col


KEYWORDS = {
    "skip", "if", "then", "else", "while", "do", "resource", "in", "with",
    "when", "dispose", "cons", "true", "false", "emp", "exists",
}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<sym>\|->|\|\||:=|/\\|\\/|<=|[;()\[\]{},+=<>!*:.\-|#@])
""", re.VERBOSE)


@dataclass
class Tok:
    kind: str  # "int", "name", "sym", "eof"
    text: str
    line: int
    col: int


def tokenize(text: str) -> list:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            toks.append(Tok(kind, m.group(), line, pos - line_start + 1))
        chunk = m.group()
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - line_start + 1))
    return toks


class TokenStream:
    def __init__(self, text_or_tokens):
        self.toks = tokenize(text_or_tokens) if isinstance(text_or_tokens, str) else text_or_tokens
        self.i = 0

    def peek(self, k: int = 0) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Tok:
        t = self.peek()
        self.i += 1
        return t

    def at(self, text: str, k: int = 0) -> bool:
        t = self.peek(k)
        return t.kind in ("sym", "name") and t.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Tok:
        t = self.peek()
        if not self.at(text):
            self.fail(f"expected {text!r}, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def fail(self, msg: str):
        t = self.peek()
        raise ParseError(msg, t.line, t.col)

    def name(self) -> str:
        t = self.peek()
        if t.kind != "name" or t.text in KEYWORDS:
            self.fail(f"expected identifier, found {t.text or 'end of input'!r}")
        self.i += 1
        return t.text

    def integer(self) -> int:
        neg = self.accept("-")
        t = self.peek()
        if t.kind != "int":
            self.fail(f"expected integer, found {t.text or 'end of input'!r}")
        self.i += 1
        return -int(t.text) if neg else int(t.text)

    def done(self):
        if self.peek().kind != "eof":
            self.fail(f"unexpected {self.peek().text!r}")


# ---------------------------------------------------------------------------
# Parser


def parse_expr_from(ts: TokenStream) -> Expr:
    e = _expr_atom(ts)
    while ts.accept("+"):
        e = Add(e, _expr_atom(ts))
    return e


def _expr_atom(ts: TokenStream) -> Expr:
    t = ts.peek()
    if t.kind == "int" or (ts.at("-") and ts.peek(1).kind == "int"):
        return IntLit(ts.integer())
    if ts.accept("("):
        e = parse_expr_from(ts)
        ts.expect(")")
        return e
    return Ident(ts.name())


def _expr_list(ts: TokenStream) -> ListExpr:
    ts.expect("(")
    if ts.at(")"):
        ts.fail("cons needs at least one value")
    items = [parse_expr_from(ts)]
    while ts.accept(","):
        items.append(parse_expr_from(ts))
    ts.expect(")")
    return ListExpr(tuple(items))


def parse_bool_from(ts: TokenStream) -> BoolExpr:
    b = _bool_and(ts)
    while ts.accept("\\/"):
        b = BOr(b, _bool_and(ts))
    return b


def _bool_and(ts):
    b = _bool_not(ts)
    while ts.accept("/\\"):
        b = BAnd(b, _bool_not(ts))
    return b


def _bool_not(ts):
    if ts.accept("!"):
        return BNot(_bool_not(ts))
    return _bool_atom(ts)


def _bool_atom(ts):
    if ts.accept("true"):
        return BTrue()
    if ts.accept("false"):
        return BFalse()
    if ts.at("("):
        save = ts.i
        try:
            ts.next()
            b = parse_bool_from(ts)
            ts.expect(")")
            if not any(ts.at(op) for op in CMP_OPS + ("+",)):
                return b
        except ParseError:
            pass
        ts.i = save
    left = parse_expr_from(ts)
    for op in ("<=", "<", "="):
        if ts.accept(op):
            return Cmp(op, left, parse_expr_from(ts))
    ts.fail("expected comparison operator")


def parse_command_from(ts: TokenStream) -> Command:
    k = _seq(ts)
    while ts.accept("||"):
        k = Par(k, _seq(ts))
    return k


def _seq(ts):
    first = _stmt(ts)
    if ts.accept(";"):
        return Seq(first, _seq(ts))
    return first


def _stmt(ts) -> Command:
    if ts.accept("skip"):
        return Skip()
    if ts.accept("("):
        k = parse_command_from(ts)
        ts.expect(")")
        return k
    if ts.accept("if"):
        b = parse_bool_from(ts)
        ts.expect("then")
        k1 = _stmt(ts)
        ts.expect("else")
        return If(b, k1, _stmt(ts))
    if ts.accept("while"):
        b = parse_bool_from(ts)
        ts.expect("do")
        return While(b, _stmt(ts))
    if ts.accept("resource"):
        r = ts.name()
        ts.expect("in")
        return Resource(r, _stmt(ts))
    if ts.accept("with"):
        r = ts.name()
        ts.expect("when")
        b = parse_bool_from(ts)
        ts.expect("do")
        return WithWhen(r, b, _stmt(ts))
    if ts.accept("dispose"):
        return Dispose(parse_expr_from(ts))
    if ts.accept("["):
        a = parse_expr_from(ts)
        ts.expect("]")
        ts.expect(":=")
        return Update(a, parse_expr_from(ts))
    t = ts.peek()
    if t.kind == "name" and t.text in KEYWORDS:
        ts.fail(f"unknown or misplaced keyword {t.text!r}")
    if t.kind != "name":
        ts.fail(f"expected a command, found {t.text or 'end of input'!r}")
    target = ts.name()
    ts.expect(":=")
    if ts.accept("["):
        a = parse_expr_from(ts)
        ts.expect("]")
        return Lookup(target, a)
    if ts.accept("cons"):
        return Cons(target, _expr_list(ts))
    return Assign(target, parse_expr_from(ts))


def parse_program(text: str) -> Command:
    ts = TokenStream(text)
    k = parse_command_from(ts)
    ts.done()
    return k


def parse_expr(text: str) -> Expr:
    ts = TokenStream(text)
    e = parse_expr_from(ts)
    ts.done()
    return e


def parse_bool(text: str) -> BoolExpr:
    ts = TokenStream(text)
    b = parse_bool_from(ts)
    ts.done()
    return b


# ---------------------------------------------------------------------------
# Printer


def show_expr(e: Expr) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, Ident):
        return e.name
    if isinstance(e, Add):
        right = show_expr(e.right)
        if isinstance(e.right, Add):
            right = f"({right})"
        return f"{show_expr(e.left)}+{right}"
    return "(" + ", ".join(show_expr(i) for i in e.items) + ")"


def show_bool(b: BoolExpr, prec: int = 0) -> str:
    if isinstance(b, BTrue):
        return "true"
    if isinstance(b, BFalse):
        return "false"
    if isinstance(b, Cmp):
        return f"{show_expr(b.left)} {b.op} {show_expr(b.right)}"
    if isinstance(b, BNot):
        inner = show_bool(b.arg, 3)
        return f"!{inner}"
    if isinstance(b, BAnd):
        s = f"{show_bool(b.left, 2)} /\\ {show_bool(b.right, 3)}"
        return f"({s})" if prec > 2 else s
    s = f"{show_bool(b.left, 1)} \\/ {show_bool(b.right, 2)}"
    return f"({s})" if prec > 1 else s


def show_command(k: Command, prec: int = 0) -> str:
    """Print ``k``; prec 0 = parallel level, 1 = sequence level, 2 = statement."""
    if isinstance(k, Par):
        s = f"{show_command(k.left, 0)} || {show_command(k.right, 1)}"
        return f"({s})" if prec > 0 else s
    if isinstance(k, Seq):
        s = f"{show_command(k.first, 2)}; {show_command(k.second, 1)}"
        return f"({s})" if prec > 1 else s
    if isinstance(k, Skip):
        return "skip"
    if isinstance(k, Assign):
        return f"{k.target}:={show_expr(k.expr)}"
    if isinstance(k, Lookup):
        return f"{k.target}:=[{show_expr(k.addr)}]"
    if isinstance(k, Update):
        return f"[{show_expr(k.addr)}]:={show_expr(k.value)}"
    if isinstance(k, Cons):
        return f"{k.target}:=cons{show_expr(k.items)}"
    if isinstance(k, Dispose):
        return f"dispose {show_expr(k.addr)}"
    if isinstance(k, If):
        return (f"if {show_bool(k.cond)} then {show_command(k.then, 2)} "
                f"else {show_command(k.orelse, 2)}")
    if isinstance(k, While):
        return f"while {show_bool(k.cond)} do {show_command(k.body, 2)}"
    if isinstance(k, Resource):
        return f"resource {k.name} in {show_command(k.body, 2)}"
    if isinstance(k, WithWhen):
        return f"with {k.name} when {show_bool(k.cond)} do {show_command(k.body, 2)}"
    raise TypeError(k)


def show_action(a: Action) -> str:
    if isinstance(a, Delta):
        return "delta"
    if isinstance(a, Read):
        return f"{a.ident}={a.value}"
    if isinstance(a, Write):
        return f"{a.ident}:={a.value}"
    if isinstance(a, HeapRead):
        return f"[{a.addr}]={a.value}"
    if isinstance(a, HeapWrite):
        return f"[{a.addr}]:={a.value}"
    if isinstance(a, Alloc):
        return f"alloc {a.addr} [{','.join(str(v) for v in a.values)}]"
    if isinstance(a, Disp):
        return f"disp {a.addr}"
    if isinstance(a, Try):
        return f"try {a.res}"
    if isinstance(a, Acq):
        return f"acq {a.res}"
    if isinstance(a, Rel):
        return f"rel {a.res}"
    return "abort"


def show_trace(t: Trace) -> str:
    lines = [show_action(a) for a in t.actions]
    if t.diverges:
        lines.append("#diverges")
    return "\n".join(lines)


def parse_action_from(ts: TokenStream) -> Action:
    if ts.accept("delta"):
        return DELTA
    if ts.accept("abort"):
        return ABORT
    for word, ctor in (("try", Try), ("acq", Acq), ("rel", Rel)):
        if ts.at(word) and ts.peek(1).kind == "name":
            ts.next()
            return ctor(ts.name())
    if ts.accept("disp"):
        return Disp(ts.integer())
    if ts.accept("alloc"):
        addr = ts.integer()
        ts.expect("[")
        vals = []
        if not ts.at("]"):
            vals.append(ts.integer())
            while ts.accept(","):
                vals.append(ts.integer())
        ts.expect("]")
        return Alloc(addr, tuple(vals))
    if ts.accept("["):
        addr = ts.integer()
        ts.expect("]")
        if ts.accept(":="):
            return HeapWrite(addr, ts.integer())
        ts.expect("=")
        return HeapRead(addr, ts.integer())
    name = ts.name()
    if ts.accept(":="):
        return Write(name, ts.integer())
    ts.expect("=")
    return Read(name, ts.integer())


def parse_trace(text: str) -> Trace:
    """Parse the line-oriented trace dump format (``#diverges`` marks a cut)."""
    acts, diverges = [], False
    for raw in text.splitlines():
        line = raw.split("//")[0].strip()
        if not line:
            continue
        if line == "#diverges":
            diverges = True
            continue
        ts = TokenStream(line)
        acts.append(parse_action_from(ts))
        ts.done()
    return Trace(tuple(acts), diverges)


def iter_subcommands(k: Command) -> Iterator[Command]:
    yield k
    for f in getattr(k, "__dataclass_fields__", {}):
        v = getattr(k, f)
        if isinstance(v, (Skip, Assign, Lookup, Update, Cons, Dispose, Seq, If,
                          While, Resource, WithWhen, Par)):
            yield from iter_subcommands(v)


def int_literals(k: Command) -> list:
    """All integer literals occurring in expressions of ``k``."""
    out = []

    def ex(e):
        if isinstance(e, IntLit):
            out.append(e.value)
        elif isinstance(e, Add):
            ex(e.left)
            ex(e.right)
        elif isinstance(e, ListExpr):
            for i in e.items:
                ex(i)

    for c in iter_subcommands(k):
        for f in getattr(c, "__dataclass_fields__", {}):
            v = getattr(c, f)
            if isinstance(v, (IntLit, Add, ListExpr)):
                ex(v)
    return out
