import random
from itertools import product

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gen
import props
from cmlbench.cml import (
    FREE, Lin, Pattern, check_s2m_transfer, check_validity, csl_valid, h2_mode_for,
    initial_states, match_config, parse_assertion, parse_triple, s2m, show_assertion, solvable,
    triple_problems,
)
from cmlbench.config import Limits
from cmlbench.formulas import parse_formula
from cmlbench.heaps import EMPTY, FrozenMap
from cmlbench.opsem import ABORTED, Next, Semantics
from cmlbench.state import LocalState, is_local_state
from cmlbench.syntax import parse_expr
from oracles import match_oracle

IDS = ("x", "y", "z")


# -- linear store patterns ---------------------------------------------------

def test_lin_from_expr_and_eval():
    lin = Lin.from_expr(parse_expr("x+x+3+y"))
    assert lin.eval({"x": 2, "y": 1}) == 8
    assert lin.vars == {"x", "y"}
    assert Lin.from_expr(parse_expr(lin.show())) == lin
    assert lin.subst({"x": 1}).eval({"y": 0}) == 5
    assert Lin.var("a").scale(3).eval({"a": 2}) == 6


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(-2, 2), st.integers(-2, 2), st.integers(-3, 3),
                          st.integers(-4, 4)), min_size=1, max_size=3))
def test_solvable_matches_bruteforce(rows):
    eqs = [((Lin.var("u").scale(a) + Lin.var("v").scale(b) + Lin.of(c)), t) for a, b, c, t in rows]
    # With these coefficients any solution set contains a point within 30 of the origin.
    want = any(all(a * u + b * v + c == t for a, b, c, t in rows)
               for u, v in product(range(-30, 31), repeat=2))
    assert solvable(eqs) == want


# -- matching against a brute-force search -----------------------------------

def _random_pattern(rng):
    X = gen.subset(rng, ("u", "v"))
    choices = [Lin.var("u"), Lin.var("v"), Lin.of(rng.randint(0, 2)),
               Lin.var("u") + Lin.of(1), Lin.var("u").scale(2), Lin.var("u") + Lin.var("v")]
    s = FrozenMap({i: rng.choice(choices) for i in IDS if rng.random() < 0.8})
    h1 = FREE if rng.random() < 0.5 else gen.heap(rng, (1, 2), (0, 1))
    N1 = FREE if rng.random() < 0.5 else gen.subset(rng, ("r",))
    p = gen.formula(rng, IDS, depth=1, lit=1)
    return Pattern(frozenset(X), None, s, h1, EMPTY, EMPTY, N1, EMPTY, p)


def _random_state(rng):
    return LocalState(gen.store(rng, IDS, (0, 1, 2)), gen.heap(rng, (1, 2), (0, 1)),
                      N1=gen.subset(rng, ("r",)))


def test_matching_agrees_with_oracle():
    rng = random.Random(17)
    positives = 0
    for _ in range(1500):
        pat, ls = _random_pattern(rng), _random_state(rng)
        if rng.random() < 0.5 and pat.h1 is not FREE:
            pat = pat.replace(h1=ls.h1)
        B = gen.subset(rng, IDS)
        tau = {v: rng.randint(0, 2) for v in pat.free_logical()}
        got = match_config(ls, pat, B, tau)
        assert got == match_oracle(ls, pat, B, tau, 8), (pat, ls, B, tau)
        positives += got
    assert positives > 100


@settings(max_examples=300)
@given(st.integers(0, 2**32))
def test_matching_monotone_in_key_set(seed):
    rng = random.Random(seed)
    pat, ls = _random_pattern(rng), _random_state(rng)
    B = gen.subset(rng, IDS)
    tau = {v: rng.randint(0, 2) for v in pat.free_logical()}
    if match_config(ls, pat, B, tau):
        for sub in (gen.subset(rng, B), frozenset()):
            assert match_config(ls, pat, sub, tau)


@settings(max_examples=300)
@given(st.integers(0, 2**32))
def test_matching_ignores_valuation_of_bound_variables(seed):
    rng = random.Random(seed)
    pat, ls = _random_pattern(rng), _random_state(rng)
    B = gen.subset(rng, IDS)
    tau = {v: rng.randint(0, 2) for v in pat.free_logical()}
    extra = {v: rng.randint(-3, 3) for v in pat.X}
    assert match_config(ls, pat, B, tau) == match_config(ls, pat, B, {**tau, **extra})


def test_matching_requires_valuation_of_free_variables():
    pat = Pattern(frozenset(), None, FrozenMap({"x": Lin.var("u")}))
    with pytest.raises(ValueError):
        match_config(LocalState(FrozenMap({"x": 1})), pat, {"x"}, {})


def test_matching_examples():
    pat = Pattern(frozenset({"u"}), None, FrozenMap({"x": Lin.var("u"), "y": Lin.var("u") + Lin.of(1)}),
                  p=parse_formula("x = 1 /\\ emp"))
    assert match_config(LocalState(FrozenMap({"x": 1, "y": 2})), pat, {"x", "y"})
    assert not match_config(LocalState(FrozenMap({"x": 1, "y": 3})), pat, {"x", "y"})
    assert match_config(LocalState(FrozenMap({"x": 1, "y": 3})), pat, {"x"})
    assert not match_config(LocalState(FrozenMap({"x": 1}), FrozenMap({1: 0})), pat, {"x"})


# -- validity of the worked examples -------------------------------------------

@pytest.mark.parametrize("name,status", [
    ("region_read", "Valid"),
    ("region_write_back", "Valid"),
    ("region_sequence", "Valid"),
    ("racy_pair", "Invalid"),
    ("ghost_counter", "Valid"),
])
def test_golden_verdicts(golden, small, name, status):
    a = parse_assertion((golden / f"{name}.cml").read_text())
    v = check_validity(a, small)
    assert v.status == status, v.reason
    assert v.checked > 0


def _replay(a, limits, w):
    sem = Semantics(a.ctx, a.A, a.B, limits.env_budget(h2_mode_for(a.ctx, a.pre.k)))
    return sem.run_trace(w.trace, w.initial)


def test_racy_pair_witness_replays(golden, small):
    a = parse_assertion((golden / "racy_pair.cml").read_text())
    v = check_validity(a, small)
    assert v.witness.outcome is ABORTED
    assert is_local_state(v.witness.initial, a.ctx)
    assert ABORTED in _replay(a, small, v.witness)


def test_postcondition_violation_witness_replays(small):
    a = parse_assertion("rely {x} key {x} pre { exists v . k=<x:=x+1> s={x:v} h1={} N1={} /\\ emp } "
                        "post { exists v . k=<.> s={x:v} h1={} N1={} /\\ x = 0 /\\ emp }")
    v = check_validity(a, small)
    assert v.status == "Invalid" and "postcondition" in v.reason
    final = v.witness.outcome
    assert Next(final) in _replay(a, small, v.witness)
    assert final.s["x"] == v.witness.initial.s["x"] + 1


@pytest.mark.parametrize("name", ["racy_pair", "region_read", "ghost_counter"])
def test_parallel_workers_give_identical_verdicts(golden, small, name):
    a = parse_assertion((golden / f"{name}.cml").read_text())
    one = check_validity(a, small)
    two = check_validity(a, Limits(**{**small.__dict__, "jobs": 2}))
    assert (one.status, one.reason, one.checked) == (two.status, two.reason, two.checked)
    assert one.witness == two.witness


def test_unsupported_judgments(small):
    a = parse_assertion("rely {x} pre { k=<x:=1> s={} /\\ emp } post { k=<x:=1> s={} /\\ emp }")
    assert check_validity(a, small).status == "Unsupported"
    a = parse_assertion("rely {} pre { k=<x:=1> s={} /\\ x = 0 } post { k=<.> s={} /\\ emp }")
    v = check_validity(a, small)
    assert v.status == "Unsupported" and "rely" in v.reason


def test_initial_states_are_local_and_match(golden, small):
    a = parse_assertion((golden / "region_read.cml").read_text())
    states = list(initial_states(a, small))
    assert states
    for ls, taus in states:
        assert is_local_state(ls, a.ctx)
        assert all(match_config(ls, a.pre, a.B, t) for t in taus)
    assert states == list(initial_states(a, small))


def test_assertion_roundtrip(golden):
    for name in ("region_read", "region_write_back", "region_sequence", "racy_pair",
                 "ghost_counter"):
        a = parse_assertion((golden / f"{name}.cml").read_text())
        assert parse_assertion(show_assertion(a)) == a


def test_environment_heap_mode():
    from cmlbench.formulas import parse_context
    from cmlbench.syntax import parse_program
    assert h2_mode_for(parse_context("r(x): x = 0 /\\ emp"), parse_program("x:=1")) == "none"
    assert h2_mode_for(parse_context(""), parse_program("x:=cons(1)")) == "domain"
    assert h2_mode_for(parse_context("r(x): 1 |-> x"), parse_program("x:=1")) == "full"


# -- triples and their embedding ----------------------------------------------

S2M_LIMITS = Limits(value=1, addr=2, loop=1, wait=1, env=1)


def test_embedding_shape():
    t = parse_triple("rely {x} pre { x = 0 /\\ emp } program { x:=x+1 } post { x = 1 /\\ emp }")
    a = s2m(t)
    assert a.B == frozenset() and a.pre.h1 is FREE and a.post.N1 is FREE
    assert a.post.k is None and a.pre.k == t.k
    assert set(a.pre.s) == {"x"} and a.pre.X == {"x_v"}


def test_embedding_transfers_validity_on_random_triples():
    rng = random.Random(3)
    valid = 0
    for _ in range(80):
        t = props.random_triple(rng)
        assert check_s2m_transfer(t, S2M_LIMITS), t
        valid += csl_valid(t, S2M_LIMITS)
    assert valid >= 10


@pytest.mark.parametrize("text,well_formed,expected", [
    ("rely {x} pre { x = 0 /\\ emp } program { x:=x+1 } post { x = 1 /\\ emp }", True, True),
    ("rely {x} pre { emp } program { x:=x+1 } post { x = 1 /\\ emp }", True, False),
    ("rely {x} pre { 1 |-> x } program { dispose 1 } post { emp }", True, True),
    ("rely {x} pre { emp } program { dispose 1 } post { emp }", True, False),
    ("context { r(w): w = 0 /\\ emp } rely {x} pre { emp } "
     "program { with r when true do (w:=1; w:=0) } post { emp }", True, True),
    # y is outside the rely set, so these are not judgments.
    ("rely {x} pre { 1 |-> 0 * 2 |-> y } program { x:=1 } post { emp }", False, False),
    ("rely {x} pre { emp } program { y:=1 } post { emp }", False, False),
])
def test_triple_validity_examples(text, well_formed, expected):
    t = parse_triple(text)
    assert (not triple_problems(t)) == well_formed
    assert csl_valid(t, S2M_LIMITS) == expected
    if expected:
        assert check_validity(s2m(t), S2M_LIMITS).valid
