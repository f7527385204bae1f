import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import derivgen as D
import gen
import props
from cmlbench.cml import FREE, Assertion, Lin, Pattern, check_validity, parse_assertion
from cmlbench.config import Limits
from cmlbench.formulas import EMP, TRUE, PointsTo, Star, parse_context, parse_formula
from cmlbench.heaps import EMPTY, FrozenMap
from cmlbench.proof import (
    ARITY, RuleInstance, check_derivation, check_implication, check_rule, implication_counterexample,
    iter_nodes, parallel_choices, parse_derivation, show_derivation,
)
from cmlbench.syntax import Alloc, IntLit, ParseError, Skip, Update, parse_program

GOLDEN_DERIVATIONS = ("region_read", "region_write_back", "region_sequence", "ghost_counter")
LIM = Limits(value=2, addr=3, loop=2, wait=1, env=1)
CTX0 = parse_context("")
CTX_R = parse_context("r(z): z = 0 /\\ emp")
ENV = D.Env(CTX0, frozenset({"x", "y"}), frozenset({"x"}))
H1 = FrozenMap({1: 0})


def f(text):
    return parse_formula(text)


def cmd(text):
    return parse_program(text)


# -- the worked derivations ---------------------------------------------------

@pytest.mark.parametrize("name", GOLDEN_DERIVATIONS)
def test_golden_derivations_accepted_and_every_node_valid(golden, small, name):
    d = parse_derivation((golden / f"{name}.deriv").read_text())
    rep = check_derivation(d, small)
    assert rep.ok, rep.describe()
    assert rep.checked == len(list(iter_nodes(d)))
    for node in iter_nodes(d):
        assert check_validity(node.conclusion, small).valid, node.rule


def test_ghost_counter_derivation_concludes_the_golden_assertion(golden):
    d = parse_derivation((golden / "ghost_counter.deriv").read_text())
    goal = parse_assertion((golden / "ghost_counter.cml").read_text())
    assert d.rule == "AUXILIARY" and d.conclusion == goal
    assert d.premises[0].conclusion.pre.k == parse_program((golden / "ghost_counter_program.cml").read_text())
    assert {n.rule for n in iter_nodes(d)} >= {"ASSIGNMENT", "SEQUENCE", "CONSEQUENCE", "REGION",
                                               "PARALLEL", "RESOURCE"}


@pytest.mark.parametrize("name", GOLDEN_DERIVATIONS + ("racy_pair_parallel",))
def test_derivation_roundtrip(golden, name):
    d = parse_derivation((golden / f"{name}.deriv").read_text())
    assert parse_derivation(show_derivation(d)) == d


def test_racy_pair_rejected_for_every_rely_and_key_choice(golden, small):
    d = parse_derivation((golden / "racy_pair_parallel.deriv").read_text())
    rep = check_derivation(d, small)
    assert not rep.ok and rep.failure[1] == "PARALLEL"
    goal = parse_assertion((golden / "racy_pair.cml").read_text())
    left, right = d.premise_assertions()
    choices = parallel_choices(left, right, {"a", "t", "x"}, B=goal.B, limits=small)
    assert len(choices) == 4096
    assert all(vs for *_, vs in choices)


def test_bare_premises_are_reported_as_hypotheses(golden, small):
    d = parse_derivation((golden / "region_read.deriv").read_text())
    cut = RuleInstance(d.rule, tuple(p.conclusion for p in d.premises), d.conclusion)
    rep = check_derivation(cut, small)
    assert not rep.ok and rep.failure is None and len(rep.hypotheses) == 1
    assert "hypotheses" in rep.describe()


# -- single rules ---------------------------------------------------------------

def _assign(env, k, q, h1=H1):
    """A derivation for an assignment ending with q (ASSIGNMENT under a CONSEQUENCE)."""
    return D.derive(random.Random(0), k, env, h1, q)


def test_accepted_leaf_instances():
    d, p = _assign(ENV, cmd("x:=x+1"), f("x = 2 /\\ true"))
    assert p == f("x+1 = 2 /\\ true")
    assert check_derivation(d, LIM).ok
    skip = RuleInstance("SKIP", (), D.assertion(ENV, Skip(), H1, f("x = 0"), H1, f("x = 0")))
    assert check_rule(skip, LIM) == []
    upd = RuleInstance("UPDATE", (), D.assertion(ENV, cmd("[1]:=1"), H1, TRUE, FrozenMap({1: 1}), TRUE))
    assert check_rule(upd, LIM) == []


def _violations(rule, premises, concl, side=None, guards=True):
    return check_rule(RuleInstance(rule, tuple(premises), concl, side or {}), LIM, guards)


def test_skip_rejects_changed_formula():
    vs = _violations("SKIP", (), D.assertion(ENV, Skip(), H1, f("x = 0"), H1, f("x = 1")))
    assert any("differ" in v for v in vs)


def test_assignment_rejects_wrong_precondition():
    d, _ = _assign(ENV, cmd("x:=1"), f("x = 1"))
    leaf = d.premises[0]
    bad = leaf.conclusion.pre.replace(p=f("x = 0"))
    vs = _violations("ASSIGNMENT", (), Assertion(CTX0, ENV.A, ENV.B, bad, leaf.conclusion.post))
    assert any("q[e/i]" in v for v in vs)


def test_assignment_rejects_resource_owned_target():
    env = D.Env(CTX_R, frozenset({"x"}), frozenset(), ids=("x", "z"))
    d, _ = _assign(env, cmd("z:=1"), TRUE)
    assert any("owned" in v for v in check_rule(d.premises[0], LIM))


def test_assignment_guard_on_key_identifiers():
    d, _ = _assign(ENV, cmd("x:=y"), TRUE)
    assert any("guard" in v for v in check_rule(d.premises[0], LIM))
    assert check_rule(d.premises[0], LIM, guards=False) == []


def test_lookup_rejects_address_outside_heap():
    pre = D.pattern(ENV, EMPTY, TRUE, cmd("x:=[1]"))
    post = pre.replace(k=None, s=pre.s.set("x", Lin(0)))
    vs = _violations("LOOKUP", (), Assertion(CTX0, ENV.A, ENV.B, pre, post))
    assert any("not in the process heap" in v for v in vs)


def test_sequence_rejects_mismatched_middle():
    d1, _ = _assign(ENV, cmd("x:=1"), f("x = 1"))
    d2, _ = _assign(ENV, cmd("y:=x"), f("y = 0"))
    concl = D.assertion(ENV, cmd("x:=1; y:=x"), H1, d1.conclusion.pre.p, H1, f("y = 0"))
    vs = _violations("SEQUENCE", (d1, d2), concl)
    assert any("first postcondition differs" in v for v in vs)


def test_frame_rejects_modified_identifier():
    d, p = _assign(ENV, cmd("x:=1"), TRUE)
    R = f("x = 0 /\\ emp")
    concl = D.assertion(ENV, cmd("x:=1"), H1, Star(p, R), H1, Star(TRUE, R))
    vs = _violations("FRAME", (d,), concl, {"R": R})
    assert any("mod(k)" in v for v in vs)


def test_frame_guard_blocks_an_invalid_conclusion():
    # Framing a points-to onto an update of that cell passes every displayed
    # side condition, and the conclusion is invalid.
    k = Update(IntLit(1), IntLit(1))
    upd = RuleInstance("UPDATE", (), D.assertion(ENV, k, H1, TRUE, FrozenMap({1: 1}), TRUE))
    R = PointsTo(IntLit(1), IntLit(0))
    concl = D.assertion(ENV, k, H1, Star(TRUE, R), FrozenMap({1: 1}), Star(TRUE, R))
    assert any("guard" in v for v in _violations("FRAME", (upd,), concl, {"R": R}))
    assert _violations("FRAME", (upd,), concl, {"R": R}, guards=False) == []
    assert check_validity(concl, LIM).status == "Invalid"


def test_parallel_rejects_interfering_components():
    env = D.Env(CTX0, frozenset({"x"}), frozenset())
    d1, p1 = _assign(env, cmd("x:=1"), TRUE, EMPTY)
    d2, p2 = _assign(env, cmd("x:=2"), TRUE, EMPTY)
    concl = D.assertion(env, cmd("x:=1 || x:=2"), EMPTY, Star(p1, p2), EMPTY, Star(TRUE, TRUE))
    vs = _violations("PARALLEL", (d1, d2), concl)
    assert any("mod(k1)" in v for v in vs) and any("mod(k2)" in v for v in vs)


def test_region_requires_the_invariant_in_the_premise():
    env = D.Env(CTX_R, frozenset({"x"}), frozenset(), ids=("x", "z"))
    k = cmd("with r when true do x:=0")
    inner = D.Env(CTX0, frozenset({"x", "z"}), frozenset(), ids=("x", "z"))
    body, p = _assign(inner, k.body, f("x = 0"), EMPTY)
    concl = D.assertion(env, k, EMPTY, p, EMPTY, f("x = 0"))
    vs = _violations("REGION", (body,), concl)
    assert any("(p /\\ b) * R" in v for v in vs)


def test_consequence_rejects_non_implication():
    d, p = _assign(ENV, cmd("x:=1"), f("x = 1 /\\ true"))
    concl = D.assertion(ENV, cmd("x:=1"), H1, p, H1, f("x = 2 /\\ true"))
    vs = _violations("CONSEQUENCE", (d,), concl)
    assert any("does not imply" in v for v in vs)


def test_auxiliary_rejects_identifier_read_outside_its_own_assignments():
    env = D.Env(CTX0, frozenset({"x", "g"}), frozenset({"g"}), ids=("x", "g"))
    d, p = _assign(env, cmd("x:=g"), TRUE, EMPTY)
    outer = D.Env(CTX0, frozenset({"x"}), frozenset(), ids=("x",))
    concl = D.assertion(outer, cmd("x:=1"), EMPTY, p, EMPTY, TRUE)
    vs = _violations("AUXILIARY", (d,), concl, {"Y": frozenset({"g"})})
    assert any("not auxiliary" in v for v in vs)


def _alloc_instance(addr, h1=H1):
    pre = D.pattern(ENV, h1, TRUE, Alloc(addr, (0,)))
    post = pre.replace(k=addr, h1=h1.set(addr, 0))
    return RuleInstance("ALLOCATION", (), Assertion(CTX0, ENV.A, ENV.B, pre, post))


def test_allocation_extends_the_heap_with_fresh_cells():
    assert check_rule(_alloc_instance(2), LIM) == []
    assert any("not fresh" in v for v in check_rule(_alloc_instance(1), LIM))
    bad = _alloc_instance(2)
    post = bad.conclusion.post.replace(h1=H1)
    vs = check_rule(RuleInstance("ALLOCATION", (), replace(bad.conclusion, post=post)), LIM)
    assert any("extended by the new cells" in v for v in vs)


def _env_moves_instance(k2, env=ENV):
    h2, h2_post = FrozenMap({2: 0}), FrozenMap({2: 1})
    k1 = cmd("y:=1")
    mine, theirs = replace(env, h2=h2), replace(env, h2=H1)
    concl = Assertion(env.ctx, env.A, env.B, D.pattern(mine, H1, TRUE, k1),
                      D.pattern(replace(env, h2=h2_post), H1, TRUE, k1))
    prem = Assertion(env.ctx, env.A, env.B, D.pattern(theirs, h2, TRUE, k2), D.pattern(theirs, h2_post, TRUE))
    return RuleInstance("ENVIRONMENT-MOVES", (prem,), concl)


def test_environment_moves_accepts_a_heap_only_environment_step():
    assert check_rule(_env_moves_instance(cmd("[2]:=1")), LIM) == []


def test_environment_moves_rejects_writes_to_the_rely_and_key_sets():
    vs = check_rule(_env_moves_instance(cmd("x:=1; [2]:=1")), LIM)
    assert any("writes(k2)∩A1" in v for v in vs) and any("writes(k2)∩B1" in v for v in vs)


def test_environment_moves_requires_swapped_heaps():
    inst = _env_moves_instance(cmd("[2]:=1"))
    (prem,) = inst.premises
    prem = replace(prem, pre=prem.pre.replace(h2=EMPTY))
    vs = check_rule(RuleInstance(inst.rule, (prem,), inst.conclusion), LIM)
    assert any("swapped conclusion precondition" in v for v in vs)


def test_unknown_rule_and_arity():
    a = D.assertion(ENV, Skip(), H1, TRUE, H1, TRUE)
    assert check_rule(RuleInstance("MAGIC", (), a), LIM) == ["unknown rule MAGIC"]
    assert "takes 2" in check_rule(RuleInstance("SEQUENCE", (a,), a), LIM)[0]
    assert set(ARITY) >= {"SKIP", "PARALLEL", "REGION", "RESOURCE", "AUXILIARY", "ENVIRONMENT-MOVES"}


@pytest.mark.parametrize("bad", [
    "rule SKIP { }",
    "rule SKIP { premise { } }",
    "rule SKIP { side { Q } conclusion { } }",
    "rule",
])
def test_derivation_parse_errors(bad):
    with pytest.raises(ParseError):
        parse_derivation(bad)


# -- implication between patterns ----------------------------------------------

def _random_pattern(rng):
    s = {i: rng.choice([Lin.var("u"), Lin.var("v"), Lin.of(rng.randint(0, 1)), Lin.var("u") + Lin.of(1)])
         for i in ("x", "y") if rng.random() < 0.9}
    p = rng.choice([TRUE, EMP, f("x = 0"), f("x <= y"), f("x = 0 /\\ emp"), f("1 |-> x * true"), f("x = y")])
    h1 = rng.choice([FREE, EMPTY, FrozenMap({1: 0})])
    return Pattern(frozenset({"u", "v"}), None, FrozenMap(s), h1, p=p)


@settings(max_examples=100)
@given(st.integers(0, 2**32))
def test_implication_is_a_preorder(seed):
    rng = random.Random(seed)
    a, b, c = (_random_pattern(rng) for _ in range(3))
    B = gen.subset(rng, ("x", "y"))
    lim = Limits(value=1, addr=1)
    assert check_implication(a, a, B, lim)
    if check_implication(a, b, B, lim) and check_implication(b, c, B, lim):
        assert check_implication(a, c, B, lim)


def test_implication_counterexample_is_genuine():
    lhs = Pattern(frozenset({"u"}), None, FrozenMap({"x": Lin.var("u")}), EMPTY, p=f("x <= 1"))
    rhs = Pattern(frozenset({"u"}), None, FrozenMap({"x": Lin.var("u")}), EMPTY, p=f("x = 0"))
    s, h1, N1, tau = implication_counterexample(lhs, rhs, {"x"}, LIM)
    assert s["x"] <= 1 and s["x"] != 0
    assert check_implication(rhs, lhs, {"x"}, LIM)


# -- soundness on random derivations ----------------------------------------------

def test_random_accepted_derivations_are_valid():
    rules, failures = props.soundness_fuzz(random.Random(1), accepted=60)
    assert failures == []
    assert set(rules) >= {"SKIP", "ASSIGNMENT", "SEQUENCE", "CONDITIONAL", "LOOP", "CONSEQUENCE",
                          "FRAME", "AUXILIARY", "UPDATE"}
