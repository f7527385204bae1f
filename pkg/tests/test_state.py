import pytest
from hypothesis import given

import strategies as S
from cmlbench.formulas import parse_context
from cmlbench.heaps import (
    FrozenMap, HeapError, all_heaps, all_stores, compatible, enumerate_splits, heap,
    heap_disjoint, heap_join, heap_minus, heap_remove, is_subheap, subheaps,
)
from cmlbench.state import (
    LocalState, is_local_state, local_state_problems, parse_state, show_state, with_resource_flags,
)
from cmlbench.syntax import ParseError


# -- heap algebra ------------------------------------------------------------

@given(S.heaps, S.heaps)
def test_join_commutes_when_disjoint(a, b):
    if heap_disjoint(a, b):
        assert heap_join(a, b) == heap_join(b, a)
        assert is_subheap(FrozenMap(a), heap_join(a, b))
    else:
        with pytest.raises(HeapError):
            heap_join(a, b)


@given(S.heaps, S.heaps, S.heaps)
def test_join_associates(a, b, c):
    if heap_disjoint(a, b) and heap_disjoint(a, c) and heap_disjoint(b, c):
        assert heap_join(heap_join(a, b), c) == heap_join(a, heap_join(b, c))


@given(S.heaps)
def test_splits_partition_the_heap(h):
    splits = list(enumerate_splits(h))
    assert len(splits) == 2 ** len(h)
    for a, b in splits:
        assert heap_disjoint(a, b) and heap_join(a, b) == FrozenMap(h)
        assert heap_minus(h, a) == b
    assert sorted(map(repr, subheaps(h))) == sorted(repr(a) for a, _ in splits)


@given(S.heaps, S.heaps)
def test_compatible_means_agreement_on_overlap(a, b):
    assert compatible(a, b) == all(a[k] == b[k] for k in set(a) & set(b))


def test_heap_helpers():
    assert heap_remove({1: 2, 3: 4}, 1) == FrozenMap({3: 4})
    with pytest.raises(HeapError):
        heap({0: 1})
    assert len(list(all_heaps((1, 2), (0, 1, 2)))) == 16
    assert len(list(all_heaps((1, 2, 3), (0, 1), max_cells=1))) == 7
    assert len(list(all_stores(("x", "y"), (0, 1, 2)))) == 9


def test_frozen_map_is_hashable_value():
    a, b = FrozenMap({1: 2, 3: 4}), FrozenMap({3: 4, 1: 2})
    assert a == b and hash(a) == hash(b)
    assert a.set(1, 5) == FrozenMap({1: 5, 3: 4}) and a[1] == 2
    assert a.without([1]) == FrozenMap({3: 4})


# -- local states ------------------------------------------------------------

CTX = parse_context("r(x): 1 |-> x; q(y): y = 0 /\\ emp")


def test_local_state_well_formed():
    ls = with_resource_flags(LocalState(FrozenMap({"x": 3, "y": 0}), H=FrozenMap({1: 3})), CTX)
    assert ls.s["r"] == 1 and ls.s["q"] == 1
    assert is_local_state(ls, CTX)


@pytest.mark.parametrize("text,problem", [
    ("store{x=3, y=0, r=1, q=1} heap1{1:3} H{1:3}", "h1 and H overlap"),
    ("store{x=3, y=0, r=1, q=1} heap1{2:0} heap2{2:0} H{1:3}", "h1 and h2 overlap"),
    ("store{x=3, y=0, r=0, q=1} H{1:3}", "store maps resource r"),
    ("store{x=3, y=0, r=1, q=1} H{1:2}", "H does not satisfy"),
    ("store{x=3, y=0, r=0, q=1} N1{r} N2{r}", "N1 and N2 share"),
    ("store{y=0, r=1, q=1} H{1:3}", "unbound"),
])
def test_local_state_problems(text, problem):
    probs = local_state_problems(parse_state(text), CTX)
    assert any(problem in m for m in probs), probs


def test_held_resource_leaves_invariant_out_of_H():
    ls = parse_state("store{x=3, y=0, r=0, q=1} heap1{1:3} N1{r}")
    assert is_local_state(ls, CTX)
    assert ls.swapped() == parse_state("store{x=3, y=0, r=0, q=1} heap2{1:3} N2{r}")
    assert ls.full_heap() == FrozenMap({1: 3})


def test_state_roundtrip():
    ls = parse_state("store{x=3, y=0} heap1{1:3, 2:0} heap2{4:1} H{5:5} N1{r} N2{q}")
    assert parse_state(show_state(ls)) == ls
    assert parse_state("") == LocalState()


@pytest.mark.parametrize("bad", ["store{x}", "heap1{0:1}", "store{} store{}", "heap1{1:2", "N1{1}"])
def test_state_parse_errors(bad):
    with pytest.raises(ParseError):
        parse_state(bad)
