import random

import pytest
from hypothesis import given, strategies as st

from treedst.ontology import load_ontology, random_tree, random_user_state
from treedst.tree import (
    CLOSE,
    EMPTY,
    OPEN,
    ROOT_PARENT,
    SAME,
    DialogTree,
    NodeKind,
    NodeParentForm,
    SlotValuePair,
    TreeError,
    canonicalize,
    delinearize,
    dumps,
    empty_state,
    flatten,
    from_json,
    from_node_parent_form,
    intents,
    linearize,
    merge_states,
    parse_dotted,
    path_to,
    render_dotted,
    split_merged,
    subtree_at,
    to_json,
    to_node_parent_form,
    tree_equal,
)

ONT = load_ontology()
seeds = st.integers(0, 2**32 - 1)

FLIGHT = """user.flight.book.object.equals
  .source.equals.location.equals.London
  .departureDateTime.equals
    .date.equals.definedValue.equals
      .Tomorrow
    .time.equals.hour.equals.5"""


def tree_of(seed):
    return random_tree(ONT, random.Random(seed))


def test_kinds_inferred_from_structure():
    t = parse_dotted(FLIGHT)
    assert t.kind is NodeKind.ROOT_USER
    dom = t.children[0]
    assert (dom.label, dom.kind) == ("flight", NodeKind.DOMAIN)
    assert dom.children[0].kind is NodeKind.VERB
    kinds = {n.label: n.kind for n in t.nodes()}
    assert kinds["equals"] is NodeKind.OPERATOR
    assert kinds["London"] is NodeKind.VALUE
    assert kinds["source"] is NodeKind.SLOT


def test_open_values_keep_spaces_and_escapes():
    t = parse_dotted(r"user.note.create.object.equals.content.equals.[pick up a\]b]")
    leaf = list(t.nodes())[-1]
    assert leaf.kind is NodeKind.OPEN_VALUE
    assert leaf.label == "pick up a]b"
    assert tree_equal(parse_dotted(render_dotted(t)), t)


def test_bad_dotted_text_raises():
    with pytest.raises(TreeError):
        parse_dotted("user..flight")
    with pytest.raises(TreeError):
        parse_dotted("")


def test_linearize_pairs_brackets():
    t = parse_dotted("user.taxi.book")
    assert linearize(t) == ["user", OPEN, "taxi", OPEN, "book", CLOSE, CLOSE]


def test_vanilla_length_law_on_example():
    t = parse_dotted(FLIGHT)
    assert len(linearize(t)) == t.node_count() + 2 * t.internal_count()


def test_delinearize_repairs_unclosed():
    d = delinearize(["user", OPEN, "taxi", OPEN, "book"])
    assert d.repaired
    assert tree_equal(d.tree, parse_dotted("user.taxi.book"))


def test_delinearize_total_on_garbage():
    for toks in ([], [CLOSE, CLOSE], [OPEN], ["a", "b", "c"]):
        d = delinearize(toks)
        assert isinstance(d.tree, DialogTree)
        assert d.repaired or toks == ["a"]


def test_node_parent_form_of_example():
    t = parse_dotted("user.taxi.book")
    npf = to_node_parent_form(t)
    assert npf.nodes == ("user", "taxi", "book")
    assert npf.parents == (ROOT_PARENT, 0, 1)


def test_node_parent_form_rejects_forward_parent():
    with pytest.raises(TreeError):
        NodeParentForm(("user", "taxi"), (ROOT_PARENT, 1))


def test_flatten_worked_example():
    assert flatten(parse_dotted(FLIGHT)) == {
        SlotValuePair("flight+object+source+location", "London"),
        SlotValuePair("flight+object+departureDateTime+date+definedValue", "Tomorrow"),
        SlotValuePair("flight+object+departureDateTime+time+hour", "5"),
    }


def test_flatten_needs_user_state():
    with pytest.raises(TreeError):
        flatten(parse_dotted("system.prompt.taxi.book.object.equals.time"))


def test_tree_equal_ignores_sibling_order():
    a = parse_dotted("user.taxi.book.object.equals\n  .time.equals.hour.equals.5\n  .destination.equals.location.equals.Rome")
    b = parse_dotted("user.taxi.book.object.equals\n  .destination.equals.location.equals.Rome\n  .time.equals.hour.equals.5")
    assert tree_equal(a, b)
    assert not tree_equal(a, parse_dotted("user.taxi.book"))


def test_merge_states_markers():
    s = parse_dotted("user.taxi.book")
    m = merge_states(s, s)
    assert [n.label for n in m.nodes()][-1] == SAME
    m2 = merge_states(empty_state(), empty_state())
    assert [n.label for n in m2.nodes()][2:] == [EMPTY, "<stacktop>", SAME]
    m3 = merge_states(s, empty_state())
    assert [n.label for n in m3.nodes()][-1] == EMPTY
    other = parse_dotted("user.hotel.book")
    prev, top = split_merged(merge_states(s, other))
    assert tree_equal(prev, s) and tree_equal(top, other)


def test_intents():
    t = parse_dotted("user\n  .phone.call\n  .message.send")
    assert intents(t) == {("phone", "call"), ("message", "send")}


@given(seeds)
def test_dotted_round_trip(seed):
    t = tree_of(seed)
    assert parse_dotted(render_dotted(t)) == t


@given(seeds)
def test_linearize_round_trip(seed):
    t = tree_of(seed)
    d = delinearize(linearize(t))
    assert not d.repaired
    assert d.tree == t


@given(seeds)
def test_node_parent_round_trip(seed):
    t = tree_of(seed)
    npf = to_node_parent_form(t)
    assert len(npf.nodes) == t.node_count()
    assert from_node_parent_form(npf) == t


@given(seeds)
def test_json_round_trip(seed):
    t = tree_of(seed)
    assert from_json(to_json(t)) == t
    assert isinstance(dumps(t), str)


@given(seeds)
def test_canonicalize_idempotent_and_equal(seed):
    t = tree_of(seed)
    c = canonicalize(t)
    assert canonicalize(c) == c
    assert tree_equal(c, t)


@given(seeds, st.integers(0, 200))
def test_path_addresses_resolve(seed, k):
    t = tree_of(seed)
    idx = k % t.node_count()
    target = list(t.nodes())[idx]
    assert subtree_at(t, path_to(t, idx)) == target


@given(seeds)
def test_flatten_values_are_leaves(seed):
    t = random_user_state(ONT, random.Random(seed))
    leaves = {n.label for n in t.nodes() if n.kind.is_value}
    assert {p.value for p in flatten(t)} == leaves
