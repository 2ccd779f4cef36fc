import json
import random
from collections import Counter

import pytest

from treedst.simulator import (
    FlowFilter,
    GrammarError,
    TemplateError,
    filter_flow,
    grammar_from_dict,
    match_pattern,
    parse_pattern,
    render_template,
    simulate_conversation,
)
from treedst.simulator.desk import build_desk_grammar
from treedst.simulator.grammar import DESK_GRAMMAR, weighted_index
from treedst.simulator.simulate import Conversation
from treedst.ontology import validate
from treedst.tree import parse_dotted, tree_equal
from importlib import resources


def test_shipped_grammar_matches_builder():
    shipped = json.loads(resources.files("treedst.data").joinpath(DESK_GRAMMAR).read_text())
    assert shipped == json.loads(json.dumps(build_desk_grammar()))


def test_grammar_sizes(grammar):
    kinds = Counter(r.kind for r in grammar.update)
    assert len(grammar.response) == 104
    assert sum(len(v) for v in grammar.ptsg.values()) == 157
    assert kinds == {"continue": 133, "resume": 133, "new-goal": 21}


def test_pattern_capture_and_absence():
    t = parse_dotted("user.taxi.book.object.equals.destination.equals.location.equals.Rome")
    p = parse_pattern("user.taxi.book.object.equals.?d=destination")
    [b] = match_pattern(p, t)
    assert b["d"].label == "destination"
    assert match_pattern(parse_pattern("user.taxi.book.object.equals.-destination"), t) == []
    assert match_pattern(parse_pattern("user.taxi.book.object.equals.-time"), t) != []


def test_render_template():
    assert render_template("to {city} now", {"city": "Rome"}) == "to Rome now"
    with pytest.raises(TemplateError):
        render_template("to {city}", {})


def test_weighted_index_proportions():
    rng = random.Random(0)
    c = Counter(weighted_index([1.0, 3.0], rng) for _ in range(20000))
    assert abs(c[1] / 20000 - 0.75) < 0.02


def test_duplicate_rule_ids_rejected(grammar):
    cfg = json.loads(json.dumps(build_desk_grammar()))
    cfg["response"].append(dict(cfg["response"][0]))
    with pytest.raises(GrammarError):
        grammar_from_dict(cfg)


def test_same_seed_same_conversation(grammar):
    a = simulate_conversation(grammar, 11)
    b = simulate_conversation(grammar, 11)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_conversation_round_trip(grammar):
    c = simulate_conversation(grammar, 3)
    again = Conversation.from_dict(json.loads(json.dumps(c.to_dict())))
    assert again.to_dict() == c.to_dict()


def test_turn_cap_forces_finishing(grammar):
    for s in range(30):
        c = simulate_conversation(grammar, s, max_turns=2)
        assert len(c.turns) <= 2
        assert c.turns[-1].system_finishing is not None


def test_first_turn_is_new_goal(small_corpus):
    for c in small_corpus:
        assert c.turns[0].update_kind == "new-goal"
        assert c.turns[0].update_source is None


def test_states_are_ontology_valid(small_corpus, ont):
    for c in small_corpus:
        for t in c.turns:
            assert validate(t.user_state, ont) == []
            assert validate(t.system_act, ont) == []


def test_resume_exposes_earlier_goal(small_corpus):
    seen = 0
    for c in small_corpus:
        for i, t in enumerate(c.turns):
            if t.update_kind == "resume":
                seen += 1
                # the resumed frame is the one left on the stack by the previous turn
                prev_stack = c.turns[i - 1].stack_after
                assert prev_stack and prev_stack[-1] == t.update_source
    assert seen > 0


def test_stack_after_is_increasing_turns(small_corpus):
    for c in small_corpus:
        for i, t in enumerate(c.turns):
            assert t.stack_after == sorted(t.stack_after)
            assert all(j <= i for j in t.stack_after)


def test_flow_filter():
    g_state = parse_dotted("user.taxi.book")
    assert not filter_flow(Conversation("x", [], "failure"))
    assert FlowFilter().max_identical_acts == 3
    assert tree_equal(g_state, g_state)
