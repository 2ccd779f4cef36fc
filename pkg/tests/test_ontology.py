import random

import pytest
from hypothesis import given, strategies as st

from treedst.ontology import OntologyError, load_ontology, ontology_from_dict, random_system_act, random_user_state, validate
from treedst.tree import parse_dotted

ONT = load_ontology()


def kinds(tree):
    return [v.kind for v in validate(tree, ONT)]


def test_desk_ontology_has_ten_domains():
    assert len(ONT.domains) == 10
    assert "flight" in ONT.domains and "calendarEvent" in ONT.domains


def test_valid_state_passes():
    t = parse_dotted("user.flight.book.object.equals.source.equals.location.equals.London")
    assert validate(t, ONT) == []


def test_unknown_domain_flagged():
    assert kinds(parse_dotted("user.spaceship.book")) != []


def test_value_outside_vocab_flagged():
    t = parse_dotted("user.flight.book.object.equals.source.equals.location.equals.Atlantis")
    assert "value_outside_vocab" in kinds(t)


def test_bad_config_rejected():
    with pytest.raises(OntologyError):
        ontology_from_dict({"version": "x", "domains": {"a": {"verbs": ["find"], "slots": {"s": {"include": "missing"}}}}})


@given(st.integers(0, 2**32 - 1))
def test_random_trees_are_valid(seed):
    rng = random.Random(seed)
    assert validate(random_user_state(ONT, rng), ONT) == []
    assert validate(random_system_act(ONT, rng), ONT) == []
