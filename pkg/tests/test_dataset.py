import json
import random

import pytest
from hypothesis import given, strategies as st

from treedst.dataset import (
    COREF,
    DEFAULT_RATIOS,
    PAPER_SPLIT,
    Corpus,
    CorpusError,
    HistoryStack,
    compute_stats,
    derive_flat_corpus,
    flat_pairs,
    flat_state_tree,
    is_flat_tree,
    iter_corpus,
    read_corpus,
    read_header,
    split_corpus,
    tag_phenomena,
    tag_phenomena_from_trees,
    write_corpus,
)
from treedst.ontology import load_ontology, random_user_state
from treedst.simulator import simulate_conversation
from treedst.simulator.simulate import Conversation
from treedst.tree import flatten, tree_equal

ONT = load_ontology()


def fake_corpus(n):
    return Corpus([Conversation(f"c{i}", [], "success") for i in range(n)])


def test_paper_split_sizes_reproduced():
    parts = split_corpus(fake_corpus(sum(PAPER_SPLIT)), DEFAULT_RATIOS, seed=0)
    assert tuple(len(p) for p in parts) == PAPER_SPLIT


def test_split_is_partition_and_seeded():
    c = fake_corpus(50)
    a = split_corpus(c, seed=3)
    b = split_corpus(c, seed=3)
    ids = [x.id for p in a for x in p]
    assert sorted(ids) == sorted(x.id for x in c)
    assert [[x.id for x in p] for p in a] == [[x.id for x in p] for p in b]


def test_duplicate_ids_rejected():
    with pytest.raises(CorpusError):
        Corpus([Conversation("a", [], "success"), Conversation("a", [], "success")])


def test_corpus_round_trip(tmp_path, small_corpus):
    path = tmp_path / "c.jsonl"
    write_corpus(small_corpus, path, {"note": "x"})
    assert read_header(path)["note"] == "x"
    back = read_corpus(path)
    assert [c.to_dict() for c in back] == [c.to_dict() for c in small_corpus]
    assert sum(1 for _ in iter_corpus(path)) == len(small_corpus)


def test_bad_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"type": "header", "meta": {}}\n{not json}\n')
    with pytest.raises(CorpusError, match=":2"):
        read_corpus(path)


@given(st.integers(0, 2**32 - 1))
def test_flat_view_is_idempotent(seed):
    t = random_user_state(ONT, random.Random(seed))
    f = flat_state_tree(t)
    assert is_flat_tree(f) or not f.children
    assert flat_pairs(f) == flatten(t) == flat_pairs(t)
    assert flat_state_tree(f) == f


def test_flat_corpus_keeps_turns(small_corpus):
    flat = derive_flat_corpus(small_corpus)
    for a, b in zip(small_corpus, flat):
        assert len(a.turns) == len(b.turns)
        for ta, tb in zip(a.turns, b.turns):
            assert flat_pairs(tb.user_state) == flat_pairs(ta.user_state)
            assert tb.tags == ta.tags


def test_tree_only_tags_match_trace(grammar):
    for s in range(300):
        c = simulate_conversation(grammar, s)
        assert tag_phenomena(c) == tag_phenomena_from_trees(c)


def test_coref_tag_occurs(small_corpus):
    assert any(COREF in t.tags for c in small_corpus for t in c.turns)


def test_history_stack_replays_simulator_stack(grammar):
    for s in range(300):
        c = simulate_conversation(grammar, s)
        h = HistoryStack()
        for t in c.turns:
            h.observe(t.user_state)
            h.finish(t.system_finishing is not None)
            gold = [c.turns[j].user_state for j in t.stack_after]
            assert len(gold) == len(h.frames)
            assert all(tree_equal(a, b) for a, b in zip(gold, h.frames))


def test_stats(small_corpus):
    rep = compute_stats(small_corpus)
    assert rep.dialogs == len(small_corpus)
    assert rep.turns == sum(len(c.turns) for c in small_corpus)
    assert "# dialogs" in rep.table()
    json.dumps(rep.to_dict())
