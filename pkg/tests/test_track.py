import pytest

from treedst.dataset import annotate
from treedst.model.data import conversation_examples
from treedst.model.ted import Decoded
from treedst.model.track import track_dialog
from treedst.tree import empty_state, intents, tree_equal


class Lookup:
    """A tracker that knows the gold state for every gold-history input."""

    def __init__(self, convs, corrupt_turn=None):
        self.table = {}
        for c in convs:
            for ex in conversation_examples(c):
                self.table[ex.inp] = ex.target
        self.corrupt_turn = corrupt_turn

    def decode(self, inp):
        tree = self.table.get(inp, empty_state())
        return Decoded(tree, [], 0, False, False)


def test_oracle_with_memorizing_model_is_exact(small_corpus):
    model = Lookup(small_corpus)
    for conv in small_corpus:
        assert all(t.correct for t in track_dialog(model, conv, "oracle"))


def test_perfect_predictions_reproduce_gold_stack(small_corpus):
    model = Lookup(small_corpus)
    resumes = 0
    for conv in small_corpus:
        tracked = track_dialog(model, conv, "predicted")
        for i, (t, gold) in enumerate(zip(tracked, conv.turns)):
            want = [conv.turns[j].user_state for j in gold.stack_after]
            assert len(t.stack) == len(want)
            assert all(tree_equal(a, b) for a, b in zip(t.stack, want))
            if gold.update_kind == "resume":
                resumes += 1
                # after the previous turn the earlier goal is exposed on top
                exposed = tracked[i - 1].stack[-1]
                assert intents(exposed) == intents(gold.user_state)
                assert not tree_equal(exposed, conv.turns[i - 1].user_state)
    assert resumes > 0


def test_errors_propagate_only_in_predicted_mode(small_corpus):
    model = Lookup(small_corpus)
    long = next(c for c in small_corpus if len(c.turns) >= 4)
    # forget the first turn's answer: predicted history is then off for later turns
    del model.table[conversation_examples(long)[0].inp]
    pred = track_dialog(model, long, "predicted")
    orac = track_dialog(model, long, "oracle")
    assert sum(t.correct for t in pred) < sum(t.correct for t in orac) == len(long.turns) - 1


def test_bad_mode():
    with pytest.raises(ValueError):
        track_dialog(None, None, "psychic")
