"""Turn-by-turn tracking over whole conversations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from ..dataset import HistoryStack
from ..simulator.simulate import Conversation
from ..tree import DialogTree, canonicalize, tree_equal
from .data import TurnInput, make_input
from .train import Model

HISTORY_MODES = ("predicted", "oracle")


@dataclass
class TrackedTurn:
    conv_id: str
    turn: int
    inp: TurnInput
    predicted: DialogTree
    gold: DialogTree
    steps: int
    truncated: bool
    # goal frames (oldest first) after this turn, as seen by the tracker
    stack: list[DialogTree]

    @property
    def correct(self) -> bool:
        return tree_equal(self.predicted, self.gold)


def track_dialog(model: Model, conv: Conversation, history: str = "predicted") -> list[TrackedTurn]:
    """Predict every user state of ``conv``.

    System acts and finishing flags are observed; the previous state and the
    goal stack are rebuilt from predictions (``predicted``) or gold states
    (``oracle``).
    """
    if history not in HISTORY_MODES:
        raise ValueError(f"history mode must be one of {HISTORY_MODES}, got {history!r}")
    out = []
    stack = HistoryStack()
    prev_state: DialogTree | None = None
    prev_act: DialogTree | None = None
    for i, t in enumerate(conv.turns):
        inp = make_input(t.user_utterance, prev_act, prev_state, stack.top())
        dec = model.decode(inp)
        pred = canonicalize(dec.tree)
        kept = pred if history == "predicted" else t.user_state
        stack.observe(kept)
        stack.finish(t.system_finishing is not None)
        out.append(TrackedTurn(conv.id, i, inp, pred, canonicalize(t.user_state), dec.steps, dec.truncated, list(stack.frames)))
        prev_state, prev_act = kept, t.system_act
    return out


def track_corpus(model: Model, convs: Iterable[Conversation], history: str = "predicted") -> list[TrackedTurn]:
    out: list[TrackedTurn] = []
    for c in convs:
        out.extend(track_dialog(model, c, history))
    return out
