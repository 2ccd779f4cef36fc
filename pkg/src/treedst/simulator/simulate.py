"""Conversation sampling over a dialog stack."""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

from ..ontology import Ontology, validate
from ..tree import DialogTree, parse_dotted, render_dotted
from .grammar import (
    Grammar,
    GrammarError,
    SystemResponse,
    UpdateResult,
    apply_update,
    failure_response,
    generate_system_act,
    sample_initial_state,
)


class SimulationError(RuntimeError):
    pass


@dataclass
class Frame:
    state: DialogTree
    act: DialogTree | None
    turn: int  # turn whose user state this frame holds


@dataclass
class DialogStack:
    frames: list[Frame] = field(default_factory=list)
    pushes: int = 0
    pops: int = 0

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def top(self) -> Frame:
        if not self.frames:
            raise SimulationError("dialog stack is empty")
        return self.frames[-1]

    def push(self, frame: Frame) -> None:
        self.frames.append(frame)
        self.pushes += 1

    def pop(self) -> Frame:
        frame = self.top
        self.frames.pop()
        self.pops += 1
        return frame

    def turns(self) -> list[int]:
        return [f.turn for f in self.frames]


@dataclass
class Turn:
    user_utterance: str
    user_state: DialogTree
    system_utterance: str
    system_act: DialogTree
    update_kind: str
    user_rules: list[str]
    system_rule: str
    system_finishing: str | None
    stack_after: list[int]
    # turn index whose frame fed the update (None on the first turn)
    update_source: int | None = None
    coref: bool = False
    tags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "user_utterance": self.user_utterance,
            "user_state": render_dotted(self.user_state),
            "system_utterance": self.system_utterance,
            "system_act": render_dotted(self.system_act),
            "update_kind": self.update_kind,
            "user_rules": list(self.user_rules),
            "system_rule": self.system_rule,
            "system_finishing": self.system_finishing,
            "stack_after": list(self.stack_after),
            "update_source": self.update_source,
            "coref": self.coref,
            "tags": list(self.tags),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Turn":
        return cls(
            d["user_utterance"],
            parse_dotted(d["user_state"]),
            d["system_utterance"],
            parse_dotted(d["system_act"]),
            d["update_kind"],
            list(d.get("user_rules", [])),
            d.get("system_rule", ""),
            d.get("system_finishing"),
            list(d.get("stack_after", [])),
            d.get("update_source"),
            bool(d.get("coref", False)),
            list(d.get("tags", [])),
        )


@dataclass
class Conversation:
    id: str
    turns: list[Turn]
    status: str
    seed: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "seed": self.seed, "status": self.status, "turns": [t.to_dict() for t in self.turns]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Conversation":
        turns = [Turn.from_dict(t) for t in d["turns"]]
        if not turns:
            raise ValueError(f"conversation {d.get('id')!r} has no turns")
        return cls(str(d["id"]), turns, d["status"], d.get("seed"))


def _check(tree: DialogTree, ont: Ontology | None, where: str) -> None:
    if ont is None:
        return
    bad = validate(tree, ont)
    if bad:
        raise SimulationError(f"{where}: {bad[0].kind} at {bad[0].path}: {bad[0].message}")


def simulate_conversation(
    grammar: Grammar,
    seed: int,
    conv_id: str | None = None,
    ontology: Ontology | None = None,
    max_turns: int | None = None,
    end_prob: float | None = None,
) -> Conversation:
    """Sample one conversation; identical (grammar, seed) gives an identical result.

    When ``ontology`` is given every state and act is validated as it is produced.
    """
    rng = random.Random(seed)
    cap = int(max_turns if max_turns is not None else grammar.setting("max_turns", 12))
    p_end = float(end_prob if end_prob is not None else grammar.setting("end_prob", 0.6))
    if cap < 1:
        raise ValueError("max_turns must be at least 1")
    stack = DialogStack()
    turns: list[Turn] = []

    state, utt, deriv = sample_initial_state(grammar, rng)
    _check(state, ontology, "turn 0 user state")
    stack.push(Frame(state, None, 0))
    user = UpdateResult(state, utt, deriv.rule_id, {}, "new-goal", False)
    user_rules = deriv.rule_ids()
    source: int | None = None
    popped: Frame | None = None
    status = "failure"

    for t in range(cap):
        last = t == cap - 1
        top = stack.top
        resp: SystemResponse = generate_system_act(top.state, grammar, rng)
        if last and resp.finishing is None:
            resp = failure_response(grammar, rng)
        _check(resp.tree, ontology, f"turn {t} system act")
        top.act = resp.tree
        if resp.finishing:
            popped = stack.pop()
        turns.append(
            Turn(
                user.utterance,
                user.tree,
                resp.utterance,
                resp.tree,
                user.kind,
                user_rules,
                resp.rule_id,
                resp.finishing,
                stack.turns(),
                source,
                user.copies_history,
            )
        )
        if resp.finishing:
            status = resp.finishing
            if not stack and (last or rng.random() < p_end):
                break
        if last:
            break

        # next user turn
        if resp.finishing and stack:
            user = apply_update(grammar, ("resume",), stack.top.state, stack.top.act, rng)
        elif resp.finishing:
            assert popped is not None
            user = apply_update(grammar, ("new-goal",), popped.state, popped.act, rng)
        else:
            user = apply_update(grammar, ("continue", "new-goal"), stack.top.state, stack.top.act, rng)
        source = popped.turn if (resp.finishing and not stack) else stack.top.turn
        _check(user.tree, ontology, f"turn {t + 1} user state")
        user_rules = [user.rule_id] + [r for d in user.derivations.values() for r in d.rule_ids()]
        if user.kind == "new-goal":
            stack.push(Frame(user.tree, None, t + 1))
        else:
            stack.top.state = user.tree
            stack.top.act = None
            stack.top.turn = t + 1
        status = "failure"

    if len(stack) != stack.pushes - stack.pops:
        raise SimulationError("stack audit failed")
    return Conversation(conv_id if conv_id is not None else f"sim-{seed}", turns, status, seed)


def simulate_corpus(grammar: Grammar, seeds: Iterable[int], ontology: Ontology | None = None, **kw: Any) -> Iterator[Conversation]:
    for s in sorted(seeds):
        yield simulate_conversation(grammar, s, ontology=ontology, **kw)


@dataclass(frozen=True)
class FlowFilter:
    """Sanity predicates standing in for a human accept/reject pass."""

    max_identical_acts: int = 3
    require_finishing: bool = True
    max_turns: int | None = None


def filter_flow(conv: Conversation, cfg: FlowFilter = FlowFilter()) -> bool:
    if not conv.turns:
        return False
    if cfg.require_finishing and conv.turns[-1].system_finishing is None:
        return False
    if cfg.max_turns is not None and len(conv.turns) > cfg.max_turns:
        return False
    run = 0
    prev = None
    for t in conv.turns:
        cur = render_dotted(t.system_act)
        run = run + 1 if cur == prev else 1
        prev = cur
        if run > cfg.max_identical_acts:
            return False
    return True


__all__ = [
    "Conversation",
    "DialogStack",
    "FlowFilter",
    "Frame",
    "GrammarError",
    "SimulationError",
    "Turn",
    "filter_flow",
    "simulate_conversation",
    "simulate_corpus",
]
