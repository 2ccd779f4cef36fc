"""Corpus persistence, splitting, flattening, phenomenon tags and statistics.

JSONL layout: the first line is ``{"type": "header", "meta": {...}}``; every
following line is one conversation::

    {"id": str, "seed": int | null, "status": "success" | "failure",
     "turns": [{"user_utterance": str, "user_state": dotted tree,
                "system_utterance": str, "system_act": dotted tree,
                "update_kind": "new-goal" | "continue" | "resume",
                "user_rules": [rule id, ...], "system_rule": rule id,
                "system_finishing": "success" | "failure" | null,
                "stack_after": [turn index, ...], "update_source": int | null,
                "coref": bool, "tags": [tag, ...]}, ...]}
"""
from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from .simulator.simulate import Conversation, Turn
from .tree import (
    NodeKind,
    RawNode,
    SlotValuePair,
    DialogTree,
    build,
    flatten,
    flatten_act,
    intents,
    is_empty_state,
    open_value_token,
    parse_token,
)
from .text import tokenize

# counts of the published train / dev / test split
PAPER_SPLIT = (19808, 3733, 3739)
DEFAULT_RATIOS = tuple(n / sum(PAPER_SPLIT) for n in PAPER_SPLIT)

INTENT_CHANGE = "intent-change"
COMPOSITIONAL = "compositional"
MULTI_INTENT = "multi-intent"
COREF = "coref"
TAGS = (INTENT_CHANGE, COMPOSITIONAL, MULTI_INTENT, COREF)

FLAT_JOIN = "+"


class CorpusError(ValueError):
    pass


@dataclass
class Corpus:
    conversations: list[Conversation]
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for c in self.conversations:
            if c.id in seen:
                raise CorpusError(f"duplicate conversation id {c.id!r}")
            seen.add(c.id)

    def __len__(self) -> int:
        return len(self.conversations)

    def __iter__(self) -> Iterator[Conversation]:
        return iter(self.conversations)

    def turns(self) -> Iterator[Turn]:
        for c in self.conversations:
            yield from c.turns


# ---------------------------------------------------------------------------
# persistence


def write_corpus(corpus: Corpus | Iterable[Conversation], path: str | Path, meta: dict[str, Any] | None = None) -> int:
    """Write a header line then one conversation per line; returns the count."""
    if isinstance(corpus, Corpus):
        meta = {**corpus.meta, **(meta or {})}
        convs: Iterable[Conversation] = corpus.conversations
    else:
        convs = corpus
    n = 0
    seen: set[str] = set()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "header", "meta": meta or {}}, sort_keys=True) + "\n")
        for c in convs:
            if c.id in seen:
                raise CorpusError(f"duplicate conversation id {c.id!r}")
            seen.add(c.id)
            fh.write(json.dumps(c.to_dict(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_header(path: str | Path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        obj = json.loads(first)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}:1: malformed header: {exc}") from None
    if not isinstance(obj, dict) or obj.get("type") != "header":
        raise CorpusError(f"{path}:1: missing corpus header")
    return dict(obj.get("meta", {}))


def iter_corpus(path: str | Path) -> Iterator[Conversation]:
    """Stream conversations one line at a time."""
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if lineno == 1:
                try:
                    head = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path}:1: malformed header: {exc}") from None
                if not isinstance(head, dict) or head.get("type") != "header":
                    raise CorpusError(f"{path}:1: missing corpus header")
                continue
            if not line.strip():
                continue
            try:
                conv = Conversation.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed conversation: {exc}") from None
            if conv.id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate conversation id {conv.id!r}")
            seen.add(conv.id)
            yield conv


def read_corpus(path: str | Path) -> Corpus:
    return Corpus(list(iter_corpus(path)), read_header(path))


# ---------------------------------------------------------------------------
# splitting


def split_corpus(corpus: Corpus, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0) -> tuple[Corpus, Corpus, Corpus]:
    """Seeded partition by conversation into train / dev / test."""
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three non-negative numbers")
    if abs(sum(ratios) - 1.0) > 1e-6:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    convs = sorted(corpus.conversations, key=lambda c: c.id)
    random.Random(seed).shuffle(convs)
    n = len(convs)
    n_train = round(n * ratios[0])
    n_dev = min(round(n * ratios[1]), n - n_train)
    parts = (convs[:n_train], convs[n_train : n_train + n_dev], convs[n_train + n_dev :])
    names = ("train", "dev", "test")
    for name, part, r in zip(names, parts, ratios):
        if not part and r > 0:
            warnings.warn(f"{name} split is empty for a corpus of {n} conversations", stacklevel=2)
    return tuple(Corpus(list(p), {**corpus.meta, "split": name, "split_seed": seed}) for p, name in zip(parts, names))  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# flat view


def is_flat_tree(tree: DialogTree) -> bool:
    return bool(tree.children) and all(FLAT_JOIN in c.label for c in tree.children)


def flat_pairs(tree: DialogTree) -> frozenset[SlotValuePair]:
    """Slot-value pairs of a user state, whether hierarchical or already flat."""
    if is_empty_state(tree):
        return frozenset()
    if is_flat_tree(tree):
        out = set()
        for slot in tree.children:
            for v in slot.children:
                out.add(SlotValuePair(slot.label, parse_token(v.token()).label))
            if not slot.children:
                out.add(SlotValuePair(slot.label, ""))
        return frozenset(out)
    return flatten(tree)


def _value_node(value: str, open_: bool) -> RawNode:
    return RawNode(value, [], open_)


def flat_tree(pairs: Iterable[SlotValuePair], root: str = "user", open_values: Iterable[str] = ()) -> DialogTree:
    """Two-level tree ``root -> slot -> value`` (slots with value '' stay leaves)."""
    opened = set(open_values)
    by_slot: dict[str, list[str]] = {}
    for p in sorted(pairs):
        by_slot.setdefault(p.slot, [])
        if p.value:
            by_slot[p.slot].append(p.value)
    kids = [RawNode(s, [_value_node(v, v in opened) for v in vals]) for s, vals in by_slot.items()]
    return build(RawNode(root, kids))


def _open_values(tree: DialogTree) -> set[str]:
    return {n.label for n in tree.nodes() if n.kind is NodeKind.OPEN_VALUE}


def flat_state_tree(tree: DialogTree) -> DialogTree:
    if is_empty_state(tree) or is_flat_tree(tree):
        return tree
    return flat_tree(flatten(tree), "user", _open_values(tree))


def flat_act_tree(tree: DialogTree) -> DialogTree:
    if is_flat_tree(tree):
        return tree
    return flat_tree(flatten_act(tree), "system", _open_values(tree))


@dataclass(frozen=True)
class FlatTurn:
    user_utterance: str
    system_utterance: str
    prev_flat: frozenset[SlotValuePair]
    flat: frozenset[SlotValuePair]
    state: DialogTree


def derive_flat_corpus(corpus: Corpus) -> Corpus:
    """Same conversations with every state and act replaced by its flat tree.

    The original trees stay reachable through :func:`flat_turns` for audit.
    """
    convs = []
    for c in corpus.conversations:
        turns = []
        for t in c.turns:
            nt = Turn.from_dict(t.to_dict())
            nt.user_state = flat_state_tree(t.user_state)
            nt.system_act = flat_act_tree(t.system_act)
            turns.append(nt)
        convs.append(Conversation(c.id, turns, c.status, c.seed))
    return Corpus(convs, {**corpus.meta, "flat": True})


def flat_turns(conv: Conversation) -> list[FlatTurn]:
    out = []
    prev: frozenset[SlotValuePair] = frozenset()
    for t in conv.turns:
        cur = flat_pairs(t.user_state)
        out.append(FlatTurn(t.user_utterance, t.system_utterance, prev, cur, t.user_state))
        prev = cur
    return out


# ---------------------------------------------------------------------------
# phenomena


def _has_reference(tree: DialogTree) -> bool:
    return any(n.kind is NodeKind.REFERENCE for n in tree.nodes())


def _multi(state: DialogTree, prev_act: DialogTree | None) -> bool:
    if sum(1 for c in state.children if c.kind is NodeKind.DOMAIN) > 1:
        return True
    return prev_act is not None and sum(1 for c in prev_act.children if c.kind is NodeKind.ACTION) > 1


def tag_phenomena(conv: Conversation) -> list[list[str]]:
    """Tags from the simulator trace (update kinds and copy flags)."""
    out = []
    for i, t in enumerate(conv.turns):
        tags = []
        if i > 0 and t.update_kind in ("new-goal", "resume"):
            tags.append(INTENT_CHANGE)
        if _has_reference(t.user_state):
            tags.append(COMPOSITIONAL)
        if _multi(t.user_state, conv.turns[i - 1].system_act if i else None):
            tags.append(MULTI_INTENT)
        if t.coref:
            tags.append(COREF)
        out.append(tags)
    return out


def goal_key(tree: DialogTree) -> frozenset:
    """Identity of the goal a state pursues: its intents, or its domains for flat trees."""
    if is_flat_tree(tree):
        return frozenset(c.label.split(FLAT_JOIN, 1)[0] for c in tree.children)
    return intents(tree)


class HistoryStack:
    """Stack of unfinished goals rebuilt from states and finishing flags only.

    A state whose intents equal the top frame's replaces it, any other state
    is pushed, and a finishing system act pops the top.
    """

    def __init__(self) -> None:
        self.frames: list[DialogTree] = []

    def top(self) -> DialogTree | None:
        return self.frames[-1] if self.frames else None

    def base_for(self, state: DialogTree) -> DialogTree | None:
        """The frame an incoming state continues, or None for a new goal."""
        top = self.top()
        if top is not None and goal_key(top) == goal_key(state):
            return top
        return None

    def observe(self, state: DialogTree) -> None:
        if self.base_for(state) is not None:
            self.frames[-1] = state
        else:
            self.frames.append(state)

    def finish(self, finishing: bool) -> None:
        if finishing and self.frames:
            self.frames.pop()


def _surface_forms(value: str) -> set[str]:
    return {value, open_value_token(value)}


def tag_phenomena_from_trees(conv: Conversation) -> list[list[str]]:
    """Tags re-derived from trees, utterances and finishing flags alone.

    Intent change: the intents differ from the previous state. Co-reference:
    relative to the goal frame the state continues (nothing for a new goal),
    some added slot-value pair has a value that does not occur in the utterance.
    """
    out = []
    stack = HistoryStack()
    prev: DialogTree | None = None
    for i, t in enumerate(conv.turns):
        tags = []
        if prev is not None and intents(t.user_state) != intents(prev):
            tags.append(INTENT_CHANGE)
        if _has_reference(t.user_state):
            tags.append(COMPOSITIONAL)
        if _multi(t.user_state, conv.turns[i - 1].system_act if i else None):
            tags.append(MULTI_INTENT)
        base = stack.base_for(t.user_state)
        added = flat_pairs(t.user_state) - (flat_pairs(base) if base is not None else frozenset())
        if i > 0:
            words = set(tokenize(t.user_utterance))
            if any(not (_surface_forms(p.value) & words) for p in added):
                tags.append(COREF)
        stack.observe(t.user_state)
        stack.finish(t.system_finishing is not None)
        prev = t.user_state
        out.append(tags)
    return out


def annotate(conv: Conversation) -> Conversation:
    for t, tags in zip(conv.turns, tag_phenomena(conv)):
        t.tags = tags
    return conv


# ---------------------------------------------------------------------------
# statistics


@dataclass
class StatsReport:
    dialogs: int
    turns: int
    avg_turns: float
    avg_tokens: float
    slots: int
    values: int
    multi_domain_dialogs: int
    compositional_turns: int
    coref_turns: int

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)

    def table(self) -> str:
        rows = [
            ("# dialogs", self.dialogs),
            ("# turns", self.turns),
            ("avg turns / dialog", f"{self.avg_turns:.2f}"),
            ("avg tokens / utterance", f"{self.avg_tokens:.2f}"),
            ("# slots", self.slots),
            ("# values", self.values),
            ("# multi-domain dialogs", self.multi_domain_dialogs),
            ("# compositional turns", self.compositional_turns),
            ("# cross-turn co-references", self.coref_turns),
        ]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(w)}  {v}" for k, v in rows)


def compute_stats(corpus: Iterable[Conversation]) -> StatsReport:
    dialogs = turns = utts = tokens = multi = comp = coref = 0
    slots: set[str] = set()
    values: set[str] = set()
    for conv in corpus:
        dialogs += 1
        domains: set[str] = set()
        tags = tag_phenomena(conv)
        for t, tg in zip(conv.turns, tags):
            turns += 1
            for u in (t.user_utterance, t.system_utterance):
                utts += 1
                tokens += len(tokenize(u))
            for p in flat_pairs(t.user_state):
                slots.add(p.slot)
                values.add(p.value)
            domains.update(d for d, _ in intents(t.user_state))
            comp += COMPOSITIONAL in tg
            coref += COREF in tg
        multi += len(domains) > 1
    return StatsReport(
        dialogs,
        turns,
        turns / dialogs if dialogs else 0.0,
        tokens / utts if utts else 0.0,
        len(slots),
        len(values),
        multi,
        comp,
        coref,
    )
