"""Turn inputs, vocabularies and id-encoded training examples."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..dataset import HistoryStack
from ..simulator.simulate import Conversation
from ..text import tokenize
from ..tree import (
    CLOSE,
    EMPTY,
    HISTORY,
    OPEN,
    PREV,
    ROOT_PARENT,
    SAME,
    STACKTOP,
    DialogTree,
    canonicalize,
    check_label,
    empty_state,
    is_empty_state,
    is_open_token,
    linearize,
    merge_states,
    to_node_parent_form,
)

PAD, BOS, EOS, UNK, ROOT = "<pad>", "<bos>", "<eos>", "<unk>", "<root>"
RESERVED = (PAD, BOS, EOS, UNK, OPEN, CLOSE, PREV, STACKTOP, SAME, EMPTY, ROOT, HISTORY)
MODES = ("vanilla", "pp")


class Vocab:
    """Dense token index with the reserved tokens first."""

    def __init__(self, tokens: Iterable[str] = ()) -> None:
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, tok: str) -> int:
        if tok not in self.stoi:
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        return self.stoi[tok]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def id(self, tok: str) -> int:
        return self.stoi.get(tok, self.stoi[UNK])

    def ids(self, toks: Sequence[str]) -> np.ndarray:
        return np.array([self.id(t) for t in toks], dtype=np.int64)


@dataclass(frozen=True)
class TurnInput:
    x: tuple[str, ...]
    s: tuple[str, ...]
    u: tuple[str, ...]


@dataclass(frozen=True)
class TurnExample:
    conv_id: str
    turn: int
    inp: TurnInput
    target: DialogTree
    tags: tuple[str, ...] = ()


def make_input(utterance: str, prev_act: DialogTree | None, prev_state: DialogTree | None, stack_top: DialogTree | None) -> TurnInput:
    """Featurize one turn; the first turn (no history) gets single empty markers."""
    x = tuple(tokenize(utterance)) or (BOS,)
    s = tuple(linearize(canonicalize(prev_act))) if prev_act is not None else (EMPTY,)
    if prev_state is None:
        u: tuple[str, ...] = (EMPTY,)
    else:
        top = stack_top if stack_top is not None else empty_state()
        u = tuple(linearize(merge_states(canonicalize(prev_state), canonicalize(top))))
    return TurnInput(x, s, u)


def conversation_examples(conv: Conversation) -> list[TurnExample]:
    """Examples with gold history (the teacher-forced / oracle view)."""
    out = []
    stack = HistoryStack()
    prev_state: DialogTree | None = None
    prev_act: DialogTree | None = None
    for i, t in enumerate(conv.turns):
        inp = make_input(t.user_utterance, prev_act, prev_state, stack.top())
        out.append(TurnExample(conv.id, i, inp, canonicalize(t.user_state), tuple(t.tags)))
        stack.observe(t.user_state)
        stack.finish(t.system_finishing is not None)
        prev_state, prev_act = t.user_state, t.system_act
    return out


def corpus_examples(convs: Iterable[Conversation]) -> list[TurnExample]:
    out: list[TurnExample] = []
    for c in convs:
        out.extend(conversation_examples(c))
    return out


def target_tokens(tree: DialogTree, mode: str) -> tuple[list[str], list[int]]:
    """Decoder targets (EOS appended) and, in pp mode, parent indices (-1 where none)."""
    if mode == "vanilla":
        toks = linearize(tree)
        return toks + [EOS], [ROOT_PARENT] * (len(toks) + 1)
    if mode == "pp":
        npf = to_node_parent_form(tree)
        return list(npf.nodes) + [EOS], list(npf.parents) + [ROOT_PARENT]
    raise ValueError(f"unknown decoder mode {mode!r}")


@dataclass
class Vocabs:
    words: Vocab
    nodes: Vocab
    # labels never seen with children in training targets; excluded as parents
    leaf_only: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        return {"words": self.words.itos, "nodes": self.nodes.itos, "leaf_only": sorted(self.leaf_only)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabs":
        w, n = Vocab(), Vocab()
        for t in d["words"]:
            w.add(t)
        for t in d["nodes"]:
            n.add(t)
        return cls(w, n, frozenset(d.get("leaf_only", ())))


def build_vocabs(examples: Sequence[TurnExample]) -> Vocabs:
    """Word and node vocabularies from training examples, in first-seen order.

    Open values never enter either vocabulary: they are only reachable by copying.
    """
    words, nodes = Vocab(), Vocab()
    internal: Counter[str] = Counter()
    leaves: Counter[str] = Counter()
    for ex in examples:
        for t in ex.inp.x:
            if not is_open_token(t):
                words.add(t)
        for t in (*ex.inp.s, *ex.inp.u, *linearize(ex.target)):
            if not is_open_token(t):
                nodes.add(t)
        for n in ex.target.nodes():
            (internal if n.children else leaves)[n.token()] += 1
    leaf_only = frozenset(t for t in leaves if t not in internal)
    return Vocabs(words, nodes, leaf_only)


def node_token_ok(tok: str) -> bool:
    """Whether a token can label a tree node."""
    if tok in RESERVED:
        return False
    if is_open_token(tok):
        return True
    try:
        check_label(tok)
    except ValueError:
        return False
    return True


@dataclass
class Encoded:
    """An example turned into arrays for one forward/backward pass."""

    x: np.ndarray
    s: np.ndarray
    u: np.ndarray
    surface: list[str]
    dec_in: np.ndarray
    par_in: np.ndarray
    gen_target: np.ndarray
    gen_on: np.ndarray
    copy_mask: np.ndarray
    parents: np.ndarray
    parent_ok: np.ndarray
    tokens: list[str] = field(default_factory=list)

    @property
    def steps(self) -> int:
        """Autoregressive steps excluding the final EOS."""
        return len(self.tokens) - 1


def encode_input(inp: TurnInput, voc: Vocabs) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    x = np.array([voc.words.id(UNK if is_open_token(t) else t) for t in inp.x], dtype=np.int64)
    return x, voc.nodes.ids(inp.s), voc.nodes.ids(inp.u), [*inp.x, *inp.s, *inp.u]


def encode_example(ex: TurnExample, voc: Vocabs, mode: str) -> Encoded:
    x, s, u, surface = encode_input(ex.inp, voc)
    toks, parents = target_tokens(ex.target, mode)
    T = len(toks)
    surf = np.array(surface, dtype=object)
    copy_mask = np.zeros((T, len(surface)), dtype=bool)
    gen_target = np.empty(T, dtype=np.int64)
    gen_on = np.ones(T)
    for i, tok in enumerate(toks):
        copy_mask[i] = surf == tok
        in_vocab = tok in voc.nodes and not is_open_token(tok)
        gen_target[i] = voc.nodes.id(tok) if in_vocab else voc.nodes.id(UNK)
        # out-of-vocabulary tokens that can be copied get no generation credit
        if not in_vocab and copy_mask[i].any():
            gen_on[i] = 0.0
    dec_in = np.empty(T, dtype=np.int64)
    par_in = np.empty(T, dtype=np.int64)
    for i in range(T):
        if i == 0:
            dec_in[i] = voc.nodes.id(BOS)
            par_in[i] = voc.nodes.id(ROOT)
            continue
        prev = toks[i - 1]
        dec_in[i] = voc.nodes.id(UNK if is_open_token(prev) else prev)
        p = parents[i - 1]
        par_in[i] = voc.nodes.id(ROOT) if p == ROOT_PARENT else voc.nodes.id(toks[p])
    parent_ok = np.array([t in voc.nodes and t not in voc.leaf_only and not is_open_token(t) for t in toks], dtype=bool)
    # the gold parent is always a candidate, so the teacher-forced loss stays finite
    parent_ok[[q for q in parents if q != ROOT_PARENT]] = True
    return Encoded(x, s, u, surface, dec_in, par_in, gen_target, gen_on, copy_mask,
                   np.array(parents, dtype=np.int64), parent_ok, toks)
