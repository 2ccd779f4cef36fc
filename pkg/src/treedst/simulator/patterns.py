"""Tree patterns with captures and absence constraints, and output-pattern realization.

Pattern labels (dotted syntax, one token per node):

``label``
    literal node that must be present
``?x`` / ``?x=label``
    capture any node (or a node with that label) and bind its subtree to ``x``
``??x=label``
    optional capture: binds the node when present, ``None`` otherwise
``-label``
    absence constraint: the matched parent has no child with this label
``*``
    wildcard, matches any node without binding it

Children of a pattern node are matched against distinct children of the tree
node (unordered, extra tree children are allowed). Patterns are anchored at
the tree root.

Output patterns use literals, ``?x`` (copy of the bound subtree; children
written under it are appended to the copy) and ``$NT`` / ``$NT:alias``
(grammar expansion, resolved by a callback).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

from ..tree import DialogTree, RawNode, TreeError, open_value_token, parse_forest, to_raw

Bindings = dict[str, "DialogTree | None"]


@dataclass
class PatNode:
    op: str  # lit | cap | opt | absent | any
    label: str | None = None
    var: str | None = None
    children: list["PatNode"] = field(default_factory=list)

    def variables(self) -> list[str]:
        out = [self.var] if self.var else []
        for c in self.children:
            out.extend(c.variables())
        return out


def _pat_from_raw(raw: RawNode) -> PatNode:
    lab = raw.label
    kids = [_pat_from_raw(c) for c in raw.children]
    if raw.open:
        return PatNode("lit", open_value_token(lab), children=kids)
    if lab == "*":
        return PatNode("any", children=kids)
    if lab.startswith("??"):
        var, _, want = lab[2:].partition("=")
        if not want:
            raise TreeError(f"optional capture {lab!r} needs a label")
        return PatNode("opt", want, var, kids)
    if lab.startswith("?"):
        var, _, want = lab[1:].partition("=")
        return PatNode("cap", want or None, var, kids)
    if lab.startswith("-"):
        if kids:
            raise TreeError(f"absence constraint {lab!r} cannot have children")
        return PatNode("absent", lab[1:])
    return PatNode("lit", lab, children=kids)


def parse_pattern(text: str) -> PatNode:
    roots = parse_forest(text, check_labels=False)
    if len(roots) != 1:
        raise TreeError(f"a pattern needs exactly one root, got {len(roots)}")
    pat = _pat_from_raw(roots[0])
    names = pat.variables()
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise TreeError(f"capture variables bound twice: {sorted(dup)}")
    return pat


def _label_ok(p: PatNode, n: DialogTree) -> bool:
    return p.label is None or p.label == n.token()


def _match(p: PatNode, n: DialogTree) -> Iterator[Bindings]:
    if p.op == "absent":
        raise AssertionError("absence constraints are checked by the parent")
    if not _label_ok(p, n):
        return
    for c in p.children:
        if c.op == "absent" and any(k.token() == c.label for k in n.children):
            return
    base: Bindings = {p.var: n} if p.var else {}
    kids = [c for c in p.children if c.op != "absent"]
    yield from _assign(kids, 0, n.children, frozenset(), base)


def _unbound(p: PatNode) -> Bindings:
    return {v: None for v in p.variables()}


def _assign(kids: list[PatNode], i: int, children: tuple[DialogTree, ...], used: frozenset, acc: Bindings) -> Iterator[Bindings]:
    if i == len(kids):
        yield dict(acc)
        return
    pk = kids[i]
    present = False
    for j, child in enumerate(children):
        if j in used:
            continue
        if pk.op == "opt" and child.token() == pk.label:
            present = True
        for b in _match(pk, child):
            merged = dict(acc)
            merged.update(b)
            yield from _assign(kids, i + 1, children, used | {j}, merged)
    if pk.op == "opt" and not present:
        merged = dict(acc)
        merged.update(_unbound(pk))
        yield from _assign(kids, i + 1, children, used, merged)


def match_pattern(p: PatNode, t: DialogTree) -> list[Bindings]:
    """All embeddings of ``p`` into ``t`` anchored at the root."""
    return list(_match(p, t))


def top_labels(p: PatNode) -> frozenset[str]:
    """Literal labels required directly under the pattern root (a cheap prefilter)."""
    return frozenset(c.label for c in p.children if c.op == "lit" and c.label)


# ---------------------------------------------------------------------------
# output patterns


Expander = Callable[[str, str], list[RawNode]]


@dataclass(frozen=True)
class OutputPattern:
    forest: tuple[RawNode, ...]
    text: str

    def captures(self) -> set[str]:
        out: set[str] = set()

        def walk(n: RawNode) -> None:
            if n.label.startswith("?"):
                out.add(n.label[1:])
            for c in n.children:
                walk(c)

        for r in self.forest:
            walk(r)
        return out

    def nonterminals(self) -> list[tuple[str, str]]:
        out: list[tuple[str, str]] = []

        def walk(n: RawNode) -> None:
            if n.label.startswith("$") and not n.open:
                out.append(split_nonterminal(n.label))
            for c in n.children:
                walk(c)

        for r in self.forest:
            walk(r)
        return out


def split_nonterminal(label: str) -> tuple[str, str]:
    """``$city:dst`` -> (``$city``, ``dst``); alias defaults to the bare name."""
    name, _, alias = label.partition(":")
    return name, alias or name[1:]


def parse_output(text: str) -> OutputPattern:
    return OutputPattern(tuple(parse_forest(text, check_labels=False)), text)


def realize(out: OutputPattern, bindings: Bindings, expand: Expander) -> list[RawNode]:
    """Instantiate an output pattern: copies from ``bindings``, expansions from ``expand``."""
    result: list[RawNode] = []
    for r in out.forest:
        result.extend(_realize(r, bindings, expand))
    return result


def _realize(n: RawNode, bindings: Bindings, expand: Expander) -> list[RawNode]:
    if n.open:
        return [RawNode(n.label, [], True)]
    lab = n.label
    if lab.startswith("$"):
        if n.children:
            raise TreeError(f"expansion {lab!r} cannot have children in an output pattern")
        name, alias = split_nonterminal(lab)
        return expand(name, alias)
    kids: list[RawNode] = []
    for c in n.children:
        kids.extend(_realize(c, bindings, expand))
    if lab.startswith("?"):
        var = lab[1:]
        if var not in bindings:
            raise TreeError(f"output uses unbound capture ?{var}")
        bound = bindings[var]
        if bound is None:
            return []
        copy = to_raw(bound)
        copy.children.extend(kids)
        return [copy]
    return [RawNode(lab, kids)]
