"""Rooted semantic trees for user dialog states and system dialog acts.

Trees are immutable. Node kinds are never written by hand; they are inferred
from the position of a label in the tree (``user`` roots take domains, domains
take verbs, slots take operators, and so on), so every textual or token form
decodes to exactly one typed tree.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

OPEN = "("
CLOSE = ")"

USER = "user"
SYSTEM = "system"
EQUALS = "equals"
REFERENCE = "reference"
PROMPT = "prompt"

HISTORY = "<history>"
PREV = "<prev>"
STACKTOP = "<stacktop>"
SAME = "<same>"
EMPTY = "<empty>"
MARKERS = frozenset({HISTORY, PREV, STACKTOP, SAME, EMPTY})

ROOT_PARENT = -1

_FORBIDDEN = set(".()[] \t\n\\")


class TreeError(ValueError):
    """Raised for malformed tree text, token sequences or node-parent forms."""


class NodeKind(str, enum.Enum):
    ROOT_USER = "root_user"
    ROOT_SYSTEM = "root_system"
    DOMAIN = "domain"
    VERB = "verb"
    ACTION = "action"
    SLOT = "slot"
    OPERATOR = "operator"
    VALUE = "value"
    OPEN_VALUE = "open_value"
    REFERENCE = "reference"
    MARKER = "marker"

    @property
    def is_value(self) -> bool:
        return self in (NodeKind.VALUE, NodeKind.OPEN_VALUE)


@dataclass(frozen=True)
class DialogTree:
    label: str
    kind: NodeKind
    children: tuple["DialogTree", ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def nodes(self) -> Iterator["DialogTree"]:
        """Depth-first pre-order traversal."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def node_count(self) -> int:
        return sum(1 for _ in self.nodes())

    def internal_count(self) -> int:
        return sum(1 for n in self.nodes() if n.children)

    def depth(self) -> int:
        if not self.children:
            return 1
        return 1 + max(c.depth() for c in self.children)

    def token(self) -> str:
        """Surface token of this node (open values keep their brackets)."""
        if self.kind is NodeKind.OPEN_VALUE:
            return open_value_token(self.label)
        return self.label

    def __str__(self) -> str:
        return render_dotted(self)


# ---------------------------------------------------------------------------
# kind inference


@dataclass(frozen=True)
class _Ctx:
    in_prompt: bool = False
    in_reference: bool = False


def _child_kind(parent: NodeKind | None, label: str, is_leaf: bool, is_open: bool, ctx: _Ctx) -> NodeKind:
    if is_open:
        return NodeKind.OPEN_VALUE
    if parent is None or parent is NodeKind.MARKER:
        if label == USER:
            return NodeKind.ROOT_USER
        if label == SYSTEM:
            return NodeKind.ROOT_SYSTEM
        # history markers and untyped fragments (e.g. repaired decoder output)
        return NodeKind.MARKER
    if parent is NodeKind.ROOT_USER:
        return NodeKind.DOMAIN
    if parent is NodeKind.ROOT_SYSTEM:
        return NodeKind.ACTION
    if parent is NodeKind.ACTION:
        return NodeKind.DOMAIN
    if parent is NodeKind.DOMAIN:
        return NodeKind.SLOT if ctx.in_reference else NodeKind.VERB
    if parent is NodeKind.VERB:
        return NodeKind.SLOT
    if parent is NodeKind.SLOT:
        return NodeKind.OPERATOR
    if parent is NodeKind.OPERATOR:
        if label == REFERENCE:
            return NodeKind.REFERENCE
        if not is_leaf or ctx.in_prompt:
            return NodeKind.SLOT
        return NodeKind.VALUE
    if parent is NodeKind.REFERENCE:
        return NodeKind.DOMAIN
    # children under a value: structurally invalid, kept total for repair paths
    return NodeKind.VALUE


def _next_ctx(ctx: _Ctx, kind: NodeKind, label: str) -> _Ctx:
    if kind is NodeKind.ACTION and label == PROMPT:
        return _Ctx(True, ctx.in_reference)
    if kind is NodeKind.REFERENCE:
        return _Ctx(ctx.in_prompt, True)
    if kind is NodeKind.DOMAIN and ctx.in_reference:
        # the embedded domain consumes the reference flag; its slots are ordinary
        return _Ctx(ctx.in_prompt, False)
    if kind in (NodeKind.ROOT_USER, NodeKind.ROOT_SYSTEM):
        return _Ctx()
    return ctx


@dataclass
class RawNode:
    """Untyped label tree used while parsing; ``open`` marks bracketed values."""

    label: str
    children: list["RawNode"] = field(default_factory=list)
    open: bool = False


def build(raw: RawNode) -> DialogTree:
    """Type a raw label tree by inferring every node kind from its position."""
    return _build(raw, None, _Ctx())


def _build(raw: RawNode, parent: NodeKind | None, ctx: _Ctx) -> DialogTree:
    kind = _child_kind(parent, raw.label, not raw.children, raw.open, ctx)
    child_ctx = _next_ctx(ctx, kind, raw.label)
    if kind is NodeKind.DOMAIN and ctx.in_reference:
        # slots of a referenced intent hang directly off the domain
        children = tuple(_build_slot_of_ref(c, child_ctx) for c in raw.children)
    else:
        children = tuple(_build(c, kind, child_ctx) for c in raw.children)
    return DialogTree(raw.label, kind, children)


def _build_slot_of_ref(raw: RawNode, ctx: _Ctx) -> DialogTree:
    kind = NodeKind.OPEN_VALUE if raw.open else NodeKind.SLOT
    return DialogTree(raw.label, kind, tuple(_build(c, kind, ctx) for c in raw.children))


def to_raw(tree: DialogTree) -> RawNode:
    return RawNode(tree.label, [to_raw(c) for c in tree.children], tree.kind is NodeKind.OPEN_VALUE)


def retype(tree: DialogTree) -> DialogTree:
    """Re-infer kinds, e.g. after splicing fragments into a new context."""
    return build(to_raw(tree))


def node(label: str, *children: DialogTree, kind: NodeKind | None = None) -> DialogTree:
    """Convenience constructor; kinds default to VALUE/SLOT and are fixed by :func:`retype`."""
    if kind is None:
        kind = NodeKind.SLOT if children else NodeKind.VALUE
    return DialogTree(label, kind, tuple(children))


def empty_state() -> DialogTree:
    return DialogTree(USER, NodeKind.ROOT_USER)


def is_empty_state(tree: DialogTree) -> bool:
    return tree.kind is NodeKind.ROOT_USER and not tree.children


# ---------------------------------------------------------------------------
# labels and open values


def check_label(label: str) -> None:
    if not label or any(ch in _FORBIDDEN for ch in label):
        raise TreeError(f"invalid node label {label!r}")


def escape_open(text: str) -> str:
    return text.replace("\\", "\\\\").replace("[", "\\[").replace("]", "\\]")


def unescape_open(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            if i + 1 >= len(text) or text[i + 1] not in "\\[]":
                raise TreeError(f"unknown escape in open value {text!r}")
            out.append(text[i + 1])
            i += 2
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def open_value_token(text: str) -> str:
    return "[" + escape_open(text) + "]"


def is_open_token(token: str) -> bool:
    return len(token) >= 2 and token[0] == "[" and token[-1] == "]"


def parse_token(token: str) -> RawNode:
    if is_open_token(token):
        return RawNode(unescape_open(token[1:-1]), open=True)
    return RawNode(token)


# ---------------------------------------------------------------------------
# dotted text


def _split_path(path: str, lineno: int) -> list[str]:
    """Split ``a.b.[x.y]`` on dots outside open-value brackets."""
    parts: list[str] = []
    buf: list[str] = []
    depth = 0
    i = 0
    while i < len(path):
        ch = path[i]
        if ch == "\\" and depth:
            if i + 1 >= len(path):
                raise TreeError(f"line {lineno}: dangling escape")
            buf.append(path[i : i + 2])
            i += 2
            continue
        if ch == "[":
            if depth:
                raise TreeError(f"line {lineno}: nested '[' must be escaped")
            depth = 1
        elif ch == "]":
            if not depth:
                raise TreeError(f"line {lineno}: unbalanced ']'")
            depth = 0
        if ch == "." and not depth:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
        i += 1
    if depth:
        raise TreeError(f"line {lineno}: unterminated open value")
    parts.append("".join(buf))
    return parts


def _segments_to_chain(segments: list[str], lineno: int, check: bool) -> tuple[RawNode, RawNode]:
    head: RawNode | None = None
    tail: RawNode | None = None
    for seg in segments:
        seg = seg.strip()
        if not seg:
            raise TreeError(f"line {lineno}: empty label")
        if is_open_token(seg):
            try:
                n = RawNode(unescape_open(seg[1:-1]), open=True)
            except TreeError as exc:
                raise TreeError(f"line {lineno}: {exc}") from None
        else:
            if check:
                try:
                    check_label(seg)
                except TreeError as exc:
                    raise TreeError(f"line {lineno}: {exc}") from None
            n = RawNode(seg)
        if tail is None:
            head = n
        else:
            tail.children.append(n)
        tail = n
    assert head is not None and tail is not None
    return head, tail


def parse_forest(text: str, check_labels: bool = True) -> list[RawNode]:
    """Parse dotted text with any number of top-level lines into raw trees.

    Used for grammar fragments and patterns, whose labels may carry ``$``,
    ``?`` or ``-`` prefixes; pass ``check_labels=False`` for those.
    """
    lines = [(i + 1, ln.rstrip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln.strip()]
    roots: list[RawNode] = []
    if not lines:
        return roots
    unit: str | None = None
    # last node of the most recent line at each level
    tails: list[RawNode] = []
    for lineno, line in lines:
        body = line.lstrip(" \t")
        indent = line[: len(line) - len(body)]
        if indent:
            if " " in indent and "\t" in indent:
                raise TreeError(f"line {lineno}: mixed tabs and spaces in indentation")
            if unit is None:
                unit = indent
            elif indent[0] != unit[0]:
                raise TreeError(f"line {lineno}: mixed tabs and spaces in indentation")
            if len(indent) % len(unit):
                raise TreeError(f"line {lineno}: indentation is not a multiple of the unit")
            level = len(indent) // len(unit)
        else:
            level = 0
        if level > len(tails):
            raise TreeError(f"line {lineno}: indentation jumps more than one level")
        if level == 0:
            if body.startswith("."):
                raise TreeError(f"line {lineno}: top-level line cannot start with '.'")
            head, tail = _segments_to_chain(_split_path(body, lineno), lineno, check_labels)
            roots.append(head)
        else:
            if not body.startswith("."):
                raise TreeError(f"line {lineno}: indented line must start with '.'")
            head, tail = _segments_to_chain(_split_path(body[1:], lineno), lineno, check_labels)
            tails[level - 1].children.append(head)
        del tails[level:]
        tails.append(tail)
    return roots


def parse_dotted(text: str) -> DialogTree:
    roots = parse_forest(text)
    if not roots:
        raise TreeError("empty input")
    if len(roots) > 1:
        raise TreeError("dotted text has more than one root line")
    return build(roots[0])


def render_forest(nodes: Sequence[RawNode | DialogTree], indent: str = "  ") -> str:
    lines: list[str] = []
    for n in nodes:
        _render(_as_raw(n), 0, lines, indent, top=True)
    return "\n".join(lines)


def _as_raw(n: RawNode | DialogTree) -> RawNode:
    return to_raw(n) if isinstance(n, DialogTree) else n


def _raw_token(n: RawNode) -> str:
    return open_value_token(n.label) if n.open else n.label


def _render(n: RawNode, level: int, lines: list[str], indent: str, top: bool) -> None:
    parts = [_raw_token(n)]
    while len(n.children) == 1:
        n = n.children[0]
        parts.append(_raw_token(n))
    prefix = indent * level + ("" if top else ".")
    lines.append(prefix + ".".join(parts))
    for c in n.children:
        _render(c, level + 1, lines, indent, top=False)


def render_dotted(tree: DialogTree) -> str:
    return render_forest([tree])


# ---------------------------------------------------------------------------
# depth-first linearization


def linearize(tree: DialogTree) -> list[str]:
    out: list[str] = []
    stack: list[DialogTree | str] = [tree]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            out.append(item)
            continue
        out.append(item.token())
        if item.children:
            out.append(OPEN)
            stack.append(CLOSE)
            stack.extend(reversed(item.children))
    return out


@dataclass(frozen=True)
class Delinearized:
    tree: DialogTree
    repaired: bool


def delinearize(tokens: Sequence[str]) -> Delinearized:
    """Inverse of :func:`linearize`, total over arbitrary token sequences.

    Unclosed brackets are closed at the end, stray brackets and anything
    after the first complete tree are dropped; all of these set ``repaired``.
    """
    repaired = False
    root: RawNode | None = None
    stack: list[RawNode] = []
    last: RawNode | None = None
    toks = list(tokens)
    i = 0
    while i < len(toks):
        tok = toks[i]
        i += 1
        if tok == OPEN:
            if last is None:
                repaired = True
                continue
            stack.append(last)
            last = None
            continue
        if tok == CLOSE:
            last = None
            if not stack:
                repaired = True
                continue
            stack.pop()
            if not stack:
                if i < len(toks):
                    repaired = True
                break
            continue
        n = parse_token(tok) if _token_ok(tok) else RawNode(tok)
        if root is None:
            root = n
        elif not stack:
            # a second top-level node: keep the first tree only
            repaired = True
            break
        else:
            stack[-1].children.append(n)
        last = n
    if stack:
        repaired = True
    if root is None:
        return Delinearized(empty_state(), True)
    return Delinearized(build(root), repaired)


def _token_ok(tok: str) -> bool:
    if is_open_token(tok):
        try:
            unescape_open(tok[1:-1])
        except TreeError:
            return False
    return True


# ---------------------------------------------------------------------------
# node / parent form


@dataclass(frozen=True)
class NodeParentForm:
    nodes: tuple[str, ...]
    parents: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.nodes) != len(self.parents):
            raise TreeError("nodes and parents differ in length")
        for i, p in enumerate(self.parents):
            if i == 0:
                if p != ROOT_PARENT:
                    raise TreeError("parents[0] must be the root sentinel")
            elif not 0 <= p < i:
                raise TreeError(f"parents[{i}] = {p} must precede the node")


def to_node_parent_form(tree: DialogTree) -> NodeParentForm:
    nodes: list[str] = []
    parents: list[int] = []
    stack: list[tuple[DialogTree, int]] = [(tree, ROOT_PARENT)]
    while stack:
        n, p = stack.pop()
        idx = len(nodes)
        nodes.append(n.token())
        parents.append(p)
        stack.extend((c, idx) for c in reversed(n.children))
    return NodeParentForm(tuple(nodes), tuple(parents))


def raw_from_node_parent(nodes: Sequence[str], parents: Sequence[int]) -> RawNode:
    if not nodes:
        raise TreeError("empty node list")
    raws = [parse_token(t) for t in nodes]
    for i, p in enumerate(parents):
        if i == 0:
            if p != ROOT_PARENT:
                raise TreeError("parents[0] must be the root sentinel")
            continue
        if not 0 <= p < i:
            raise TreeError(f"parents[{i}] = {p} must precede the node")
        raws[p].children.append(raws[i])
    return raws[0]


def from_node_parent_form(npf: NodeParentForm) -> DialogTree:
    return build(raw_from_node_parent(npf.nodes, npf.parents))


# ---------------------------------------------------------------------------
# flattening


@dataclass(frozen=True, order=True)
class SlotValuePair:
    slot: str
    value: str

    def __str__(self) -> str:
        return f"({self.slot}, {self.value})"


def flatten(tree: DialogTree) -> frozenset[SlotValuePair]:
    """Collapse every domain-to-value path into a '+'-joined slot name.

    Verb nodes and the ``equals`` operator are dropped from the name.
    """
    if tree.kind is not NodeKind.ROOT_USER or not any(c.kind is NodeKind.DOMAIN for c in tree.children):
        raise TreeError("flatten needs a user state with a domain child")
    pairs: set[SlotValuePair] = set()
    for domain in tree.children:
        _flatten(domain, [], pairs)
    return frozenset(pairs)


def _flatten(n: DialogTree, prefix: list[str], out: set[SlotValuePair]) -> None:
    if n.kind.is_value:
        out.add(SlotValuePair("+".join(prefix), n.label))
        return
    keep = n.kind is not NodeKind.VERB and not (n.kind is NodeKind.OPERATOR and n.label == EQUALS)
    path = prefix + [n.label] if keep else prefix
    for c in n.children:
        _flatten(c, path, out)


def flatten_act(tree: DialogTree) -> frozenset[SlotValuePair]:
    """Flat view of a system act: every leaf becomes a pair, slot leaves get value ''."""
    pairs: set[SlotValuePair] = set()

    def walk(n: DialogTree, prefix: list[str]) -> None:
        keep = n.kind is not NodeKind.VERB and not (n.kind is NodeKind.OPERATOR and n.label == EQUALS)
        if not n.children:
            if n.kind.is_value:
                pairs.add(SlotValuePair("+".join(prefix), n.label))
            else:
                pairs.add(SlotValuePair("+".join(prefix + [n.label]), ""))
            return
        path = prefix + [n.label] if keep else prefix
        for c in n.children:
            walk(c, path)

    for c in tree.children:
        walk(c, [])
    return frozenset(pairs)


# ---------------------------------------------------------------------------
# equality, merging, addressing


def canonical(tree: DialogTree) -> tuple:
    """Order-insensitive canonical form: siblings sorted by their own canonical form."""
    kids = sorted(canonical(c) for c in tree.children)
    return (tree.label, tree.kind.value, tuple(kids))


def canonicalize(tree: DialogTree) -> DialogTree:
    """Same tree with siblings stored in canonical order."""
    kids = sorted((canonicalize(c) for c in tree.children), key=canonical)
    return DialogTree(tree.label, tree.kind, tuple(kids))


def tree_equal(a: DialogTree, b: DialogTree) -> bool:
    return canonical(a) == canonical(b)


def merge_states(prev: DialogTree, stack_top: DialogTree) -> DialogTree:
    """Join the previous state and the stack top under one synthetic root."""
    prev_child = DialogTree(EMPTY, NodeKind.MARKER) if is_empty_state(prev) else prev
    if tree_equal(prev, stack_top):
        top_child = DialogTree(SAME, NodeKind.MARKER)
    elif is_empty_state(stack_top):
        top_child = DialogTree(EMPTY, NodeKind.MARKER)
    else:
        top_child = stack_top
    return DialogTree(
        HISTORY,
        NodeKind.MARKER,
        (
            DialogTree(PREV, NodeKind.MARKER, (prev_child,)),
            DialogTree(STACKTOP, NodeKind.MARKER, (top_child,)),
        ),
    )


def split_merged(merged: DialogTree) -> tuple[DialogTree, DialogTree]:
    """Recover ``(prev, stack_top)`` from :func:`merge_states` output."""
    by_label = {c.label: c.children[0] for c in merged.children}
    prev = by_label[PREV]
    prev = empty_state() if prev.label == EMPTY else prev
    top = by_label[STACKTOP]
    if top.label == SAME:
        top = prev
    elif top.label == EMPTY:
        top = empty_state()
    return prev, top


def subtree_at(tree: DialogTree, path: Iterable[tuple[str, int]]) -> DialogTree:
    """Follow ``(label, occurrence)`` steps from the root; occurrence counts equal-label siblings."""
    cur = tree
    for label, occ in path:
        matches = [c for c in cur.children if c.label == label]
        if occ < 0 or occ >= len(matches):
            raise TreeError(f"path step ({label!r}, {occ}) does not resolve under {cur.label!r}")
        cur = matches[occ]
    return cur


def path_to(tree: DialogTree, target_index: int) -> list[tuple[str, int]]:
    """Address of the node at a pre-order index, as used by :func:`subtree_at`."""
    counter = 0

    def walk(n: DialogTree, path: list[tuple[str, int]]) -> list[tuple[str, int]] | None:
        nonlocal counter
        if counter == target_index:
            return path
        counter += 1
        seen: dict[str, int] = {}
        for c in n.children:
            k = seen.get(c.label, 0)
            seen[c.label] = k + 1
            found = walk(c, path + [(c.label, k)])
            if found is not None:
                return found
        return None

    found = walk(tree, [])
    if found is None:
        raise TreeError(f"no node at index {target_index}")
    return found


def intents(tree: DialogTree) -> frozenset[tuple[str, str]]:
    """(domain, verb) pairs directly under a user root."""
    out = set()
    for d in tree.children:
        verbs = [v.label for v in d.children if v.kind is NodeKind.VERB] or [""]
        for v in verbs:
            out.add((d.label, v))
    return frozenset(out)


# ---------------------------------------------------------------------------
# JSON


def to_json(tree: DialogTree) -> dict:
    return {"label": tree.label, "kind": tree.kind.value, "children": [to_json(c) for c in tree.children]}


def from_json(obj: dict) -> DialogTree:
    try:
        return DialogTree(obj["label"], NodeKind(obj["kind"]), tuple(from_json(c) for c in obj["children"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise TreeError(f"bad tree JSON: {exc}") from None


def dumps(tree: DialogTree) -> str:
    return json.dumps(to_json(tree), separators=(",", ":"))
