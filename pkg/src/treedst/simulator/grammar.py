"""Grammar rules for the simulator: PTSG expansion, response and update transformations.

All three rule families share the dotted fragment syntax of :mod:`.patterns`
and carry an utterance template whose ``{name}`` slots are filled in step
with the expansion (child derivations, captured subtrees, literal strings).
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..tree import DialogTree, NodeKind, RawNode, TreeError, build, open_value_token, parse_forest
from .patterns import (
    Bindings,
    OutputPattern,
    PatNode,
    match_pattern,
    parse_output,
    parse_pattern,
    realize,
    split_nonterminal,
    top_labels,
)

DESK_GRAMMAR = "desk_grammar_v1.json"
UPDATE_KINDS = ("new-goal", "continue", "resume")
FINISHING = ("success", "failure")


class GrammarError(ValueError):
    pass


class TemplateError(KeyError):
    pass


# ---------------------------------------------------------------------------
# rules


@dataclass(frozen=True)
class TsgRule:
    id: str
    lhs: str
    rhs: tuple[RawNode, ...]
    weight: float
    template: str
    rhs_text: str = ""

    def nonterminals(self) -> list[tuple[str, str]]:
        return parse_output(self.rhs_text).nonterminals()


@dataclass(frozen=True)
class ResponseRule:
    id: str
    input: PatNode
    output: OutputPattern
    weight: float
    template: str
    finishing: str | None = None
    prefilter: frozenset[str] = frozenset()


@dataclass(frozen=True)
class UpdateRule:
    id: str
    kind: str
    input_state: PatNode
    input_act: PatNode | None
    output: OutputPattern
    weight: float
    template: str
    prefilter: frozenset[str] = frozenset()
    # a subtree travels from dialog history into a new position
    copies_history: bool = False


@dataclass(frozen=True)
class Grammar:
    version: str
    start: str
    ptsg: Mapping[str, tuple[TsgRule, ...]]
    response: tuple[ResponseRule, ...]
    update: tuple[UpdateRule, ...]
    failure_act: OutputPattern
    failure_template: str
    settings: Mapping[str, Any] = field(default_factory=dict)
    source: Mapping[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def setting(self, key: str, default: Any) -> Any:
        return self.settings.get(key, default)


def _fragment(text: str) -> tuple[RawNode, ...]:
    return tuple(parse_forest(text, check_labels=False)) if text.strip() else ()


def grammar_from_dict(cfg: Mapping[str, Any]) -> Grammar:
    ids: set[str] = set()

    def fresh(rid: str) -> str:
        if rid in ids:
            raise GrammarError(f"duplicate rule id {rid!r}")
        ids.add(rid)
        return rid

    ptsg: dict[str, list[TsgRule]] = {}
    try:
        for r in cfg.get("ptsg", ()):
            w = float(r.get("weight", 1.0))
            if w <= 0:
                raise GrammarError(f"PTSG rule {r['id']!r} needs a positive weight")
            lhs = r["lhs"]
            if not lhs.startswith("$"):
                raise GrammarError(f"PTSG lhs {lhs!r} must start with '$'")
            rule = TsgRule(fresh(r["id"]), lhs, _fragment(r["rhs"]), w, r.get("template", ""), r["rhs"])
            ptsg.setdefault(lhs, []).append(rule)
        response = []
        for r in cfg.get("response", ()):
            pat = parse_pattern(r["input"])
            fin = r.get("finishing")
            if fin is not None and fin not in FINISHING:
                raise GrammarError(f"rule {r['id']!r}: finishing must be one of {FINISHING}")
            rule = ResponseRule(fresh(r["id"]), pat, parse_output(r["output"]), float(r.get("weight", 1.0)), r.get("template", ""), fin, top_labels(pat))
            _check_captures(rule.id, rule.output, set(pat.variables()))
            response.append(rule)
        update = []
        for r in cfg.get("update", ()):
            kind = r["kind"]
            if kind not in UPDATE_KINDS:
                raise GrammarError(f"rule {r['id']!r}: unknown update kind {kind!r}")
            a = parse_pattern(r["input_state"])
            b = parse_pattern(r["input_act"]) if r.get("input_act") else None
            out = parse_output(r["output"])
            a_vars, b_vars = set(a.variables()), set(b.variables()) if b else set()
            clash = a_vars & b_vars
            if clash:
                raise GrammarError(f"rule {r['id']!r}: variables bound by both inputs: {sorted(clash)}")
            _check_captures(r["id"], out, a_vars | b_vars)
            used = out.captures()
            copies = bool(used & b_vars) or (kind == "new-goal" and bool(used & a_vars))
            update.append(
                UpdateRule(fresh(r["id"]), kind, a, b, out, float(r.get("weight", 1.0)), r.get("template", ""), top_labels(a), copies)
            )
        fail = cfg["failure_act"]
        failure_act = parse_output(fail["output"])
    except KeyError as exc:
        raise GrammarError(f"missing field {exc}") from None
    except TreeError as exc:
        raise GrammarError(str(exc)) from None
    for rules in ptsg.values():
        for rule in rules:
            for name, _ in rule.nonterminals():
                if name not in ptsg:
                    raise GrammarError(f"rule {rule.id!r} uses {name!r}, which no rule expands")
    for rule in list(response) + list(update):
        for name, _ in rule.output.nonterminals():
            if name not in ptsg:
                raise GrammarError(f"rule {rule.id!r} uses {name!r}, which no rule expands")
    start = cfg.get("start", "$start")
    if start not in ptsg:
        raise GrammarError(f"start symbol {start!r} has no rules")
    return Grammar(
        str(cfg.get("version", "unversioned")),
        start,
        {k: tuple(v) for k, v in ptsg.items()},
        tuple(response),
        tuple(update),
        failure_act,
        fail.get("template", ""),
        dict(cfg.get("settings", {})),
        cfg,
    )


def _check_captures(rid: str, out: OutputPattern, bound: set[str]) -> None:
    missing = out.captures() - bound
    if missing:
        raise GrammarError(f"rule {rid!r}: output copies unbound captures {sorted(missing)}")


def load_grammar(path: str | Path | None = None) -> Grammar:
    if path is None:
        text = resources.files("treedst.data").joinpath(DESK_GRAMMAR).read_text()
    else:
        text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GrammarError(f"cannot parse grammar: {exc}") from None
    return grammar_from_dict(cfg)


# ---------------------------------------------------------------------------
# templates


_SLOT = re.compile(r"\{([A-Za-z_][\w]*)\}")


@dataclass
class Derivation:
    """One PTSG expansion: the rule used, its rendered text and sub-derivations."""

    rule_id: str
    forest: list[RawNode]
    text: str
    children: dict[str, "Derivation"] = field(default_factory=dict)

    def rule_ids(self) -> list[str]:
        out = [self.rule_id]
        for c in self.children.values():
            out.extend(c.rule_ids())
        return out


def _surface(tree: DialogTree) -> str:
    return " ".join(n.token() for n in tree.nodes() if n.kind.is_value)


def render_template(template: str, bindings: Mapping[str, Any]) -> str:
    """Fill ``{name}`` slots; sub-derivations render through their own templates."""

    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in bindings:
            raise TemplateError(f"template slot {{{key}}} is unbound")
        val = bindings[key]
        if val is None:
            return ""
        if isinstance(val, Derivation):
            return val.text
        if isinstance(val, DialogTree):
            return _surface(val)
        if isinstance(val, RawNode):
            return _raw_surface(val)
        return str(val)

    return " ".join(_SLOT.sub(sub, template).split())


def _raw_surface(n: RawNode) -> str:
    out: list[str] = []

    def walk(r: RawNode) -> None:
        if not r.children:
            out.append(open_value_token(r.label) if r.open else r.label)
        for c in r.children:
            walk(c)

    walk(n)
    return " ".join(out)


# ---------------------------------------------------------------------------
# sampling


def weighted_index(weights: Sequence[float], rng: random.Random) -> int:
    total = float(sum(weights))
    if not total > 0:
        raise GrammarError("all candidate weights are zero")
    r = rng.random() * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if r < acc and w > 0:
            return i
    # float round-off: fall back to the last positive weight
    return max(i for i, w in enumerate(weights) if w > 0)


def _copy_raw(n: RawNode) -> RawNode:
    return RawNode(n.label, [_copy_raw(c) for c in n.children], n.open)


def expand_nonterminal(grammar: Grammar, name: str, rng: random.Random, depth: int = 0) -> Derivation:
    cap = int(grammar.setting("max_depth", 32))
    if depth > cap:
        raise GrammarError(f"derivation depth exceeds {cap} while expanding {name!r}")
    rules = grammar.ptsg.get(name)
    if not rules:
        raise GrammarError(f"no rule expands {name!r}")
    rule = rules[weighted_index([r.weight for r in rules], rng)]
    children: dict[str, Derivation] = {}

    def expand(nt: str, alias: str) -> list[RawNode]:
        d = expand_nonterminal(grammar, nt, rng, depth + 1)
        children[alias] = d
        return d.forest

    forest = realize(OutputPattern(tuple(_copy_raw(r) for r in rule.rhs), rule.rhs_text), {}, expand)
    text = render_template(rule.template, children)
    return Derivation(rule.id, forest, text, children)


def sample_initial_state(grammar: Grammar, rng: random.Random, start: str | None = None) -> tuple[DialogTree, str, Derivation]:
    d = expand_nonterminal(grammar, start or grammar.start, rng)
    if len(d.forest) != 1:
        raise GrammarError(f"start symbol derived {len(d.forest)} roots")
    tree = build(d.forest[0])
    if tree.kind is not NodeKind.ROOT_USER:
        raise GrammarError("start symbol must derive a user state")
    return tree, d.text, d


@dataclass
class Applied:
    """Result of applying a response or update rule."""

    tree: DialogTree
    utterance: str
    rule_id: str
    derivations: dict[str, Derivation]


def _apply(grammar: Grammar, out: OutputPattern, template: str, rule_id: str, bindings: Bindings, rng: random.Random) -> Applied:
    derivs: dict[str, Derivation] = {}

    def expand(nt: str, alias: str) -> list[RawNode]:
        d = expand_nonterminal(grammar, nt, rng)
        derivs[alias] = d
        return d.forest

    forest = realize(out, bindings, expand)
    if len(forest) != 1:
        raise GrammarError(f"rule {rule_id!r} produced {len(forest)} roots")
    tree = build(forest[0])
    slots: dict[str, Any] = dict(bindings)
    slots.update(derivs)
    return Applied(tree, render_template(template, slots), rule_id, derivs)


def _candidates(rules, tree: DialogTree) -> list:
    labels = {c.token() for c in tree.children}
    return [r for r in rules if r.prefilter <= labels]


@dataclass
class SystemResponse(Applied):
    finishing: str | None = None


def generate_system_act(state: DialogTree, grammar: Grammar, rng: random.Random) -> SystemResponse:
    """Sample a response rule in proportion to weight among all matching rules."""
    matches: list[tuple[ResponseRule, list[Bindings]]] = []
    for rule in _candidates(grammar.response, state):
        found = match_pattern(rule.input, state)
        if found:
            matches.append((rule, found))
    if not matches:
        raise GrammarError("no response rule matches the user state:\n" + str(state))
    rule, found = matches[weighted_index([r.weight for r, _ in matches], rng)]
    bindings = found[rng.randrange(len(found))]
    ap = _apply(grammar, rule.output, rule.template, rule.id, bindings, rng)
    if ap.tree.kind is not NodeKind.ROOT_SYSTEM:
        raise GrammarError(f"response rule {rule.id!r} did not produce a system act")
    return SystemResponse(ap.tree, ap.utterance, ap.rule_id, ap.derivations, rule.finishing)


def failure_response(grammar: Grammar, rng: random.Random) -> SystemResponse:
    ap = _apply(grammar, grammar.failure_act, grammar.failure_template, "failure_act", {}, rng)
    return SystemResponse(ap.tree, ap.utterance, ap.rule_id, ap.derivations, "failure")


@dataclass
class UpdateResult(Applied):
    kind: str = "continue"
    copies_history: bool = False


def matching_updates(grammar: Grammar, kinds: Sequence[str], state: DialogTree, act: DialogTree | None) -> list[tuple[UpdateRule, list[Bindings]]]:
    out = []
    for rule in _candidates(grammar.update, state):
        if rule.kind not in kinds:
            continue
        a = match_pattern(rule.input_state, state)
        if not a:
            continue
        if rule.input_act is None:
            combos = a
        else:
            if act is None:
                continue
            b = match_pattern(rule.input_act, act)
            if not b:
                continue
            combos = [{**x, **y} for x in a for y in b]
        out.append((rule, combos))
    return out


def apply_update(grammar: Grammar, kinds: Sequence[str], state: DialogTree, act: DialogTree | None, rng: random.Random) -> UpdateResult:
    matches = matching_updates(grammar, kinds, state, act)
    if not matches:
        raise GrammarError(f"no {'/'.join(kinds)} update rule matches the stack top:\n{state}\n{act}")
    rule, combos = matches[weighted_index([r.weight for r, _ in matches], rng)]
    bindings = combos[rng.randrange(len(combos))]
    ap = _apply(grammar, rule.output, rule.template, rule.id, bindings, rng)
    if ap.tree.kind is not NodeKind.ROOT_USER:
        raise GrammarError(f"update rule {rule.id!r} did not produce a user state")
    return UpdateResult(ap.tree, ap.utterance, ap.rule_id, ap.derivations, rule.kind, rule.copies_history)
