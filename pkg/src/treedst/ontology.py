"""Closed vocabulary of domains, verbs, actions, slots and values, and tree validation."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .tree import (
    EQUALS,
    REFERENCE,
    DialogTree,
    NodeKind,
    RawNode,
    TreeError,
    build,
)

DESK_ONTOLOGY = "desk_ontology_v1.json"


class OntologyError(ValueError):
    pass


@dataclass(frozen=True)
class SlotSpec:
    name: str
    slots: dict[str, "SlotSpec"] = field(default_factory=dict)
    values: tuple[str, ...] | None = None
    open: bool = False
    reference: tuple[str, ...] = ()
    flag: bool = False

    @property
    def is_composite(self) -> bool:
        return bool(self.slots)

    def takes_value(self) -> bool:
        return self.values is not None or self.open


@dataclass(frozen=True)
class Domain:
    name: str
    verbs: tuple[str, ...]
    slots: dict[str, SlotSpec]


@dataclass(frozen=True)
class Ontology:
    version: str
    domains: dict[str, Domain]
    verbs: frozenset[str]
    actions: frozenset[str]
    operators: frozenset[str]
    source: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def slot_names(self) -> set[str]:
        names: set[str] = set()

        def walk(spec: SlotSpec) -> None:
            names.add(spec.name)
            for s in spec.slots.values():
                walk(s)

        for d in self.domains.values():
            for s in d.slots.values():
                walk(s)
        return names


@dataclass(frozen=True)
class Violation:
    path: tuple[tuple[str, int], ...]
    kind: str
    message: str

    def __str__(self) -> str:
        where = ".".join(f"{lab}#{i}" if i else lab for lab, i in self.path) or "<root>"
        return f"{self.kind} at {where}: {self.message}"


def _no_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in pairs:
        if k in out:
            raise OntologyError(f"duplicate definition of {k!r}")
        out[k] = v
    return out


def _slot_spec(name: str, raw: dict, shared: dict, trail: tuple[str, ...]) -> SlotSpec:
    if not isinstance(raw, dict):
        raise OntologyError(f"slot {name!r}: spec must be an object")
    raw = dict(raw)
    if "include" in raw:
        target = raw.pop("include")
        if target in trail:
            raise OntologyError(f"cyclic shared include: {' -> '.join(trail + (target,))}")
        if target not in shared:
            raise OntologyError(f"slot {name!r}: unknown shared subtree {target!r}")
        base = _slot_spec(name, shared[target], shared, trail + (target,))
        if not raw:
            return base
        extra = _slot_spec(name, raw, shared, trail)
        return SlotSpec(
            name,
            {**base.slots, **extra.slots},
            base.values if extra.values is None else extra.values,
            base.open or extra.open,
            base.reference + extra.reference,
            base.flag or extra.flag,
        )
    unknown = set(raw) - {"slots", "values", "open", "reference", "flag"}
    if unknown:
        raise OntologyError(f"slot {name!r}: unknown keys {sorted(unknown)}")
    values = raw.get("values")
    if values is not None:
        if not values:
            raise OntologyError(f"categorical slot {name!r} has an empty vocabulary")
        values = tuple(str(v) for v in values)
    slots = {k: _slot_spec(k, v, shared, trail) for k, v in raw.get("slots", {}).items()}
    spec = SlotSpec(name, slots, values, bool(raw.get("open", False)), tuple(raw.get("reference", ())), bool(raw.get("flag", False)))
    if not (spec.slots or spec.takes_value() or spec.reference or spec.flag):
        raise OntologyError(f"slot {name!r} defines neither sub-slots, values, references nor a flag")
    return spec


def ontology_from_dict(cfg: dict) -> Ontology:
    domains_raw = cfg.get("domains") or {}
    if not domains_raw:
        raise OntologyError("ontology defines no domains")
    shared = cfg.get("shared", {})
    verbs = frozenset(cfg.get("verbs", ()))
    actions = frozenset(cfg.get("actions", ()))
    operators = frozenset(cfg.get("operators", (EQUALS,)))
    overlap = (verbs & actions) | (verbs & set(domains_raw)) | (actions & set(domains_raw))
    if overlap:
        raise OntologyError(f"labels used in more than one category: {sorted(overlap)}")
    domains: dict[str, Domain] = {}
    for name, d in domains_raw.items():
        dverbs = tuple(d.get("verbs", ()))
        bad = [v for v in dverbs if v not in verbs]
        if bad:
            raise OntologyError(f"domain {name!r} uses undeclared verbs {bad}")
        slots = {k: _slot_spec(k, v, shared, ()) for k, v in d.get("slots", {}).items()}
        domains[name] = Domain(name, dverbs, slots)
    for d in domains.values():
        for spec in _all_specs(d.slots.values()):
            missing = [r for r in spec.reference if r not in domains]
            if missing:
                raise OntologyError(f"slot {spec.name!r} references unknown domains {missing}")
    return Ontology(str(cfg.get("version", "unversioned")), domains, verbs, actions, operators, cfg)


def _all_specs(specs):
    for s in specs:
        yield s
        yield from _all_specs(s.slots.values())


def load_ontology(path: str | Path | None = None) -> Ontology:
    """Load an ontology config; ``None`` loads the shipped desk ontology."""
    try:
        if path is None:
            text = resources.files("treedst.data").joinpath(DESK_ONTOLOGY).read_text()
        else:
            text = Path(path).read_text()
        cfg = json.loads(text, object_pairs_hook=_no_duplicates)
    except json.JSONDecodeError as exc:
        raise OntologyError(f"cannot parse ontology: {exc}") from None
    return ontology_from_dict(cfg)


# ---------------------------------------------------------------------------
# validation


class _Walker:
    def __init__(self, ont: Ontology):
        self.ont = ont
        self.out: list[Violation] = []

    def flag(self, path, kind, msg):
        self.out.append(Violation(tuple(path), kind, msg))

    def category(self, label: str) -> str | None:
        if label in self.ont.domains:
            return "domain"
        if label in self.ont.verbs:
            return "verb"
        if label in self.ont.actions:
            return "action"
        if label in self.ont.operators:
            return "operator"
        return None

    def wrong(self, path, label, expected):
        cat = self.category(label)
        if cat is not None and cat != expected:
            self.flag(path, "kind_mismatch", f"{label!r} is a {cat}, expected a {expected}")
        else:
            self.flag(path, "unknown_label", f"unknown {expected} {label!r}")

    def children(self, n: DialogTree, path):
        seen: dict[str, int] = {}
        for c in n.children:
            k = seen.get(c.label, 0)
            seen[c.label] = k + 1
            yield c, path + [(c.label, k)]

    def root(self, t: DialogTree):
        if t.kind is NodeKind.ROOT_USER:
            if not t.children:
                return
            for c, p in self.children(t, []):
                self.domain(c, p, system=False)
        elif t.kind is NodeKind.ROOT_SYSTEM:
            for c, p in self.children(t, []):
                if c.label not in self.ont.actions:
                    self.wrong(p, c.label, "action")
                    continue
                for d, dp in self.children(c, p):
                    self.domain(d, dp, system=True)
        else:
            self.flag([], "kind_mismatch", f"root {t.label!r} is neither a user state nor a system act")

    def domain(self, n: DialogTree, path, system: bool):
        dom = self.ont.domains.get(n.label)
        if dom is None:
            self.wrong(path, n.label, "domain")
            return
        for v, vp in self.children(n, path):
            if v.label not in dom.verbs:
                self.wrong(vp, v.label, "verb")
                continue
            for s, sp in self.children(v, vp):
                self.top_slot(dom, s, sp, system)

    def top_slot(self, dom: Domain, n: DialogTree, path, system: bool):
        spec = dom.slots.get(n.label)
        if spec is None:
            self.wrong(path, n.label, "slot")
            return
        self.slot(spec, n, path, system)

    def slot(self, spec: SlotSpec, n: DialogTree, path, system: bool):
        if n.kind is not NodeKind.SLOT:
            self.flag(path, "kind_mismatch", f"{n.label!r} should be a slot, found {n.kind.value}")
            return
        if not n.children:
            if not (system or spec.flag):
                self.flag(path, "structure", f"slot {n.label!r} carries no operator")
            return
        for op, opp in self.children(n, path):
            if op.label not in self.ont.operators:
                self.wrong(opp, op.label, "operator")
                continue
            if not op.children:
                self.flag(opp, "structure", f"operator under {n.label!r} has no argument")
            for arg, ap in self.children(op, opp):
                self.argument(spec, arg, ap, system)

    def argument(self, spec: SlotSpec, n: DialogTree, path, system: bool):
        if n.kind is NodeKind.REFERENCE:
            if not spec.reference:
                self.flag(path, "kind_mismatch", f"slot {spec.name!r} does not accept references")
                return
            if len(n.children) != 1:
                self.flag(path, "structure", "reference must embed exactly one intent")
                return
            d = n.children[0]
            dp = path + [(d.label, 0)]
            if d.label not in self.ont.domains or d.label not in spec.reference:
                self.flag(dp, "unknown_reference_domain", f"{d.label!r} is not a referable domain here")
                return
            dom = self.ont.domains[d.label]
            for s, sp in self.children(d, dp):
                self.top_slot(dom, s, sp, system)
            return
        if n.kind is NodeKind.SLOT:
            sub = spec.slots.get(n.label)
            if sub is None:
                self.wrong(path, n.label, "slot")
                return
            self.slot(sub, n, path, system)
            return
        if n.kind is NodeKind.OPEN_VALUE:
            if not spec.open:
                self.flag(path, "kind_mismatch", f"slot {spec.name!r} takes no open values")
            return
        if n.kind is NodeKind.VALUE:
            if n.children:
                self.flag(path, "structure", "value nodes must be leaves")
            if spec.values is None:
                if n.label in spec.slots:
                    self.flag(path, "structure", f"slot {n.label!r} carries no operator")
                else:
                    self.flag(path, "kind_mismatch", f"slot {spec.name!r} takes no categorical values")
            elif n.label not in spec.values:
                self.flag(path, "value_outside_vocab", f"{n.label!r} not in vocabulary of {spec.name!r}")
            return
        self.flag(path, "kind_mismatch", f"unexpected {n.kind.value} {n.label!r}")


def validate(tree: DialogTree, ont: Ontology) -> list[Violation]:
    w = _Walker(ont)
    w.root(tree)
    return w.out


# ---------------------------------------------------------------------------
# random trees (test oracle input)


def _rand_value_arg(spec: SlotSpec, rng: random.Random, ont: Ontology, depth: int, prompt: bool, p_conj: float) -> list[RawNode]:
    if prompt:
        # prompts name sub-slots without values
        if spec.slots:
            names = rng.sample(sorted(spec.slots), rng.randint(1, len(spec.slots)))
            out = []
            for nm in names:
                sub = spec.slots[nm]
                if sub.slots and rng.random() < 0.5:
                    out.append(RawNode(nm, [RawNode(EQUALS, _rand_value_arg(sub, rng, ont, depth + 1, True, 0))]))
                else:
                    out.append(RawNode(nm))
            return out
        return []
    options = []
    if spec.values is not None:
        options.append("value")
    if spec.open:
        options.append("open")
    if spec.slots:
        options.append("slots")
    if spec.reference and depth < 3:
        options.append("reference")
    choice = rng.choice(options)
    if choice == "value":
        k = 2 if rng.random() < p_conj and len(spec.values) > 1 else 1
        return [RawNode(v) for v in rng.sample(spec.values, k)]
    if choice == "open":
        words = rng.sample(["pick", "up", "milk", "team", "sync", "call", "mom", "buy", "the", "tickets", "a.b", "x]y"], rng.randint(1, 3))
        return [RawNode(" ".join(words), open=True)]
    if choice == "slots":
        names = rng.sample(sorted(spec.slots), rng.randint(1, len(spec.slots)))
        return [_rand_slot(spec.slots[nm], rng, ont, depth + 1, False, p_conj) for nm in names]
    dom = ont.domains[rng.choice(spec.reference)]
    tops = [s for s in dom.slots.values() if s.slots]
    top = rng.choice(tops)
    return [RawNode(REFERENCE, [RawNode(dom.name, [_rand_slot(top, rng, ont, depth + 1, False, p_conj)])])]


def _rand_slot(spec: SlotSpec, rng: random.Random, ont: Ontology, depth: int, prompt: bool, p_conj: float) -> RawNode:
    if spec.flag:
        return RawNode(spec.name)
    if prompt and not spec.slots:
        return RawNode(spec.name)
    args = _rand_value_arg(spec, rng, ont, depth, prompt, p_conj)
    if not args:
        return RawNode(spec.name)
    return RawNode(spec.name, [RawNode(EQUALS, args)])


def _rand_intent(dom: Domain, rng: random.Random, ont: Ontology, system: bool, prompt: bool, p_conj: float) -> RawNode:
    verb = rng.choice(dom.verbs)
    candidates = [s for s in dom.slots.values() if not s.flag or system]
    k = rng.randint(0, min(2, len(candidates)))
    slots = [_rand_slot(s, rng, ont, 1, prompt, p_conj) for s in rng.sample(candidates, k)]
    if prompt:
        slots = [s for s in slots if s.children] or slots
    return RawNode(dom.name, [RawNode(verb, slots)])


def random_user_state(ont: Ontology, rng: random.Random, p_conj: float = 0.15, max_intents: int = 2) -> DialogTree:
    n = rng.randint(1, max_intents)
    doms = rng.sample(sorted(ont.domains), n)
    raw = RawNode("user", [_rand_intent(ont.domains[d], rng, ont, False, False, p_conj) for d in doms])
    return build(raw)


def random_system_act(ont: Ontology, rng: random.Random) -> DialogTree:
    acts = []
    for _ in range(rng.randint(1, 2)):
        action = rng.choice(sorted(ont.actions))
        if rng.random() < 0.1:
            acts.append(RawNode(action))
            continue
        dom = ont.domains[rng.choice(sorted(ont.domains))]
        acts.append(RawNode(action, [_rand_intent(dom, rng, ont, True, action == "prompt", 0.0)]))
    return build(RawNode("system", acts))


def random_tree(ont: Ontology, rng: random.Random) -> DialogTree:
    return random_user_state(ont, rng) if rng.random() < 0.7 else random_system_act(ont, rng)


__all__ = [
    "DESK_ONTOLOGY",
    "Domain",
    "Ontology",
    "OntologyError",
    "SlotSpec",
    "Violation",
    "load_ontology",
    "ontology_from_dict",
    "random_system_act",
    "random_tree",
    "random_user_state",
    "validate",
    "TreeError",
]
