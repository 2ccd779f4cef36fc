"""Builder for the shipped desk grammar.

The JSON file under ``treedst/data`` is the output of :func:`build_desk_grammar`
(a test keeps the two in sync). Rules are generated from small per-intent
tables: every user state is described by the exact set of filled parts of each
intent in its frame, so state patterns pin that set with captures and absence
constraints and no optional captures are needed.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..tree import RawNode, open_value_token, parse_forest, render_forest

VERSION = "desk-grammar-1"

CITIES = ["London", "Paris", "Rome", "Berlin", "Madrid", "Boston", "Dublin", "Oslo"]
DATES = ["Today", "Tomorrow", "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"]
HOURS = [str(h) for h in range(1, 13)]
PEOPLE = ["Alice", "Bob", "Carol", "Dave", "Emma", "Frank"]
CUISINES = ["Italian", "Chinese", "Indian", "French", "Thai"]
ROOMS = ["GlassHouse", "Atrium", "RoomA", "RoomB", "Cafe"]
PRICES = ["45", "60", "89", "105", "120", "150", "210"]
TITLES = ["team sync", "budget review", "design chat", "project kickoff"]
CONTENTS = ["pick up milk", "call the bank", "see you soon", "running late", "buy tickets"]

VALUE_SETS = {
    "$city": CITIES,
    "$date": DATES,
    "$hour": HOURS,
    "$meridiem": ["AM", "PM"],
    "$person": PEOPLE,
    "$small": [str(n) for n in range(1, 7)],
    "$count": [str(n) for n in range(2, 10)],
    "$cuisine": CUISINES,
    "$room": ROOMS,
    "$price": PRICES,
    "$offset": ["1", "2", "3"],
}
OPEN_SETS = {"$title": TITLES, "$content": CONTENTS}


def _one(text: str) -> RawNode:
    (root,) = parse_forest(text, check_labels=False)
    return root


def _n(label: str, *kids: RawNode) -> RawNode:
    return RawNode(label, list(kids))


def _dotted(*roots: RawNode) -> str:
    return render_forest(list(roots))


@dataclass(frozen=True)
class Variant:
    # '@' in body and template is replaced with the part's alias prefix
    body: str
    template: str
    weight: float = 1.0

    def node(self, alias: str) -> RawNode:
        return _one(self.body.replace("@", alias))

    def text(self, alias: str) -> str:
        return self.template.replace("@", alias)


@dataclass(frozen=True)
class Part:
    name: str
    words: str
    variants: tuple[Variant, ...]


@dataclass(frozen=True)
class Finish:
    output: str
    template: str
    weight: float
    finishing: str
    # hand-written input pattern; None means the generic complete-state pattern
    input: str | None = None


@dataclass(frozen=True)
class Intent:
    domain: str
    verb: str
    phrase: str
    word: str
    parts: tuple[Part, ...]
    finish: tuple[Finish, ...]
    # part holding a date that a later time is added to (flight-style two-step)
    timed: str | None = None
    plural: str = ""


@dataclass(frozen=True)
class Frame:
    intents: tuple[Intent, ...]
    weight: float
    finish: tuple[Finish, ...] = ()

    @property
    def name(self) -> str:
        return "_".join(f"{i.domain}_{i.verb}" for i in self.intents)


def _city(slot: str, tpl: str) -> Part:
    return Part(slot, {"destination": "destination", "source": "departure city", "area": "area"}[slot],
                (Variant(f"{slot}.equals.location.equals.$city:@", tpl),))


def _date_only(slot: str, words: str, tpl: str = "on {@}") -> Part:
    return Part(slot, words, (Variant(f"{slot}.equals.date.equals.definedValue.equals.$date:@", tpl),))


def _date_time(slot: str, words: str) -> Part:
    body = f"{slot}.equals\n  .date.equals.definedValue.equals.$date:@_d\n  .time.equals\n    .hour.equals.$hour:@_h\n    .meridiem.equals.$meridiem:@_m"
    return Part(slot, words, (Variant(body, "on {@_d} at {@_h} {@_m}"),))


def _person(slot: str, words: str, tpl: str) -> Part:
    return Part(slot, words, (Variant(f"{slot}.equals.name.equals.$person:@", tpl),))


def _offer(domain: str, verb: str, tpl: str = "Here is your booking information . Please confirm .", w: float = 0.85) -> tuple[Finish, ...]:
    return (
        Finish(f"system.offer.{domain}.{verb}", tpl, w, "success"),
        Finish(f"system.failure.{domain}.{verb}", f"Sorry , I could not complete that {domain} request .", 1.0 - w, "failure"),
    )


def desk_intents() -> dict[str, Intent]:
    travel_dt = _date_only("departureDateTime", "departure date")
    intents = [
        Intent("flight", "book", "book me a flight", "flight",
               (_city("destination", "to {@}"), _city("source", "from {@}"), travel_dt),
               _offer("flight", "book"), timed="departureDateTime", plural="flights"),
        Intent("train", "book", "book a train", "train",
               (_city("destination", "to {@}"), _city("source", "from {@}"), travel_dt),
               _offer("train", "book"), timed="departureDateTime", plural="trains"),
        Intent("hotel", "book", "book a hotel", "hotel",
               (_city("area", "in {@}"), Part("checkInDate", "check-in date", (Variant("checkInDate.equals.definedValue.equals.$date:@", "from {@}"),)),
                Part("guests", "number of guests", (Variant("guests.equals.$small:@", "for {@} guests"),))),
               (Finish("system.offer.hotel.book.object.equals.price.equals.$price:price",
                       "The room costs {price} . Please confirm .", 0.85, "success"),
                Finish("system.failure.hotel.book", "Sorry , no rooms are left .", 0.15, "failure"))),
        Intent("restaurant", "book", "book a table", "restaurant",
               (Part("cuisine", "cuisine", (Variant("cuisine.equals.$cuisine:@", "for {@} food"),)),
                _city("area", "in {@}"), _date_time("dateTime", "date and time"),
                Part("partySize", "party size", (Variant("partySize.equals.$small:@", "for {@} people"),))),
               _offer("restaurant", "book")),
        Intent("taxi", "book", "get me a taxi", "taxi",
               (_city("destination", "to {@}"), _city("source", "from {@}"),
                Part("departureDateTime", "pickup time",
                     (Variant("departureDateTime.equals.time.equals\n  .hour.equals.$hour:@_h\n  .meridiem.equals.$meridiem:@_m",
                              "at {@_h} {@_m}"),))),
               _offer("taxi", "book")),
        Intent("calendarEvent", "create", "create a meeting", "meeting",
               (Part("title", "title", (Variant("title.equals.$title:@", "called {@}"),)),
                _date_time("dateTimeRange", "date and time"),
                _person("attendees", "attendees", "with {@}")),
               _offer("calendarEvent", "create", "I will add it to your calendar . Please confirm .")),
        Intent("calendarEvent", "checkExistence", "do I have any event", "calendar",
               (_date_only("dateTimeRange", "date"),),
               (Finish("system.inform.calendarEvent.find.notExisted", "No you do not have any event .", 0.5, "success"),
                Finish("system.inform.calendarEvent.find.count.equals.$count:count", "You have {count} events .", 0.5, "success"))),
        Intent("message", "create", "send a message", "message",
               (_person("recipient", "recipient", "to {@}"),
                Part("content", "message", (Variant("content.equals.$content:@", "saying {@}"),))),
               _offer("message", "create", "Ready to send . Please confirm .")),
        Intent("reminder", "create", "remind me", "reminder",
               (Part("content", "reminder text", (Variant("content.equals.$content:@", "to {@}"),)),
                _date_time("dateTime", "date and time")),
               _offer("reminder", "create", "I will set the reminder . Please confirm .")),
        Intent("navigation", "find", "give me directions", "directions",
               (Part("destination", "destination", (
                   Variant("destination.equals.location.equals.$city:@", "to {@}"),
                   Variant("destination.equals.reference.calendarEvent.object.equals.listOffset.equals.$offset:@",
                           "to my meeting number {@}", 0.8),
               )),),
               (Finish("system.inform.navigation.find", "Here is the route .", 1.0, "success",
                       "user\n  .-phone\n  .navigation.find.object.equals.destination.equals.location"),
                Finish("system.inform\n  .navigation.find\n  .calendarEvent.find.object.equals.location.equals.$room:room",
                       "Here is the direction to your meeting at the {room} .", 1.0, "success",
                       "user\n  .-phone\n  .navigation.find.object.equals.destination.equals.reference"))),
        Intent("phone", "call", "call", "call",
               (_person("recipient", "person to call", "{@}"),),
               _offer("phone", "call", "Calling now . Please confirm .", 0.9)),
    ]
    return {f"{i.domain}.{i.verb}": i for i in intents}


def desk_frames(intents: dict[str, Intent]) -> list[Frame]:
    single_w = {"flight.book": 3.0, "train.book": 1.5, "hotel.book": 2.0, "restaurant.book": 2.0, "taxi.book": 1.5,
                "calendarEvent.create": 2.0, "calendarEvent.checkExistence": 0.8, "message.create": 1.5,
                "reminder.create": 1.2, "navigation.find": 1.5, "phone.call": 1.0}
    frames = [Frame((intents[k],), w) for k, w in single_w.items() if k in intents]
    if "phone.call" in intents and "message.create" in intents:
        frames.append(Frame((intents["phone.call"], intents["message.create"]), 0.8, (
            Finish("system.offer\n  .phone.call\n  .message.create", "Calling and sending now . Please confirm .", 0.9, "success"),
            Finish("system.failure\n  .phone.call\n  .message.create", "Sorry , I could not do both .", 0.1, "failure"))))
    if "navigation.find" in intents and "phone.call" in intents:
        frames.append(Frame((intents["navigation.find"], intents["phone.call"]), 0.6, (
            Finish("system\n  .inform.navigation.find\n  .offer.phone.call", "Here is the route . Shall I call now ?", 0.9, "success"),
            Finish("system.failure\n  .navigation.find\n  .phone.call", "Sorry , I could not do both .", 0.1, "failure"))))
    return frames


# ---------------------------------------------------------------------------
# states of a frame


State = tuple[tuple[tuple[str, ...], bool], ...]  # per intent: (filled part names, timed)


def _alias(intent: Intent, part: Part) -> str:
    return f"{intent.domain}_{part.name}"


def _subsets(parts: Sequence[Part]) -> list[tuple[str, ...]]:
    names = [p.name for p in parts]
    out = []
    for r in range(1, len(names) + 1):
        for combo in itertools.combinations(names, r):
            out.append(combo)
    return out


def frame_states(frame: Frame) -> list[State]:
    per_intent = []
    for it in frame.intents:
        opts = []
        for sub in _subsets(it.parts):
            opts.append((sub, False))
            if it.timed and len(sub) == len(it.parts):
                opts.append((sub, True))
        per_intent.append(opts)
    return [tuple(s) for s in itertools.product(*per_intent)]


def _partners(frame: Frame, frames: Sequence[Frame]) -> list[str]:
    """Domains whose presence rules out this frame (multi-intent partners of a single intent)."""
    if len(frame.intents) > 1:
        return []
    dom = frame.intents[0].domain
    out: list[str] = []
    for f in frames:
        doms = [i.domain for i in f.intents]
        if len(doms) > 1 and dom in doms:
            out.extend(d for d in doms if d != dom and d not in out)
    return out


def _complete(it: Intent, filled: Sequence[str]) -> bool:
    return len(filled) == len(it.parts)


def _intent_pattern(it: Intent, filled: Sequence[str], timed: bool, split_date: bool = False) -> RawNode:
    kids = []
    for p in it.parts:
        var = _alias(it, p)
        if p.name not in filled:
            kids.append(_n("-" + p.name))
        elif p.name == it.timed and _complete(it, filled):
            if split_date:
                kids.append(_n(p.name, _n("equals", _n(f"?{var}_date=date"), _n("-time"))))
            else:
                kids.append(_n(f"?{var}={p.name}", _n("equals", _n("time" if timed else "-time"))))
        else:
            kids.append(_n(f"?{var}={p.name}"))
    return _n(it.domain, _n(it.verb, _n("object", _n("equals", *kids))))


def state_pattern(frame: Frame, state: State, partners: Sequence[str], split_date: bool = False) -> RawNode:
    kids = [_n("-" + d) for d in partners]
    for it, (filled, timed) in zip(frame.intents, state):
        kids.append(_intent_pattern(it, filled, timed, split_date))
    return _n("user", *kids)


def _missing(frame: Frame, state: State) -> list[tuple[int, Part]]:
    out = []
    for i, (it, (filled, _)) in enumerate(zip(frame.intents, state)):
        out.extend((i, p) for p in it.parts if p.name not in filled)
    return out


def _state_output(frame: Frame, state: State, new: Sequence[tuple[int, Part]]) -> tuple[RawNode, str]:
    new_names = {(i, p.name) for i, p in new}
    kids = []
    for i, (it, (filled, _)) in enumerate(zip(frame.intents, state)):
        eq = []
        for p in it.parts:
            if p.name in filled:
                eq.append(_n("?" + _alias(it, p)))
            elif (i, p.name) in new_names:
                eq.append(p.variants[0].node(_alias(it, p)))
        kids.append(_n(it.domain, _n(it.verb, _n("object", _n("equals", *eq)))))
    words = [p.variants[0].text(_alias(frame.intents[i], p)) for i, p in new]
    return _n("user", *kids), " ".join(words)


def _prompt_act(frame: Frame, asked: Sequence[tuple[int, Part]], absent_next: tuple[int, Part] | None) -> RawNode:
    """Prompt act; as an input pattern, ``absent_next`` pins that the next missing part was not asked."""
    kids = []
    for i, it in enumerate(frame.intents):
        labels = [p.name for j, p in asked if j == i]
        if labels:
            extra = [_n("-" + absent_next[1].name)] if absent_next and absent_next[0] == i else []
            kids.append(_n(it.domain, _n(it.verb, _n("object", _n("equals", *[_n(x) for x in labels], *extra)))))
        elif absent_next and absent_next[0] == i:
            kids.append(_n("-" + it.domain))
    return _n("system", _n("prompt", *kids))


def _prompt_output(frame: Frame, asked: Sequence[tuple[int, Part]]) -> RawNode:
    return _prompt_act(frame, asked, None)


def _t2_act(it: Intent) -> RawNode:
    return _one(
        f"system\n"
        f"  .prompt.{it.domain}.{it.verb}.object.equals.{it.timed}.equals.time\n"
        f"  .inform.{it.domain}.find\n"
        f"    .count.equals.$count:count\n"
        f"    .object.equals\n"
        f"      .{it.timed}.equals.time.equals\n"
        f"        .hour.equals.$hour:hour\n"
        f"        .meridiem.equals.$meridiem:meridiem\n"
        f"      .price.equals.$price:price"
    )


def _t2_template(it: Intent) -> str:
    return f"I found {{count}} {it.plural} for you . The earliest one departs at {{hour}} {{meridiem}} with a cost of {{price}} . Would you like it ?"


# ---------------------------------------------------------------------------
# rule generation


@dataclass
class _Rules:
    ptsg: list[dict] = field(default_factory=list)
    response: list[dict] = field(default_factory=list)
    update: list[dict] = field(default_factory=list)


def _value_rules(r: _Rules) -> None:
    for nt, values in VALUE_SETS.items():
        for v in values:
            r.ptsg.append({"id": f"{nt[1:]}:{v}", "lhs": nt, "rhs": v, "weight": 1.0, "template": v})
    for nt, values in OPEN_SETS.items():
        for k, v in enumerate(values):
            tok = open_value_token(v)
            r.ptsg.append({"id": f"{nt[1:]}:{k}", "lhs": nt, "rhs": tok, "weight": 1.0, "template": tok})


def _start_rules(r: _Rules, frames: Sequence[Frame]) -> None:
    for fr in frames:
        r.ptsg.append({"id": f"start:{fr.name}", "lhs": "$start", "rhs": f"$start_{fr.name}:goal",
                       "weight": fr.weight, "template": "{goal}"})
        per_intent = []
        for it in fr.intents:
            opts = []
            for sub in _subsets(it.parts):
                parts = [p for p in it.parts if p.name in sub]
                choices = [p.variants if len(fr.intents) == 1 else p.variants[:1] for p in parts]
                for pick in itertools.product(*choices):
                    opts.append((it, parts, pick))
            per_intent.append(opts)
        for n, combo in enumerate(itertools.product(*per_intent)):
            roots, phrases, weight = [], [], 1.0
            for it, parts, pick in combo:
                eq = [v.node(_alias(it, p)) for p, v in zip(parts, pick)]
                roots.append(_n(it.domain, _n(it.verb, _n("object", _n("equals", *eq)))))
                phrases.append(" ".join([it.phrase] + [v.text(_alias(it, p)) for p, v in zip(parts, pick)]))
                for v in pick:
                    weight *= v.weight
            r.ptsg.append({"id": f"goal:{fr.name}:{n}", "lhs": f"$start_{fr.name}", "rhs": _dotted(_n("user", *roots)),
                           "weight": round(weight, 6), "template": " and ".join(phrases)})


def _response_rules(r: _Rules, frames: Sequence[Frame]) -> None:
    for fr in frames:
        partners = _partners(fr, frames)
        for sn, st in enumerate(frame_states(fr)):
            pat = _dotted(state_pattern(fr, st, partners))
            miss = _missing(fr, st)
            rid = f"resp:{fr.name}:{sn}"
            if miss:
                for k, w in ((1, 0.6), (2, 0.4)):
                    if len(miss) < k:
                        continue
                    asked = miss[:k]
                    words = " and ".join(p.words for _, p in asked)
                    r.response.append({"id": f"{rid}:ask{k}", "input": pat, "output": _dotted(_prompt_output(fr, asked)),
                                       "weight": w, "template": f"Sure , what is the {words} ?", "finishing": None})
                continue
            timed_open = [it for it, (_, timed) in zip(fr.intents, st) if it.timed and not timed]
            if timed_open:
                it = timed_open[0]
                r.response.append({"id": f"{rid}:t2", "input": pat, "output": _dotted(_t2_act(it)), "weight": 1.0,
                                   "template": _t2_template(it), "finishing": None})
                continue
            finishes = fr.finish or fr.intents[0].finish
            for k, f in enumerate(finishes):
                r.response.append({"id": f"{rid}:fin{k}", "input": f.input or pat, "output": f.output,
                                   "weight": f.weight, "template": f.template, "finishing": f.finishing})
    r.response.append({"id": "resp:catchall", "input": "user", "output": "system.failure", "weight": 0.001,
                       "template": "Sorry , I can not help with that .", "finishing": "failure"})


def _continue_rules(r: _Rules, frames: Sequence[Frame]) -> None:
    for fr in frames:
        partners = _partners(fr, frames)
        resume_prefix = "back to my " + " and ".join(it.word for it in fr.intents) + " ."
        for sn, st in enumerate(frame_states(fr)):
            miss = _missing(fr, st)
            base = f"{fr.name}:{sn}"
            answers = []
            if miss:
                a_pat = _dotted(state_pattern(fr, st, partners))
                for k in (1, 2):
                    if len(miss) < k:
                        continue
                    asked = miss[:k]
                    nxt = miss[1] if k == 1 and len(miss) > 1 else None
                    b_pat = _dotted(_prompt_act(fr, asked, nxt))
                    variants = [("full", asked, 1.0)]
                    if k == 2:
                        variants.append(("under", asked[:1], 0.3))
                    if len(miss) > k:
                        variants.append(("over", miss[: k + 1], 0.3))
                    for tag, new, w in variants:
                        out, words = _state_output(fr, st, new)
                        answers.append((f"{base}:ask{k}:{tag}", a_pat, b_pat, _dotted(out), w, words))
            else:
                timed_open = [(i, it) for i, (it, (_, timed)) in enumerate(zip(fr.intents, st)) if it.timed and not timed]
                if not timed_open:
                    continue
                _, it = timed_open[0]
                a_pat = _dotted(state_pattern(fr, st, partners, split_date=True))
                copy_b = f"system.inform.{it.domain}.find.object.equals.{it.timed}.equals.?picked=time"
                ask_b = f"system.prompt.{it.domain}.{it.verb}.object.equals.{it.timed}.equals.time"
                kept = [_n("?" + _alias(it, p)) for p in it.parts if p.name != it.timed]
                date = _n("?" + _alias(it, next(p for p in it.parts if p.name == it.timed)) + "_date")
                copied = _n("user", _n(it.domain, _n(it.verb, _n("object", _n("equals", *kept, _n(it.timed, _n("equals", date, _n("?picked"))))))))
                fresh_time = _one("time.equals\n  .hour.equals.$hour:t_h\n  .meridiem.equals.$meridiem:t_m")
                fresh = _n("user", _n(it.domain, _n(it.verb, _n("object", _n("equals", *kept, _n(it.timed, _n("equals", date, fresh_time)))))))
                answers.append((f"{base}:t2:copy", a_pat, copy_b, _dotted(copied), 1.0, f"I would book the earliest one"))
                answers.append((f"{base}:t2:fresh", a_pat, ask_b, _dotted(fresh), 0.4, "I prefer {t_h} {t_m}"))
            for rid, a, b, out, w, words in answers:
                r.update.append({"id": f"cont:{rid}", "kind": "continue", "input_state": a, "input_act": b,
                                 "output": out, "weight": w, "template": words})
                r.update.append({"id": f"resume:{rid}", "kind": "resume", "input_state": a, "input_act": b,
                                 "output": out, "weight": w, "template": f"{resume_prefix} {words}"})


def _new_goal_rules(r: _Rules, frames: Sequence[Frame], intents: dict[str, Intent]) -> None:
    have = {it.domain for f in frames for it in f.intents}
    # co-reference: reuse a date from the current goal
    if "calendarEvent" in have:
        sources = [("flight", "book", "departureDateTime"), ("train", "book", "departureDateTime"),
                   ("restaurant", "book", "dateTime"), ("calendarEvent", "create", "dateTimeRange"),
                   ("reminder", "create", "dateTime")]
        for dom, verb, slot in sources:
            if f"{dom}.{verb}" not in intents:
                continue
            r.update.append({"id": f"new:check_day:{dom}", "kind": "new-goal",
                             "input_state": f"user.{dom}.{verb}.object.equals.{slot}.equals.?day=date", "input_act": None,
                             "output": "user.calendarEvent.checkExistence.object.equals.dateTimeRange.equals.?day",
                             "weight": 0.12, "template": "do I have any calendar event on that day ?"})
    # co-reference: reuse a location
    if "hotel" in have:
        for dom in ("flight", "train", "taxi"):
            if f"{dom}.book" not in intents:
                continue
            r.update.append({"id": f"new:hotel_there:{dom}", "kind": "new-goal",
                             "input_state": f"user.{dom}.book.object.equals.destination.equals.?place=location",
                             "input_act": None, "output": "user.hotel.book.object.equals.area.equals.?place",
                             "weight": 0.12, "template": "I also need a hotel there"})
    for fr in frames:
        doms = [it.domain for it in fr.intents]
        a = _dotted(_n("user", *[_n("-" + d) for d in doms]))
        r.update.append({"id": f"new:fresh:{fr.name}", "kind": "new-goal", "input_state": a, "input_act": None,
                         "output": f"$start_{fr.name}:goal", "weight": round(0.012 * fr.weight, 6), "template": "{goal}"})


def build_desk_grammar(domains: Iterable[str] | None = None) -> dict:
    """Grammar config for the desk ontology, optionally restricted to some domains."""
    intents = desk_intents()
    if domains is not None:
        keep = set(domains)
        unknown = keep - {i.domain for i in intents.values()}
        if unknown:
            raise ValueError(f"unknown domains: {sorted(unknown)}")
        intents = {k: v for k, v in intents.items() if v.domain in keep}
    frames = desk_frames(intents)
    r = _Rules()
    _value_rules(r)
    _start_rules(r, frames)
    _response_rules(r, frames)
    _continue_rules(r, frames)
    _new_goal_rules(r, frames, intents)
    return {
        "version": VERSION if domains is None else f"{VERSION}+{'-'.join(sorted(set(domains)))}",
        "start": "$start",
        "ptsg": r.ptsg,
        "response": r.response,
        "update": r.update,
        "failure_act": {"output": "system.failure", "template": "Sorry , I can not help with that ."},
        "settings": {"end_prob": 0.6, "max_turns": 12, "max_depth": 8},
    }


def write_desk_grammar(path: str | Path, domains: Iterable[str] | None = None) -> None:
    Path(path).write_text(json.dumps(build_desk_grammar(domains), indent=1) + "\n")


if __name__ == "__main__":  # pragma: no cover
    import sys

    write_desk_grammar(sys.argv[1] if len(sys.argv) > 1 else "desk_grammar_v1.json")
