"""Exact-match metrics, phenomenon breakdowns, per-turn curves and paired experiments.

Prediction dumps are JSONL, one turn per line::

    {"conv_id": str, "turn": int, "gold": tree, "pred": tree,
     "mode": "predicted" | "oracle", "decoder": "vanilla" | "pp",
     "tags": [tag, ...], "steps": int, "truncated": bool}

Trees use the JSON form of :func:`treedst.tree.to_json`. A dump may start with a
``{"type": "header", ...}`` line carrying the run configuration.
"""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .dataset import TAGS, Corpus, derive_flat_corpus, flat_pairs
from .model.data import build_vocabs, corpus_examples
from .model.ted import ModelConfig
from .model.track import TrackedTurn, track_corpus
from .model.train import Model, TrainConfig, train
from .simulator.simulate import Conversation
from .tree import DialogTree, TreeError, from_json, to_json, tree_equal

ALL = "all"
MIN_CONFIDENT = 30

# full-scale published numbers, reported as context only
PAPER_CONTEXT = {
    "test_em": {"TED-Vanilla": 0.622, "TED-PP": 0.622, "TED-Flat": 0.535},
    "breakdown_em": {"all": 0.647, "intent-change": 0.552, "compositional": 0.602, "multi-intent": 0.478},
    "epoch_seconds": {"TED-Vanilla": 2021, "TED-PP": 1794},
}


def exact_match(preds: Sequence[DialogTree], golds: Sequence[DialogTree]) -> float:
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold states")
    if not golds:
        return 0.0
    return sum(tree_equal(p, g) for p, g in zip(preds, golds)) / len(golds)


def flat_exact_match(preds: Sequence[DialogTree], golds: Sequence[DialogTree]) -> float:
    """Exact match on unordered slot-value sets."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold states")
    if not golds:
        return 0.0
    return sum(_pairs(p) is not None and _pairs(p) == _pairs(g) for p, g in zip(preds, golds)) / len(golds)


def _pairs(tree: DialogTree):
    # malformed predictions have no slot-value reading and never match
    try:
        return flat_pairs(tree)
    except TreeError:
        return None


@dataclass
class Bucket:
    em: float
    n: int
    correct: int

    @property
    def low_confidence(self) -> bool:
        return self.n < MIN_CONFIDENT

    def to_dict(self) -> dict[str, Any]:
        return {"em": self.em, "n": self.n, "correct": self.correct, "low_confidence": self.low_confidence}


def _bucket(hits: list[bool]) -> Bucket:
    c = sum(hits)
    return Bucket(c / len(hits), len(hits), c)


def breakdown(preds: Sequence[DialogTree], golds: Sequence[DialogTree], tags: Sequence[Sequence[str]]) -> dict[str, Bucket]:
    """EM over all turns and over each tag bucket; buckets without turns are left out."""
    if not (len(preds) == len(golds) == len(tags)):
        raise ValueError("predictions, golds and tags must align")
    hits = [tree_equal(p, g) for p, g in zip(preds, golds)]
    out: dict[str, Bucket] = {}
    if hits:
        out[ALL] = _bucket(hits)
    names = list(TAGS) + sorted({t for ts in tags for t in ts} - set(TAGS))
    for name in names:
        sel = [h for h, ts in zip(hits, tags) if name in ts]
        if sel:
            out[name] = _bucket(sel)
    return out


def overlap_counts(tags: Sequence[Sequence[str]]) -> dict[str, int]:
    """Turns carrying each pair of tags (buckets overlap)."""
    out: dict[str, int] = defaultdict(int)
    for ts in tags:
        s = sorted(set(ts))
        for i, a in enumerate(s):
            for b in s[i + 1 :]:
                out[f"{a}&{b}"] += 1
    return dict(out)


# ---------------------------------------------------------------------------
# prediction dumps


@dataclass
class PredictionRecord:
    conv_id: str
    turn: int
    gold: DialogTree
    pred: DialogTree
    mode: str
    decoder: str = ""
    tags: list[str] = field(default_factory=list)
    steps: int = 0
    truncated: bool = False

    @property
    def correct(self) -> bool:
        return tree_equal(self.pred, self.gold)

    def to_dict(self) -> dict[str, Any]:
        return {
            "conv_id": self.conv_id,
            "turn": self.turn,
            "gold": to_json(self.gold),
            "pred": to_json(self.pred),
            "mode": self.mode,
            "decoder": self.decoder,
            "tags": list(self.tags),
            "steps": self.steps,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PredictionRecord":
        return cls(
            str(d["conv_id"]), int(d["turn"]), from_json(d["gold"]), from_json(d["pred"]), d["mode"],
            d.get("decoder", ""), list(d.get("tags", [])), int(d.get("steps", 0)), bool(d.get("truncated", False)),
        )


def records_from_tracked(tracked: Iterable[TrackedTurn], convs: Iterable[Conversation], mode: str, decoder: str) -> list[PredictionRecord]:
    tags = {(c.id, i): list(t.tags) for c in convs for i, t in enumerate(c.turns)}
    return [
        PredictionRecord(t.conv_id, t.turn, t.gold, t.predicted, mode, decoder, tags.get((t.conv_id, t.turn), []), t.steps, t.truncated)
        for t in tracked
    ]


def write_predictions(records: Iterable[PredictionRecord], path: str | Path, meta: dict[str, Any] | None = None) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "header", "meta": meta or {}}) + "\n")
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")
            n += 1
    return n


def read_predictions(path: str | Path) -> tuple[list[PredictionRecord], dict[str, Any]]:
    records, meta = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                if d.get("type") == "header":
                    meta = d.get("meta", {})
                    continue
                records.append(PredictionRecord.from_dict(d))
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{lineno}: bad prediction record: {e}") from e
    return records, meta


# ---------------------------------------------------------------------------
# curves and reports


def by_turn_index(records: Iterable[PredictionRecord]) -> dict[str, dict[int, Bucket]]:
    """EM per (history mode, turn index)."""
    hits: dict[str, dict[int, list[bool]]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        hits[r.mode][r.turn].append(r.correct)
    return {m: {i: _bucket(h) for i, h in sorted(per.items())} for m, per in sorted(hits.items())}


def curves_csv(curves: dict[str, dict[int, Bucket]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "turn", "em", "n"])
    for mode, per in curves.items():
        for i, b in per.items():
            w.writerow([mode, i, f"{b.em:.6f}", b.n])
    return buf.getvalue()


@dataclass
class EvalReport:
    overall: dict[str, float]
    breakdown: dict[str, dict[str, Bucket]]
    curves: dict[str, dict[int, Bucket]]
    overlaps: dict[str, int]
    counts: dict[str, int]
    timing: dict[str, Any] = field(default_factory=dict)
    config: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "overall": self.overall,
            "breakdown": {m: {k: b.to_dict() for k, b in bs.items()} for m, bs in self.breakdown.items()},
            "curves": {m: {str(i): b.to_dict() for i, b in per.items()} for m, per in self.curves.items()},
            "overlaps": self.overlaps,
            "counts": self.counts,
            "timing": self.timing,
            "config": self.config,
            "paper_context": PAPER_CONTEXT,
        }

    def table(self) -> str:
        lines = []
        modes = list(self.overall)
        lines.append("bucket".ljust(16) + "".join(m.rjust(12) for m in modes) + "       n")
        names = [ALL] + [t for t in TAGS] + sorted({k for bs in self.breakdown.values() for k in bs} - {ALL, *TAGS})
        for name in names:
            cells = []
            n = 0
            for m in modes:
                b = self.breakdown.get(m, {}).get(name)
                cells.append("-".rjust(12) if b is None else f"{b.em:12.3f}")
                n = max(n, b.n if b else 0)
            if n == 0:
                continue
            flag = " *" if n < MIN_CONFIDENT else ""
            lines.append(name.ljust(16) + "".join(cells) + f"{n:8d}{flag}")
        lines.append("")
        lines.append("turn".ljust(16) + "".join(m.rjust(12) for m in self.curves) + "       n")
        idx = sorted({i for per in self.curves.values() for i in per})
        for i in idx:
            cells = [f"{per[i].em:12.3f}" if i in per else "-".rjust(12) for per in self.curves.values()]
            n = max(per[i].n for per in self.curves.values() if i in per)
            lines.append(str(i).ljust(16) + "".join(cells) + f"{n:8d}" + (" *" if n < MIN_CONFIDENT else ""))
        lines.append("(* fewer than %d turns)" % MIN_CONFIDENT)
        return "\n".join(lines)


def build_report(records: Sequence[PredictionRecord], config: dict[str, Any] | None = None, timing: dict[str, Any] | None = None) -> EvalReport:
    by_mode: dict[str, list[PredictionRecord]] = defaultdict(list)
    for r in records:
        by_mode[r.mode].append(r)
    overall, bds, counts = {}, {}, {}
    for m, rs in sorted(by_mode.items()):
        overall[m] = exact_match([r.pred for r in rs], [r.gold for r in rs])
        bds[m] = breakdown([r.pred for r in rs], [r.gold for r in rs], [r.tags for r in rs])
        counts[m] = len(rs)
    first = next(iter(sorted(by_mode)), None)
    overlaps = overlap_counts([r.tags for r in by_mode[first]]) if first else {}
    return EvalReport(overall, bds, by_turn_index(records), overlaps, counts, timing or {}, config or {})


def evaluate_model(model: Model, convs: Sequence[Conversation], modes: Sequence[str] = ("predicted", "oracle")) -> list[PredictionRecord]:
    out: list[PredictionRecord] = []
    for m in modes:
        out.extend(records_from_tracked(track_corpus(model, convs, m), convs, m, model.cfg.mode))
    return out


# ---------------------------------------------------------------------------
# paired experiments


@dataclass
class FlatVsTreeReport:
    tree_em: float
    flat_em: float
    tree_em_flattened: float
    dev_turns: int
    model_config: dict[str, Any]
    train_config: dict[str, Any]
    seeds: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["paper_context"] = {"tree": PAPER_CONTEXT["test_em"]["TED-Vanilla"], "flat": PAPER_CONTEXT["test_em"]["TED-Flat"]}
        return d


def compare_flat_vs_tree(train_corpus: Corpus, dev_corpus: Corpus, model_cfg: ModelConfig, train_cfg: TrainConfig) -> FlatVsTreeReport:
    """Train one architecture on tree targets and on flat targets; oracle-history EM on dev.

    ``tree_em`` uses tree equality, ``flat_em`` compares slot-value sets of the
    flat model's output, and ``tree_em_flattened`` scores the tree model's
    output after flattening on the same yardstick as ``flat_em``.
    """
    results = {}
    for kind, tr, dv in (
        ("tree", train_corpus, dev_corpus),
        ("flat", derive_flat_corpus(train_corpus), derive_flat_corpus(dev_corpus)),
    ):
        trx, dvx = corpus_examples(tr), corpus_examples(dv)
        model = Model.create(model_cfg, build_vocabs(trx))
        train(trx, dvx, model, train_cfg)
        results[kind] = (track_corpus(model, dv.conversations, "oracle"), dvx)
    tree_tracked, _ = results["tree"]
    flat_tracked, _ = results["flat"]
    tp, tg = [t.predicted for t in tree_tracked], [t.gold for t in tree_tracked]
    fp, fg = [t.predicted for t in flat_tracked], [t.gold for t in flat_tracked]
    return FlatVsTreeReport(
        exact_match(tp, tg),
        flat_exact_match(fp, fg),
        flat_exact_match(tp, tg),
        len(tg),
        model_cfg.to_dict(),
        train_cfg.to_dict(),
        {"model": model_cfg.seed, "train": train_cfg.seed, "corpus": train_corpus.meta.get("seeds")},
    )


@dataclass
class TimingReport:
    epoch_seconds: dict[str, list[float]]
    epochs: int
    examples: int

    @property
    def mean_seconds(self) -> dict[str, float]:
        return {m: sum(v) / len(v) for m, v in self.epoch_seconds.items() if v}

    @property
    def pp_over_vanilla(self) -> float:
        m = self.mean_seconds
        return m["pp"] / m["vanilla"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "epoch_seconds": self.epoch_seconds,
            "mean_seconds": self.mean_seconds,
            "pp_over_vanilla": self.pp_over_vanilla,
            "epochs": self.epochs,
            "examples": self.examples,
            "paper_context": PAPER_CONTEXT["epoch_seconds"],
        }


def compare_decoder_timing(train_corpus: Corpus, model_cfg: ModelConfig, train_cfg: TrainConfig, epochs: int = 3) -> TimingReport:
    """Per-epoch training wall time of both decoders on identical data and dims."""
    trx = corpus_examples(train_corpus)
    voc = build_vocabs(trx)
    cfg = TrainConfig.from_dict({**train_cfg.to_dict(), "max_epochs": epochs})
    times: dict[str, list[float]] = {}
    for mode in ("vanilla", "pp"):
        mc = ModelConfig.from_dict({**model_cfg.to_dict(), "mode": mode})
        res = train(trx, [], Model.create(mc, voc), cfg)
        times[mode] = res.epoch_seconds
    return TimingReport(times, epochs, len(trx))

