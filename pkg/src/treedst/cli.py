"""Command line entry point: ``treedst <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .dataset import DEFAULT_RATIOS, Corpus, annotate, compute_stats, derive_flat_corpus, read_corpus, split_corpus, write_corpus
from .evaluation import build_report, curves_csv, evaluate_model, read_predictions, write_predictions
from .model.data import build_vocabs, corpus_examples
from .model.gradcheck import TOLERANCE, run_toy_gradcheck
from .model.ted import ModelConfig
from .model.track import HISTORY_MODES, track_dialog
from .model.train import Model, TrainConfig, load_model, numerics, save_model, train
from .ontology import load_ontology
from .simulator import FlowFilter, filter_flow, load_grammar, simulate_conversation
from .tree import render_dotted

log = logging.getLogger("treedst")


@dataclass
class RunConfig:
    ontology: str | None = None
    grammar: str | None = None
    seed: int = 0
    num: int = 100
    max_turns: int | None = None
    end_prob: float | None = None
    ratios: tuple[float, float, float] = DEFAULT_RATIOS
    model: dict[str, Any] = field(default_factory=dict)
    train: dict[str, Any] = field(default_factory=dict)
    out: str | None = None

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict({"seed": self.seed, **self.model})

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({"seed": self.seed, **self.train})

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        d["model"] = self.model_config().to_dict()
        d["train"] = self.train_config().to_dict()
        return d


DIM_ALIASES = {
    "word": ("word_dim",),
    "node": ("node_dim",),
    "hidden": ("utt_hidden", "hist_hidden", "dec_hidden"),
    "attn": ("attn_dim",),
    "layers": ("enc_layers", "dec_layers"),
}


def parse_dims(text: str) -> dict[str, int]:
    """``hidden=32,word=16`` -> model config fields; full field names work too."""
    out: dict[str, int] = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"--dims expects key=value pairs, got {item!r}")
        names = DIM_ALIASES.get(key, (key,))
        for n in names:
            if n not in ModelConfig.__dataclass_fields__:
                raise argparse.ArgumentTypeError(f"unknown dimension {key!r}")
            out[n] = int(val)
    return out


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then any flag the user passed."""
    rc = RunConfig()
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        for k, v in data.items():
            if k not in RunConfig.__dataclass_fields__:
                raise ValueError(f"{args.config}: unknown config key {k!r}")
            setattr(rc, k, tuple(v) if k == "ratios" else v)
    for k in ("ontology", "grammar", "seed", "num", "max_turns", "end_prob", "out"):
        v = getattr(args, k, None)
        if v is not None:
            setattr(rc, k, v)
    if getattr(args, "dims", None):
        rc.model = {**rc.model, **args.dims}
    if getattr(args, "mode", None) in ("vanilla", "pp"):
        rc.model = {**rc.model, "mode": args.mode}
    return rc


def provenance(rc: RunConfig, command: str) -> dict[str, Any]:
    cfg = rc.to_dict()
    cfg.pop("out")  # where artifacts go does not change what they contain
    return {"tool": "treedst", "version": __version__, "command": command, "config": cfg}


def _write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def simulate(rc: RunConfig, flow: FlowFilter | None = FlowFilter()) -> Corpus:
    grammar = load_grammar(rc.grammar)
    ont = load_ontology(rc.ontology)
    convs = []
    seeds = range(rc.seed, rc.seed + rc.num)
    for s in seeds:
        c = simulate_conversation(grammar, s, ontology=ont, max_turns=rc.max_turns, end_prob=rc.end_prob)
        if flow is None or filter_flow(c, flow):
            convs.append(annotate(c))
    return Corpus(convs, {"seeds": [rc.seed, rc.seed + rc.num], "grammar": grammar.version})


def cmd_simulate(args: argparse.Namespace) -> int:
    rc = load_run_config(args)
    corpus = simulate(rc, None if args.no_filter else FlowFilter())
    out = args.out or "corpus.jsonl"
    write_corpus(corpus, out, {**provenance(rc, "simulate"), **corpus.meta})
    print(f"wrote {len(corpus)} of {rc.num} conversations to {out}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    rep = compute_stats(read_corpus(args.corpus))
    print(rep.table())
    if args.out:
        _write_json(args.out, rep.to_dict())
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    rc = load_run_config(args)
    corpus = read_corpus(args.corpus)
    ratios = tuple(args.ratios) if args.ratios else rc.ratios
    parts = split_corpus(corpus, ratios, rc.seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "dev", "test"), parts):
        write_corpus(part, out / f"{name}.jsonl", {**corpus.meta, "split": name, **provenance(rc, "split")})
        print(f"{name}: {len(part)} conversations")
    return 0


def cmd_flatten(args: argparse.Namespace) -> int:
    rc = load_run_config(args)
    flat = derive_flat_corpus(read_corpus(args.corpus))
    out = args.out or "flat.jsonl"
    write_corpus(flat, out, {**flat.meta, **provenance(rc, "flatten")})
    print(f"wrote {len(flat)} flattened conversations to {out}")
    return 0


def train_model(rc: RunConfig, train_corpus: Corpus, dev_corpus: Corpus, log_path: str | Path | None = None):
    trx, dvx = corpus_examples(train_corpus), corpus_examples(dev_corpus)
    model = Model.create(rc.model_config(), build_vocabs(trx))
    result = train(trx, dvx, model, rc.train_config(), log_path)
    return model, result


def cmd_train(args: argparse.Namespace) -> int:
    rc = load_run_config(args)
    out = Path(args.out or "model.npz")
    log_path = args.log or out.with_suffix(".log.jsonl")
    model, res = train_model(rc, read_corpus(args.train), read_corpus(args.dev) if args.dev else Corpus([]), log_path)
    meta = {**provenance(rc, "train"), "best_epoch": res.best_epoch, "best_dev_em": res.best_dev_em,
            "epochs": len(res.history), "stopped_early": res.stopped_early}
    save_model(out, model, meta)
    print(f"trained {len(res.history)} epochs (best {res.best_epoch}, dev EM {res.best_dev_em}); saved {out}")
    return 0


def _eval(model: Model, corpus: Corpus, meta: dict[str, Any], out: Path, modes: Sequence[str]):
    t0 = time.perf_counter()
    records = evaluate_model(model, corpus.conversations, modes)
    secs = time.perf_counter() - t0
    write_predictions(records, out, meta)
    report = build_report(records, meta, {"decode_seconds": secs})
    return records, report


def cmd_eval(args: argparse.Namespace) -> int:
    model, meta = load_model(args.ckpt)
    corpus = read_corpus(args.corpus)
    out = Path(args.out or "preds.jsonl")
    modes = HISTORY_MODES if args.mode in (None, "both") else (args.mode,)
    _, report = _eval(model, corpus, {"checkpoint": str(args.ckpt), **meta}, out, modes)
    print(report.table())
    if args.report:
        _write_json(args.report, report.to_dict())
    return 0


def cmd_track(args: argparse.Namespace) -> int:
    model, _ = load_model(args.ckpt)
    mode = args.mode or "predicted"
    if mode not in HISTORY_MODES:
        raise ValueError(f"track --mode must be one of {HISTORY_MODES}")
    sink = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for conv in read_corpus(args.corpus):
            for t in track_dialog(model, conv, mode):
                sink.write(json.dumps({"conv_id": t.conv_id, "turn": t.turn, "mode": mode,
                                       "pred": render_dotted(t.predicted), "correct": t.correct}) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    records, meta = read_predictions(args.dump)
    report = build_report(records, meta)
    print(report.table())
    if args.out:
        _write_json(args.out, report.to_dict())
    if args.csv:
        Path(args.csv).write_text(curves_csv(report.curves))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    modes = ("vanilla", "pp") if args.mode in (None, "both") else (args.mode,)
    worst = 0.0
    for m in modes:
        rep, voc = run_toy_gradcheck(m, args.hidden)
        worst = max(worst, rep.max_rel_error)
        print(f"{m}: max relative error {rep.max_rel_error:.3e} over {rep.checked} entries "
              f"(worst {rep.worst}, vocab {len(voc.words)}/{len(voc.nodes)}, {rep.seconds:.1f}s)")
    print(f"max relative gradient error {worst:.3e}")
    return 0 if worst < TOLERANCE else 1


DEMO_MODEL = {"word_dim": 16, "node_dim": 16, "utt_hidden": 32, "hist_hidden": 32, "dec_hidden": 32, "attn_dim": 16}
DEMO_TRAIN = {"lr": 5e-3, "batch_size": 10, "max_epochs": 60, "patience": 10}


def cmd_demo(args: argparse.Namespace) -> int:
    rc = load_run_config(args)
    if not args.config:
        rc.num = args.num or 60
        rc.model = {**DEMO_MODEL, **rc.model}
        rc.train = {**DEMO_TRAIN, **rc.train}
    out = Path(rc.out or "demo_out")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    with numerics(True):
        corpus = simulate(rc)
        meta = {**provenance(rc, "demo"), **corpus.meta}
        write_corpus(corpus, out / "corpus.jsonl", meta)
        tr, dv, te = split_corpus(corpus, rc.ratios, rc.seed)
        for name, part in (("train", tr), ("dev", dv), ("test", te)):
            write_corpus(part, out / f"{name}.jsonl", {**meta, "split": name})
        model, res = train_model(rc, tr, dv, out / "train.log.jsonl")
        save_model(out / "model.npz", model, {**meta, "best_epoch": res.best_epoch})
        _, report = _eval(model, te, meta, out / "preds.jsonl", HISTORY_MODES)
    _write_json(out / "report.json", report.to_dict())
    (out / "report.txt").write_text(report.table() + "\n")
    (out / "curves.csv").write_text(curves_csv(report.curves))
    print(report.table())
    print(f"demo finished in {time.perf_counter() - t0:.1f}s; artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="treedst", description="Tree-structured dialog state tracking toolkit.")
    ap.add_argument("--version", action="version", version=f"treedst {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="command")

    def common(p: argparse.ArgumentParser, *flags: str) -> None:
        if "config" in flags:
            p.add_argument("--config", help="JSON run config; flags override its values")
        if "ontology" in flags:
            p.add_argument("--ontology", help="ontology JSON (default: shipped desk ontology)")
        if "grammar" in flags:
            p.add_argument("--grammar", help="grammar JSON (default: shipped desk grammar)")
        if "seed" in flags:
            p.add_argument("--seed", type=int)
        if "num" in flags:
            p.add_argument("--num", type=int, help="number of conversations")
        if "out" in flags:
            p.add_argument("--out")
        if "dims" in flags:
            p.add_argument("--dims", type=parse_dims, help="e.g. hidden=64,word=32,node=16,attn=32")

    p = sub.add_parser("simulate", help="sample a corpus from the grammar")
    common(p, "config", "ontology", "grammar", "seed", "num", "out")
    p.add_argument("--max-turns", dest="max_turns", type=int)
    p.add_argument("--end-prob", dest="end_prob", type=float)
    p.add_argument("--no-filter", action="store_true", help="keep conversations the flow filter rejects")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("corpus")
    common(p, "out")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("split", help="train/dev/test split")
    p.add_argument("corpus")
    common(p, "config", "seed", "out")
    p.add_argument("--ratios", type=float, nargs=3)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("flatten", help="derive the flat slot-value corpus")
    p.add_argument("corpus")
    common(p, "config", "out")
    p.set_defaults(fn=cmd_flatten)

    p = sub.add_parser("train", help="train a tracker")
    common(p, "config", "seed", "out", "dims")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--mode", choices=("vanilla", "pp"))
    p.add_argument("--log", help="per-epoch JSONL log (default: next to the checkpoint)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and dump predictions")
    common(p, "out")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=(*HISTORY_MODES, "both"))
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("track", help="track conversations turn by turn")
    common(p, "out")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=HISTORY_MODES)
    p.set_defaults(fn=cmd_track)

    p = sub.add_parser("report", help="report from a prediction dump")
    p.add_argument("--dump", required=True)
    common(p, "out")
    p.add_argument("--csv", help="write per-turn curves as CSV")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference check on a toy model")
    p.add_argument("--mode", choices=("vanilla", "pp", "both"))
    p.add_argument("--hidden", type=int, default=6)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("demo", help="simulate, split, train, evaluate and report on a tiny config")
    common(p, "config", "seed", "num", "out", "dims")
    p.add_argument("--mode", choices=("vanilla", "pp"))
    p.set_defaults(fn=cmd_demo)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if not getattr(args, "fn", None):
        ap.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with numerics():
            return args.fn(args)
    except (OSError, ValueError, KeyError) as e:
        print(f"treedst {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
