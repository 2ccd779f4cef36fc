"""The ten end-to-end acceptance checks; each prints one PASS/FAIL line."""
import json
import random
import subprocess
import sys
import time

import pytest

from treedst.dataset import Corpus, split_corpus
from treedst.evaluation import compare_decoder_timing, compare_flat_vs_tree, build_report, evaluate_model
from treedst.model.data import build_vocabs, corpus_examples, target_tokens
from treedst.model.gradcheck import TOLERANCE, run_toy_gradcheck
from treedst.model.ted import ModelConfig
from treedst.model.train import Model, TrainConfig, exact_match_rate, train
from treedst.ontology import load_ontology, random_tree, random_user_state, validate
from treedst.simulator import load_grammar, simulate_conversation
from treedst.tree import (
    EQUALS,
    DialogTree,
    NodeKind,
    SlotValuePair,
    delinearize,
    flatten,
    from_node_parent_form,
    linearize,
    parse_dotted,
    render_dotted,
    to_node_parent_form,
)

ONT = load_ontology()
N_TREES = 1000


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def test_01_round_trips(report):
    rng = random.Random(101)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(N_TREES):
        t = random_tree(ONT, rng)
        d = delinearize(linearize(t))
        ok = (
            parse_dotted(render_dotted(t)) == t
            and d.tree == t
            and not d.repaired
            and from_node_parent_form(to_node_parent_form(t)) == t
        )
        bad += not ok
    secs = time.perf_counter() - t0
    report(1, bad == 0 and secs < 10, f"{N_TREES} trees, {bad} mismatches, {secs:.2f}s")


def test_02_autoregression_count(report):
    rng = random.Random(202)
    bad = 0
    for _ in range(N_TREES):
        t = random_tree(ONT, rng)
        pp = len(target_tokens(t, "pp")[0]) - 1  # minus EOS
        van = len(target_tokens(t, "vanilla")[0]) - 1
        bad += pp != t.node_count() or (t.internal_count() >= 1 and not pp < van)
    report(2, bad == 0, f"{N_TREES} trees, {bad} violations of pp == nodes < vanilla")


def brute_force_pairs(tree: DialogTree) -> set[SlotValuePair]:
    out = set()

    def paths(n, acc):
        acc = acc + [n]
        if not n.children:
            yield acc
        for c in n.children:
            yield from paths(c, acc)

    for p in paths(tree, []):
        leaf = p[-1]
        if not leaf.kind.is_value:
            continue
        names = [n.label for n in p[1:-1] if n.kind is not NodeKind.VERB and n.label != EQUALS]
        out.add(SlotValuePair("+".join(names), leaf.label))
    return out


FLIGHT = """user.flight.book.object.equals
  .source.equals.location.equals.London
  .departureDateTime.equals
    .date.equals.definedValue.equals.Tomorrow
    .time.equals.hour.equals.5"""


def test_03_flatten_oracle(report):
    rng = random.Random(303)
    bad = sum(flatten(t) != brute_force_pairs(t) for t in (random_user_state(ONT, rng) for _ in range(N_TREES)))
    worked = flatten(parse_dotted(FLIGHT)) == {
        SlotValuePair("flight+object+source+location", "London"),
        SlotValuePair("flight+object+departureDateTime+date+definedValue", "Tomorrow"),
        SlotValuePair("flight+object+departureDateTime+time+hour", "5"),
    }
    report(3, bad == 0 and worked, f"{bad} disagreements over {N_TREES} trees, worked example {'ok' if worked else 'wrong'}")


def audit_stack(conv) -> list[str]:
    """Replay push/pop from turn fields and compare with the recorded stacks."""
    errs = []
    stack: list[int] = []
    pushes = pops = 0
    for i, t in enumerate(conv.turns):
        if t.update_kind == "new-goal":
            stack.append(i)
            pushes += 1
        else:
            if not stack:
                errs.append(f"turn {i}: {t.update_kind} on empty stack")
                break
            if t.update_source != stack[-1]:
                errs.append(f"turn {i}: update source {t.update_source} != top {stack[-1]}")
            stack[-1] = i
        if t.system_finishing is not None:
            stack.pop()
            pops += 1
        if stack != t.stack_after:
            errs.append(f"turn {i}: stack {t.stack_after} != replay {stack}")
    if len(stack) != pushes - pops or len(stack) < 0:
        errs.append("depth != pushes - pops")
    return errs


def test_04_simulator_soundness(report):
    g = load_grammar()
    convs = [simulate_conversation(g, s) for s in range(N_TREES)]
    violations = sum(len(validate(tr, ONT)) for c in convs for t in c.turns for tr in (t.user_state, t.system_act))
    stack_errs = [e for c in convs for e in audit_stack(c)]
    kinds = {t.update_kind for c in convs for t in c.turns}
    again = [simulate_conversation(g, s) for s in range(N_TREES)]
    same = all(json.dumps(a.to_dict()) == json.dumps(b.to_dict()) for a, b in zip(convs, again))
    ok = violations == 0 and not stack_errs and kinds >= {"continue", "resume", "new-goal"} and same
    report(
        4, ok,
        f"{violations} ontology violations, {len(stack_errs)} stack errors, kinds {sorted(kinds)}, regeneration {'identical' if same else 'differs'}",
    )


def test_05_gradient_fidelity(report):
    t0 = time.perf_counter()
    worst, sizes = {}, {}
    for mode in ("vanilla", "pp"):
        rep, voc = run_toy_gradcheck(mode)
        worst[mode] = rep.max_rel_error
        sizes[mode] = (len(voc.words), len(voc.nodes), rep.checked)
    secs = time.perf_counter() - t0
    small = all(w <= 50 and n <= 50 for w, n, _ in sizes.values())
    ok = max(worst.values()) < TOLERANCE and secs < 120 and small
    report(5, ok, f"max rel error {worst}, entries/vocab {sizes}, {secs:.1f}s")


# ---------------------------------------------------------------------------
# criteria 6 and 7 share one pair of trained desk-dim models

LEARN_TRAIN = TrainConfig(lr=5e-3, batch_size=10, max_epochs=150, patience=10**6)


@pytest.fixture(scope="module")
def learned():
    g = load_grammar()
    corpus = Corpus([simulate_conversation(g, s) for s in range(50)])
    tr, dv, _ = split_corpus(corpus, seed=0)
    trx, dvx = corpus_examples(tr), corpus_examples(dv)
    voc = build_vocabs(trx)
    t0 = time.perf_counter()
    models = {}
    for mode in ("vanilla", "pp"):
        m = Model.create(ModelConfig(mode=mode), voc)
        # no dev set: the final parameters are the ones measured
        train(trx, [], m, LEARN_TRAIN)
        models[mode] = m
    return {"models": models, "train": trx, "dev": dvx, "dev_convs": dv.conversations, "seconds": time.perf_counter() - t0}


def test_06_learnability(report, learned):
    train_em = {m: exact_match_rate(mod, learned["train"]) for m, mod in learned["models"].items()}
    dev_em = {m: exact_match_rate(mod, learned["dev"]) for m, mod in learned["models"].items()}
    secs = learned["seconds"]
    ok = min(train_em.values()) >= 0.95 and abs(dev_em["pp"] - dev_em["vanilla"]) <= 0.05 and secs < 900
    report(
        6, ok,
        f"train EM {train_em}, dev EM {dev_em} over {len(learned['dev'])} dev turns, {secs:.0f}s training",
    )


def test_07_oracle_gap(report, learned):
    lines, ok = [], True
    for mode, model in learned["models"].items():
        rep = build_report(evaluate_model(model, learned["dev_convs"]))
        oracle, pred = rep.overall["oracle"], rep.overall["predicted"]
        curve = {i: round(b.em, 3) for i, b in sorted(rep.curves["predicted"].items())}
        ok &= oracle >= pred and len(curve) > 0
        lines.append(f"{mode}: oracle {oracle:.3f} >= predicted {pred:.3f}, predicted by turn {curve}")
    report(7, ok, "; ".join(lines))


def test_08_flat_vs_tree(report):
    g = load_grammar()
    corpus = Corpus([simulate_conversation(g, s) for s in range(30)], {"seeds": [0, 30]})
    tr, dv, _ = split_corpus(corpus, seed=0)
    mc = ModelConfig(mode="vanilla", word_dim=16, node_dim=16, utt_hidden=32, hist_hidden=32, dec_hidden=32, attn_dim=16)
    tc = TrainConfig(lr=5e-3, batch_size=10, max_epochs=6, validate_every=2)
    d = compare_flat_vs_tree(tr, dv, mc, tc).to_dict()
    json.dumps(d)
    ok = (
        all(0.0 <= d[k] <= 1.0 for k in ("tree_em", "flat_em", "tree_em_flattened"))
        and d["model_config"] == mc.to_dict()
        and d["train_config"] == tc.to_dict()
        and "paper_context" in d
    )
    report(8, ok, f"tree EM {d['tree_em']:.3f}, flat EM {d['flat_em']:.3f} on {d['dev_turns']} dev turns, configs embedded")


def test_09_timing(report):
    g = load_grammar()
    corpus = Corpus([simulate_conversation(g, s) for s in range(50)])
    tr, _, _ = split_corpus(corpus, seed=0)
    rep = compare_decoder_timing(tr, ModelConfig(), TrainConfig(), epochs=3)
    d = rep.to_dict()
    ratio = rep.pp_over_vanilla
    ok = len(d["epoch_seconds"]["pp"]) == len(d["epoch_seconds"]["vanilla"]) == 3 and ratio <= 1.1
    means = {k: round(v, 3) for k, v in rep.mean_seconds.items()}
    report(9, ok, f"mean epoch seconds {means}, pp/vanilla {ratio:.3f}")


def _demo_artifacts(out):
    arts = {}
    for p in sorted(out.iterdir()):
        if p.name == "train.log.jsonl":
            rows = [json.loads(l) for l in p.read_text().splitlines()]
            arts[p.name] = [{k: v for k, v in r.items() if k != "wall_seconds"} for r in rows]
        elif p.name == "report.json":
            d = json.loads(p.read_text())
            d.pop("timing", None)
            arts[p.name] = d
        else:
            arts[p.name] = p.read_bytes()
    return arts


def test_10_demo(report, tmp_path):
    runs, codes, secs = [], [], []
    for k in range(2):
        out = tmp_path / f"run{k}"
        t0 = time.perf_counter()
        proc = subprocess.run(
            [sys.executable, "-m", "treedst", "demo", "--out", str(out)], capture_output=True, text=True
        )
        secs.append(time.perf_counter() - t0)
        codes.append(proc.returncode)
        runs.append(_demo_artifacts(out) if proc.returncode == 0 else {})
    same = runs[0] == runs[1] and bool(runs[0])
    ok = codes == [0, 0] and same and max(secs) < 300
    report(10, ok, f"exit codes {codes}, {[round(s) for s in secs]}s, artifacts {'identical' if same else 'differ'}: {sorted(runs[0])}")
