import json

import pytest

from treedst.cli import main, parse_dims


def run(*argv):
    return main([str(a) for a in argv])


def test_no_args_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_command_exits_nonzero():
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code != 0


def test_parse_dims():
    assert parse_dims("hidden=8,word=4") == {"utt_hidden": 8, "hist_hidden": 8, "dec_hidden": 8, "word_dim": 4}
    with pytest.raises(Exception):
        parse_dims("bogus=3")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "run.json"
    cfg.write_text(json.dumps({"model": {"word_dim": 8, "node_dim": 8}, "train": {"max_epochs": 2, "batch_size": 10}}))
    assert run("simulate", "--seed", 5, "--num", 20, "--out", d / "c.jsonl") == 0
    assert run("split", d / "c.jsonl", "--out", d / "split") == 0
    assert run("train", "--config", cfg, "--train", d / "split/train.jsonl", "--dev", d / "split/dev.jsonl",
               "--dims", "hidden=8,attn=8", "--mode", "pp", "--out", d / "m.npz") == 0
    return d


def test_simulate_header_embeds_config(pipeline):
    header = json.loads((pipeline / "c.jsonl").read_text().splitlines()[0])
    assert header["meta"]["config"]["seed"] == 5
    assert header["meta"]["version"]


def test_checkpoint_meta_embeds_config(pipeline):
    from treedst.model.train import load_model

    model, meta = load_model(pipeline / "m.npz")
    assert model.cfg.mode == "pp" and model.cfg.dec_hidden == 8 and model.cfg.word_dim == 8
    assert meta["config"]["train"]["max_epochs"] == 2
    assert (pipeline / "m.log.jsonl").exists()


def test_eval_report_track(pipeline, capsys):
    d = pipeline
    assert run("eval", "--ckpt", d / "m.npz", "--corpus", d / "split/dev.jsonl", "--out", d / "p.jsonl", "--report", d / "r.json") == 0
    assert run("report", "--dump", d / "p.jsonl", "--out", d / "r2.json", "--csv", d / "curves.csv") == 0
    a, b = json.loads((d / "r.json").read_text()), json.loads((d / "r2.json").read_text())
    assert a["overall"] == b["overall"]
    assert set(a["overall"]) == {"oracle", "predicted"}
    assert (d / "curves.csv").read_text().startswith("mode,turn,em,n")
    assert run("track", "--ckpt", d / "m.npz", "--corpus", d / "split/dev.jsonl", "--mode", "oracle", "--out", d / "t.jsonl") == 0
    rows = [json.loads(l) for l in (d / "t.jsonl").read_text().splitlines()]
    assert rows and all(r["mode"] == "oracle" for r in rows)


def test_stats_and_flatten(pipeline, capsys):
    d = pipeline
    assert run("stats", d / "c.jsonl", "--out", d / "s.json") == 0
    assert json.loads((d / "s.json").read_text())["dialogs"] > 0
    assert run("flatten", d / "c.jsonl", "--out", d / "f.jsonl") == 0
    assert json.loads((d / "f.jsonl").read_text().splitlines()[0])["meta"]["flat"] is True


def test_missing_file_is_error(tmp_path, capsys):
    assert run("stats", tmp_path / "nope.jsonl") == 1
    assert "error" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert run("gradcheck", "--mode", "vanilla", "--hidden", 3) == 0
    assert "max relative gradient error" in capsys.readouterr().out
