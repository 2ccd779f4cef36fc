import json

import numpy as np
import pytest

from treedst.model import train as train_mod
from treedst.model.data import build_vocabs, corpus_examples
from treedst.model.gradcheck import toy_config, toy_examples
from treedst.model.train import (
    Adam,
    Model,
    TrainConfig,
    TrainingDiverged,
    clip_grads,
    load_model,
    numerics,
    save_model,
    train,
)


@pytest.fixture(scope="module")
def toy():
    ex = toy_examples()
    return ex, build_vocabs(ex)


def test_early_stopping_after_four_flat_validations(toy, monkeypatch):
    ex, voc = toy
    scores = iter([0.1, 0.3, 0.3, 0.2, 0.3, 0.1, 0.9, 0.9])
    monkeypatch.setattr(train_mod, "exact_match_rate", lambda m, d: next(scores))
    model = Model.create(toy_config("vanilla"), voc)
    res = train(ex, ex, model, TrainConfig(max_epochs=100, validate_every=2, patience=4))
    assert res.stopped_early
    # improvements at validations 1 and 2, then four without a lower error
    assert len(res.history) == 12
    assert [r.dev_em for r in res.history if r.dev_em is not None] == [0.1, 0.3, 0.3, 0.2, 0.3, 0.1]
    assert res.best_epoch == 10  # ties keep the later parameters


def test_best_parameters_restored(toy, monkeypatch):
    ex, voc = toy
    scores = iter([0.5, 0.1, 0.1, 0.1, 0.1])
    snaps = []
    model = Model.create(toy_config("vanilla"), voc)

    def fake(m, d):
        snaps.append({k: v.copy() for k, v in m.params.items()})
        return next(scores)

    monkeypatch.setattr(train_mod, "exact_match_rate", fake)
    train(ex, ex, model, TrainConfig(max_epochs=100, validate_every=1, patience=4))
    for k in model.params:
        np.testing.assert_array_equal(model.params[k], snaps[0][k])


def test_same_seed_bit_identical(toy, monkeypatch):
    ex, voc = toy
    monkeypatch.setenv("TREEDST_DETERMINISTIC", "1")
    runs = []
    for _ in range(2):
        m = Model.create(toy_config("pp"), voc)
        train(ex, [], m, TrainConfig(lr=0.01, batch_size=1, max_epochs=5, seed=4))
        runs.append(m.params)
    for k in runs[0]:
        assert runs[0][k].tobytes() == runs[1][k].tobytes()


def test_divergence_aborts(toy):
    ex, voc = toy
    m = Model.create(toy_config("vanilla"), voc)
    m.params["out_b"][:] = np.nan
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(ex, [], m, TrainConfig(max_epochs=2))


def test_log_jsonl(toy, tmp_path):
    ex, voc = toy
    m = Model.create(toy_config("vanilla"), voc)
    log = tmp_path / "log.jsonl"
    train(ex, ex, m, TrainConfig(max_epochs=4, validate_every=2), log_path=log)
    rows = [json.loads(l) for l in log.read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2, 3, 4]
    assert all(r["wall_seconds"] > 0 for r in rows)
    assert "dev_em" in rows[1] and "dev_em" not in rows[0]


def test_checkpoint_round_trip(toy, tmp_path):
    ex, voc = toy
    m = Model.create(toy_config("pp"), voc)
    path = tmp_path / "m.npz"
    save_model(path, m, {"note": "hi"})
    m2, meta = load_model(path)
    assert meta == {"note": "hi"}
    assert m2.cfg == m.cfg and m2.voc.to_dict() == m.voc.to_dict()
    for k in m.params:
        np.testing.assert_array_equal(m.params[k], m2.params[k])
    save_model(tmp_path / "again.npz", m2, {"note": "hi"})
    assert path.read_bytes() == (tmp_path / "again.npz").read_bytes()


def test_clip_grads():
    g = {"a": np.array([3.0, 4.0])}
    assert clip_grads(g, 1.0) == 5.0
    np.testing.assert_allclose(g["a"], [0.6, 0.8])


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([1.0, -1.0])}
    Adam(p, TrainConfig(lr=0.1)).step(p, {"w": np.array([2.0, -3.0])})
    np.testing.assert_allclose(p["w"], [0.9, -0.9], atol=1e-7)


def test_numerics_context():
    with numerics(True):
        pass
    with numerics(False):
        pass
