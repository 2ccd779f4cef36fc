import math

import numpy as np
import pytest

from treedst.model.data import EOS, TurnExample, build_vocabs, encode_example, make_input, target_tokens
from treedst.model.gradcheck import check_gradients, toy_config, toy_examples
from treedst.model.ted import (
    ModelConfig,
    DecoderState,
    attend,
    batch_loss,
    decode_step_pp,
    decode_step_vanilla,
    encode,
    forward_backward,
    greedy_decode,
    init_params,
    prepare,
)
from treedst.model.train import Model, TrainConfig, train
from treedst.tree import DialogTree, empty_state, linearize, parse_dotted, tree_equal

MODES = ("vanilla", "pp")


@pytest.fixture(scope="module")
def toy():
    ex = toy_examples()
    return ex, build_vocabs(ex)


def params_for(mode, voc, seed=0):
    cfg = toy_config(mode)
    return cfg, init_params(cfg, voc, seed)


def test_memory_rows_match_input_lengths(toy):
    _, voc = toy
    cfg, p = params_for("vanilla", voc)
    rng = np.random.default_rng(0)
    x, s, u = (rng.integers(0, n, size=k) for n, k in ((len(voc.words), 5), (len(voc.nodes), 7), (len(voc.nodes), 9)))
    mem = encode(p, cfg, x, s, u)
    assert [mem.H[k].shape for k in "xsu"] == [(5, 12), (7, 12), (9, 12)]


def test_first_turn_uses_single_markers():
    inp = make_input("", None, None, None)
    assert (len(inp.x), len(inp.s), len(inp.u)) == (1, 1, 1)


def test_perturbing_one_token_changes_only_its_memory(toy):
    _, voc = toy
    cfg, p = params_for("vanilla", voc)
    x = np.array([4, 12, 13, 14, 15])
    s = np.array([12, 13, 14])
    u = np.array([12, 13, 14, 15])
    a = encode(p, cfg, x, s, u)
    x2 = x.copy()
    x2[2] = 16
    b = encode(p, cfg, x2, s, u)
    assert np.all(np.abs(a.H["x"] - b.H["x"]).max(axis=1) > 0)
    assert np.array_equal(a.H["s"], b.H["s"]) and np.array_equal(a.H["u"], b.H["u"])


def _att_params(rng, dm=4, dq=3, da=5):
    return rng.normal(size=(dm, da)), rng.normal(size=(dq, da)), rng.normal(size=da), rng.normal(size=da)


def test_attend_uniform_on_identical_rows():
    rng = np.random.default_rng(0)
    U, Wq, b, v = _att_params(rng)
    M = np.tile(rng.normal(size=4), (6, 1))
    _, w, ctx = attend(rng.normal(size=3), M, U, Wq, b, v)
    np.testing.assert_allclose(w, np.full(6, 1 / 6), atol=1e-15)
    np.testing.assert_allclose(ctx, M[0])


def test_attend_context_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    U, Wq, b, v = _att_params(rng)
    M = rng.normal(size=(5, 4))
    g = rng.normal(size=3)
    r = rng.normal(size=4)
    _, w, ctx = attend(g, M, U, Wq, b, v)
    assert abs(w.sum() - 1) < 1e-12
    # analytic d(r . ctx)/dg
    a_pre = np.tanh(g @ Wq + b + M @ U)
    dw = M @ r
    da = w * (dw - w @ dw)
    analytic = Wq @ ((da[:, None] * (1 - a_pre**2)) * v).sum(0)
    eps = 1e-6
    for i in range(3):
        gp, gm = g.copy(), g.copy()
        gp[i] += eps
        gm[i] -= eps
        num = (attend(gp, M, U, Wq, b, v)[2] @ r - attend(gm, M, U, Wq, b, v)[2] @ r) / (2 * eps)
        assert abs(num - analytic[i]) / max(abs(num), abs(analytic[i]), 1e-8) < 1e-4


@pytest.mark.parametrize("bias,part", [(1e3, "gen"), (-1e3, "copy")])
def test_gate_limits(toy, bias, part):
    ex, voc = toy
    cfg, p = params_for("vanilla", voc)
    p["gate_b"][0] = bias
    ctx, st = prepare(p, cfg, voc, ex[1].inp)
    _, out = decode_step_vanilla(p, cfg, voc, ctx, st, "<bos>")
    np.testing.assert_array_equal(out.dist, getattr(out, part))


@pytest.mark.parametrize("mode", MODES)
def test_step_distributions_normalized(toy, mode):
    ex, voc = toy
    for seed in range(5):
        cfg, p = params_for(mode, voc, seed)
        ctx, st = prepare(p, cfg, voc, ex[1].inp)
        prev, par = "<bos>", "<root>"
        for _ in range(4):
            if mode == "vanilla":
                st, out = decode_step_vanilla(p, cfg, voc, ctx, st, prev)
            else:
                st, out = decode_step_pp(p, cfg, voc, ctx, st, prev, par)
            assert out.dist.min() >= 0 and abs(out.dist.sum() - 1) < 1e-9
            prev, par = "user", "user"


def test_copy_mass_summed_over_duplicates(toy):
    _, voc = toy
    cfg, p = params_for("vanilla", voc)
    inp = make_input("[Oak Rd] and [Oak Rd]", None, None, None)
    ctx, st = prepare(p, cfg, voc, inp)
    assert ctx.ext.count("[Oak Rd]") == 1
    assert list(ctx.copy_index).count(ctx.ext.index("[Oak Rd]")) == 2


def test_pp_parent_support_grows(toy):
    ex, voc = toy
    cfg, p = params_for("pp", voc)
    ctx, st = prepare(p, cfg, voc, ex[0].inp)
    st, out = decode_step_pp(p, cfg, voc, ctx, st, "<bos>", "<root>")
    assert out.parent is None  # first node hangs off the synthetic root
    for i in range(1, 5):
        st, out = decode_step_pp(p, cfg, voc, ctx, st, "user", "user")
        assert out.parent.shape == (i,)
        assert len(st.G) == i + 1


@pytest.mark.parametrize("mode", MODES)
def test_teacher_forced_step_counts(toy, mode):
    ex, voc = toy
    for e in ex:
        enc = encode_example(e, voc, mode)
        n, k = e.target.node_count(), e.target.internal_count()
        assert enc.steps == (n if mode == "pp" else n + 2 * k)


@pytest.mark.parametrize("mode", MODES)
def test_untrained_decode_is_total(toy, mode):
    ex, voc = toy
    cfg, p = params_for(mode, voc)
    for e in ex:
        d = greedy_decode(p, cfg, voc, e.inp, max_len=25)
        assert isinstance(d.tree, DialogTree)
        if d.truncated:
            assert d.steps == 25


def test_uniform_prediction_loss_is_log_v(toy):
    _, voc = toy
    cfg, p = params_for("vanilla", voc)
    p["out_w"][:] = 0
    p["out_b"][:] = 0
    p["gate_b"][0] = 1e3
    target = parse_dotted("user.taxi.book")
    e = TurnExample("t", 0, make_input("hello", None, None, None), target)
    r = forward_backward(p, cfg, encode_example(e, voc, "vanilla"))
    assert r.loss == pytest.approx(math.log(len(voc.nodes)), abs=1e-12)


@pytest.mark.parametrize("mode", MODES)
def test_toy_batch_gradients(toy, mode):
    ex, voc = toy
    cfg, p = params_for(mode, voc)
    rep = check_gradients(p, cfg, voc, ex, max_entries=6)
    assert rep.max_rel_error < 1e-4, rep.worst


def test_batch_loss_permutation_invariant(toy, small_corpus):
    from treedst.model.data import corpus_examples

    exs = corpus_examples(list(small_corpus)[:3])
    voc = build_vocabs(exs)
    cfg = toy_config("pp")
    p = init_params(cfg, voc)
    enc = [encode_example(e, voc, "pp") for e in exs]
    a = batch_loss(p, cfg, enc) * len(enc)
    b = batch_loss(p, cfg, enc[::-1]) * len(enc)
    assert abs(a - b) < 1e-9


@pytest.mark.parametrize("mode", MODES)
def test_overfit_single_example(toy, mode):
    ex, voc = toy
    # desk default dims; the toy dims can stall in saturated parent attention
    model = Model.create(ModelConfig(mode=mode), voc)
    res = train([ex[1]], [], model, TrainConfig(lr=0.01, batch_size=1, max_epochs=300, seed=0))
    assert res.history[-1].loss < 1e-2
    assert tree_equal(model.predict(ex[1].inp), ex[1].target)


def test_copy_emits_held_out_open_value(toy):
    ex, voc = toy
    model = Model.create(toy_config("vanilla", hidden=16), voc)
    train(ex, [], model, TrainConfig(lr=0.02, batch_size=2, max_epochs=200, seed=0))
    held = make_input("get a taxi to [Elm Rd]", None, None, None)
    out = model.decode(held).tokens
    assert "[Elm Rd]" in out
    assert "[Main St]" not in out
    # a token that is neither in the vocabulary nor in the input can never be produced
    ctx, _ = prepare(model.params, model.cfg, voc, held)
    assert "[Main St]" not in ctx.ext
