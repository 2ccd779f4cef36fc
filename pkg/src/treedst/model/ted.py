"""Tree encoder-decoder: three BiLSTM encoders, attention, generation/copy mixture.

Two decoders share everything except their inputs and the parent layer:

* ``vanilla`` emits the bracketed depth-first linearization token by token;
* ``pp`` emits one node per step plus a pointer to its parent among the
  earlier decoder states.

All arrays are float64 and every gradient is written out by hand; the LSTM
recurrences run through :mod:`.kernels`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from ..tree import (
    ROOT_PARENT,
    DialogTree,
    NodeParentForm,
    TreeError,
    delinearize,
    empty_state,
    from_node_parent_form,
    is_open_token,
)
from . import kernels
from .data import BOS, EOS, ROOT, UNK, Encoded, TurnInput, Vocabs, encode_input, node_token_ok

Params = dict[str, np.ndarray]


@dataclass
class ModelConfig:
    mode: str = "vanilla"
    word_dim: int = 32
    node_dim: int = 16
    utt_hidden: int = 64
    hist_hidden: int = 64
    dec_hidden: int = 64
    attn_dim: int = 32
    enc_layers: int = 1
    dec_layers: int = 1
    max_decode: int = 200
    init_scale: float = 0.1
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


MEMS = ("x", "s", "u")


def _enc_hidden(cfg: ModelConfig, mem: str) -> int:
    return cfg.utt_hidden if mem == "x" else cfg.hist_hidden


def feature_dim(cfg: ModelConfig) -> int:
    return cfg.dec_hidden + 2 * cfg.utt_hidden + 4 * cfg.hist_hidden


def init_params(cfg: ModelConfig, voc: Vocabs, seed: int | None = None) -> Params:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    p: Params = {}

    def uni(*shape: int) -> np.ndarray:
        lim = np.sqrt(6.0 / (shape[0] + shape[-1])) if len(shape) > 1 else cfg.init_scale
        return rng.uniform(-lim, lim, size=shape)

    p["emb_word"] = rng.normal(0.0, cfg.init_scale, (len(voc.words), cfg.word_dim))
    p["emb_node"] = rng.normal(0.0, cfg.init_scale, (len(voc.nodes), cfg.node_dim))
    for mem in MEMS:
        h = _enc_hidden(cfg, mem)
        d_in = cfg.word_dim if mem == "x" else cfg.node_dim
        for layer in range(cfg.enc_layers):
            for direction in "fb":
                pre = f"enc_{mem}_{layer}{direction}_"
                p[pre + "wx"] = uni(d_in, 4 * h)
                p[pre + "wh"] = uni(h, 4 * h)
                b = np.zeros(4 * h)
                b[h : 2 * h] = 1.0
                p[pre + "b"] = b
            d_in = 2 * h
    ctx = 2 * cfg.utt_hidden + 4 * cfg.hist_hidden
    d_in = cfg.node_dim * (2 if cfg.mode == "pp" else 1)
    for layer in range(cfg.dec_layers):
        h = cfg.dec_hidden
        p[f"dec_{layer}_wx"] = uni(d_in, 4 * h)
        p[f"dec_{layer}_wh"] = uni(h, 4 * h)
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0
        p[f"dec_{layer}_b"] = b
        p[f"init_{layer}_w"] = uni(ctx, h)
        p[f"init_{layer}_b"] = np.zeros(h)
        d_in = h
    mems = {"x": 2 * cfg.utt_hidden, "s": 2 * cfg.hist_hidden, "u": 2 * cfg.hist_hidden}
    if cfg.mode == "pp":
        mems["p"] = cfg.dec_hidden
    for mem, dm in mems.items():
        p[f"att_{mem}_u"] = uni(dm, cfg.attn_dim)
        p[f"att_{mem}_wq"] = uni(cfg.dec_hidden, cfg.attn_dim)
        p[f"att_{mem}_b"] = np.zeros(cfg.attn_dim)
        p[f"att_{mem}_v"] = uni(cfg.attn_dim)
    fd = feature_dim(cfg)
    p["gate_w"] = uni(fd)
    p["gate_b"] = np.zeros(1)
    p["out_w"] = uni(fd, len(voc.nodes))
    p["out_b"] = np.zeros(len(voc.nodes))
    return p


def zeros_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# building blocks


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _lstm_fwd(X, wx, wh, b, h0, c0):
    xp = X @ wx + b
    H, C, G = kernels.lstm_forward(xp, wh, h0, c0)
    return H, (X, H, C, G, h0, c0)


def _lstm_bwd(dH, wx, wh, cache):
    X, H, C, G, h0, c0 = cache
    dxp, dwh, dh0, dc0 = kernels.lstm_backward(dH, wh, H, C, G, h0, c0)
    return dxp @ wx.T, X.T @ dxp, dwh, dxp.sum(0), dh0, dc0


def _bilstm_fwd(p: Params, pre: str, layers: int, X: np.ndarray):
    caches = []
    for layer in range(layers):
        names = [f"{pre}_{layer}{d}_" for d in "fb"]
        h = p[names[0] + "wh"].shape[0]
        z = np.zeros(h)
        Hf, cf = _lstm_fwd(X, p[names[0] + "wx"], p[names[0] + "wh"], p[names[0] + "b"], z, z)
        Hb, cb = _lstm_fwd(X[::-1], p[names[1] + "wx"], p[names[1] + "wh"], p[names[1] + "b"], z, z)
        caches.append((cf, cb, h))
        X = np.concatenate([Hf, Hb[::-1]], axis=1)
    return X, caches


def _bilstm_bwd(p: Params, g: Params, pre: str, dOut: np.ndarray, caches) -> np.ndarray:
    for layer in range(len(caches) - 1, -1, -1):
        cf, cb, h = caches[layer]
        nf, nb = f"{pre}_{layer}f_", f"{pre}_{layer}b_"
        dXf, dwx, dwh, db, _, _ = _lstm_bwd(np.ascontiguousarray(dOut[:, :h]), p[nf + "wx"], p[nf + "wh"], cf)
        g[nf + "wx"] += dwx
        g[nf + "wh"] += dwh
        g[nf + "b"] += db
        dXb, dwx, dwh, db, _, _ = _lstm_bwd(np.ascontiguousarray(dOut[::-1, h:]), p[nb + "wx"], p[nb + "wh"], cb)
        g[nb + "wx"] += dwx
        g[nb + "wh"] += dwh
        g[nb + "b"] += db
        dOut = dXf + dXb[::-1]
    return dOut


def attn_logits(Q_in: np.ndarray, M: np.ndarray, U, Wq, b, v):
    """Additive attention logits a[t, j] = v . tanh(Wq q_t + b + U m_j)."""
    K = M @ U
    Q = Q_in @ Wq + b
    S = np.tanh(Q[:, None, :] + K[None, :, :])
    return S @ v, (Q_in, M, S)


def attn_logits_bwd(dA: np.ndarray, U, Wq, v, cache):
    Q_in, M, S = cache
    dv = np.einsum("tj,tja->a", dA, S)
    dpre = dA[:, :, None] * v[None, None, :] * (1.0 - S * S)
    dQ = dpre.sum(1)
    dK = dpre.sum(0)
    return dQ @ Wq.T, dK @ U.T, M.T @ dK, Q_in.T @ dQ, dQ.sum(0), dv


def attend(g: np.ndarray, M: np.ndarray, U, Wq, b, v):
    """Logits, weights and context vector for a single query ``g``."""
    a, _ = attn_logits(g[None, :], M, U, Wq, b, v)
    w = _softmax(a[0])
    return a[0], w, w @ M


# ---------------------------------------------------------------------------
# encoding


@dataclass
class Memories:
    H: dict[str, np.ndarray]
    caches: dict[str, Any] = field(default_factory=dict)
    inputs: dict[str, np.ndarray] = field(default_factory=dict)


def encode(p: Params, cfg: ModelConfig, x: np.ndarray, s: np.ndarray, u: np.ndarray) -> Memories:
    mem = Memories({})
    for name, ids in zip(MEMS, (x, s, u)):
        table = p["emb_word"] if name == "x" else p["emb_node"]
        H, caches = _bilstm_fwd(p, f"enc_{name}", cfg.enc_layers, table[ids])
        mem.H[name] = H
        mem.caches[name] = caches
        mem.inputs[name] = ids
    return mem


def _init_state(p: Params, cfg: ModelConfig, mem: Memories):
    m = np.concatenate([mem.H[k].mean(0) for k in MEMS])
    hs = [np.tanh(m @ p[f"init_{l}_w"] + p[f"init_{l}_b"]) for l in range(cfg.dec_layers)]
    return m, hs


# ---------------------------------------------------------------------------
# teacher-forced loss and gradient


@dataclass
class LossResult:
    loss: float
    token_nll: float
    parent_nll: float
    terms: int
    steps: int


def forward_backward(p: Params, cfg: ModelConfig, ex: Encoded, grads: Params | None = None, scale: float = 1.0) -> LossResult:
    """Loss of one example; when ``grads`` is given, adds ``scale`` x gradient into it."""
    mem = encode(p, cfg, ex.x, ex.s, ex.u)
    m, h0s = _init_state(p, cfg, mem)
    T = len(ex.dec_in)
    emb = p["emb_node"]
    D = emb[ex.dec_in]
    if cfg.mode == "pp":
        D = np.concatenate([D, emb[ex.par_in]], axis=1)
    dec_caches = []
    X = D
    for l in range(cfg.dec_layers):
        h = cfg.dec_hidden
        X, c = _lstm_fwd(X, p[f"dec_{l}_wx"], p[f"dec_{l}_wh"], p[f"dec_{l}_b"], h0s[l], np.zeros(h))
        dec_caches.append(c)
    Gm = X

    logits, acaches, ctxs, weights = {}, {}, {}, {}
    for k in MEMS:
        A, ac = attn_logits(Gm, mem.H[k], p[f"att_{k}_u"], p[f"att_{k}_wq"], p[f"att_{k}_b"], p[f"att_{k}_v"])
        W = _softmax(A, axis=1)
        logits[k], acaches[k], weights[k] = A, ac, W
        ctxs[k] = W @ mem.H[k]
    F = np.concatenate([Gm, ctxs["x"], ctxs["s"], ctxs["u"]], axis=1)
    lam = _sigmoid(F @ p["gate_w"] + p["gate_b"][0])
    Pg = _softmax(F @ p["out_w"] + p["out_b"], axis=1)
    Acat = np.concatenate([logits[k] for k in MEMS], axis=1)
    Pc = _softmax(Acat, axis=1)
    ar = np.arange(T)
    pg_y = Pg[ar, ex.gen_target]
    gt = ex.gen_on * pg_y
    cp = (Pc * ex.copy_mask).sum(1)
    prob = np.maximum(lam * gt + (1.0 - lam) * cp, 1e-300)
    tok_nll = -np.log(prob)

    par_rows = np.zeros(0, dtype=np.int64)
    par_nll = np.zeros(0)
    if cfg.mode == "pp":
        Ap, pcache = attn_logits(Gm, Gm, p["att_p_u"], p["att_p_wq"], p["att_p_b"], p["att_p_v"])
        allowed = np.tril(np.ones((T, T), dtype=bool), -1) & ex.parent_ok[None, :]
        # the root has no parent and EOS carries no parent term
        par_rows = np.array([i for i in range(1, T) if ex.parents[i] != ROOT_PARENT], dtype=np.int64)
        Pp = np.zeros((T, T))
        if len(par_rows):
            Am = np.where(allowed[par_rows], Ap[par_rows], -np.inf)
            Pp[par_rows] = _softmax(Am, axis=1)
            par_nll = -np.log(np.maximum(Pp[par_rows, ex.parents[par_rows]], 1e-300))
    terms = T + len(par_rows)
    loss = float((tok_nll.sum() + par_nll.sum()) / terms)
    result = LossResult(loss, float(tok_nll.sum()), float(par_nll.sum()), terms, T - 1)
    if grads is None:
        return result

    wt = scale / terms
    dprob = -wt / prob
    dlam = dprob * (gt - cp)
    dzl = dlam * lam * (1.0 - lam)
    dpg_y = dprob * lam * ex.gen_on
    dZ = -Pg * (dpg_y * pg_y)[:, None]
    dZ[ar, ex.gen_target] += dpg_y * pg_y
    dcp = dprob * (1.0 - lam)
    dAcat = Pc * (ex.copy_mask - cp[:, None]) * dcp[:, None]

    grads["gate_w"] += F.T @ dzl
    grads["gate_b"][0] += dzl.sum()
    grads["out_w"] += F.T @ dZ
    grads["out_b"] += dZ.sum(0)
    dF = np.outer(dzl, p["gate_w"]) + dZ @ p["out_w"].T
    dG = dF[:, : cfg.dec_hidden].copy()
    off = cfg.dec_hidden
    lo = 0
    dH = {}
    for k in MEMS:
        H = mem.H[k]
        n, dm = H.shape
        dC = dF[:, off : off + dm]
        off += dm
        W = weights[k]
        dW = dC @ H.T
        dA = W * (dW - (dW * W).sum(1, keepdims=True)) + dAcat[:, lo : lo + n]
        lo += n
        dQin, dM, dU, dWq, db, dv = attn_logits_bwd(dA, p[f"att_{k}_u"], p[f"att_{k}_wq"], p[f"att_{k}_v"], acaches[k])
        grads[f"att_{k}_u"] += dU
        grads[f"att_{k}_wq"] += dWq
        grads[f"att_{k}_b"] += db
        grads[f"att_{k}_v"] += dv
        dG += dQin
        dH[k] = dM + W.T @ dC
    if cfg.mode == "pp" and len(par_rows):
        dAp = np.zeros((T, T))
        dAp[par_rows] = Pp[par_rows] * wt
        dAp[par_rows, ex.parents[par_rows]] -= wt
        dQin, dM, dU, dWq, db, dv = attn_logits_bwd(dAp, p["att_p_u"], p["att_p_wq"], p["att_p_v"], pcache)
        grads["att_p_u"] += dU
        grads["att_p_wq"] += dWq
        grads["att_p_b"] += db
        grads["att_p_v"] += dv
        dG += dQin + dM

    dX = dG
    dm_init = np.zeros_like(m)
    for l in range(cfg.dec_layers - 1, -1, -1):
        dX, dwx, dwh, db, dh0, _ = _lstm_bwd(np.ascontiguousarray(dX), p[f"dec_{l}_wx"], p[f"dec_{l}_wh"], dec_caches[l])
        grads[f"dec_{l}_wx"] += dwx
        grads[f"dec_{l}_wh"] += dwh
        grads[f"dec_{l}_b"] += db
        dz = dh0 * (1.0 - h0s[l] ** 2)
        grads[f"init_{l}_w"] += np.outer(m, dz)
        grads[f"init_{l}_b"] += dz
        dm_init += p[f"init_{l}_w"] @ dz
    nd = cfg.node_dim
    np.add.at(grads["emb_node"], ex.dec_in, dX[:, :nd])
    if cfg.mode == "pp":
        np.add.at(grads["emb_node"], ex.par_in, dX[:, nd:])

    off = 0
    for k in MEMS:
        H = mem.H[k]
        n, dm = H.shape
        dH[k] = dH[k] + dm_init[off : off + dm][None, :] / n
        off += dm
        dE = _bilstm_bwd(p, grads, f"enc_{k}", dH[k], mem.caches[k])
        table = "emb_word" if k == "x" else "emb_node"
        np.add.at(grads[table], mem.inputs[k], dE)
    return result


def batch_loss(p: Params, cfg: ModelConfig, batch: list[Encoded], grads: Params | None = None) -> float:
    """Mean example loss; gradients of that mean are accumulated into ``grads``."""
    total = 0.0
    scale = 1.0 / len(batch)
    for ex in batch:
        total += forward_backward(p, cfg, ex, grads, scale).loss
    return total / len(batch)


# ---------------------------------------------------------------------------
# step-wise decoding


@dataclass
class DecoderState:
    h: list[np.ndarray]
    c: list[np.ndarray]
    G: list[np.ndarray] = field(default_factory=list)


@dataclass
class StepOutput:
    dist: np.ndarray  # over the extended vocabulary
    lam: float
    gen: np.ndarray
    copy: np.ndarray  # copy mass summed onto surface tokens
    parent: np.ndarray | None = None  # logits over earlier nodes


@dataclass
class Context:
    """Per-input decoding context: memories, precomputed keys and the copy map."""

    mem: Memories
    keys: dict[str, np.ndarray]
    ext: list[str]
    copy_index: np.ndarray
    V: int


def prepare(p: Params, cfg: ModelConfig, voc: Vocabs, inp: TurnInput) -> tuple[Context, DecoderState]:
    x, s, u, surface = encode_input(inp, voc)
    mem = encode(p, cfg, x, s, u)
    keys = {k: mem.H[k] @ p[f"att_{k}_u"] for k in MEMS}
    ext = list(voc.nodes.itos)
    index = {t: i for i, t in enumerate(ext)}
    copy_index = np.empty(len(surface), dtype=np.int64)
    for j, tok in enumerate(surface):
        # out-of-vocabulary surface tokens extend the output space
        if tok not in index:
            index[tok] = len(ext)
            ext.append(tok)
        copy_index[j] = index[tok]
    _, hs = _init_state(p, cfg, mem)
    st = DecoderState(hs, [np.zeros(cfg.dec_hidden) for _ in range(cfg.dec_layers)])
    return Context(mem, keys, ext, copy_index, len(voc.nodes)), st


def _step(p: Params, cfg: ModelConfig, ctx: Context, st: DecoderState, x_in: np.ndarray) -> tuple[DecoderState, StepOutput]:
    hs, cs = [], []
    x = x_in
    for l in range(cfg.dec_layers):
        xp = (x @ p[f"dec_{l}_wx"] + p[f"dec_{l}_b"])[None, :]
        H, C, _ = kernels.lstm_forward(xp, p[f"dec_{l}_wh"], st.h[l], st.c[l])
        hs.append(H[0])
        cs.append(C[0])
        x = H[0]
    g = x
    feats = [g]
    logits = []
    for k in MEMS:
        q = g @ p[f"att_{k}_wq"] + p[f"att_{k}_b"]
        a = np.tanh(q[None, :] + ctx.keys[k]) @ p[f"att_{k}_v"]
        w = _softmax(a)
        feats.append(w @ ctx.mem.H[k])
        logits.append(a)
    f = np.concatenate(feats)
    lam = float(_sigmoid(f @ p["gate_w"] + p["gate_b"][0]))
    pg = _softmax(f @ p["out_w"] + p["out_b"])
    pc = _softmax(np.concatenate(logits))
    gen = np.zeros(len(ctx.ext))
    gen[: ctx.V] = pg
    copy = np.zeros(len(ctx.ext))
    np.add.at(copy, ctx.copy_index, pc)
    dist = lam * gen + (1.0 - lam) * copy
    parent = None
    if cfg.mode == "pp" and st.G:
        Gm = np.stack(st.G)
        q = g @ p["att_p_wq"] + p["att_p_b"]
        parent = np.tanh(q[None, :] + Gm @ p["att_p_u"]) @ p["att_p_v"]
    new = DecoderState(hs, cs, st.G + [g] if cfg.mode == "pp" else st.G)
    return new, StepOutput(dist, lam, gen, copy, parent)


def decode_step_vanilla(p: Params, cfg: ModelConfig, voc: Vocabs, ctx: Context, st: DecoderState, prev: str):
    x_in = p["emb_node"][voc.nodes.id(UNK if is_open_token(prev) else prev)]
    return _step(p, cfg, ctx, st, x_in)


def decode_step_pp(p: Params, cfg: ModelConfig, voc: Vocabs, ctx: Context, st: DecoderState, prev: str, prev_parent: str):
    e = p["emb_node"]
    x_in = np.concatenate([e[voc.nodes.id(UNK if is_open_token(prev) else prev)], e[voc.nodes.id(prev_parent)]])
    return _step(p, cfg, ctx, st, x_in)


@dataclass
class Decoded:
    tree: DialogTree
    tokens: list[str]
    steps: int
    truncated: bool
    repaired: bool
    parents: list[int] | None = None


def _valid_mask(ext: list[str], mode: str) -> np.ndarray:
    if mode == "vanilla":
        return np.array([t not in (BOS, ROOT, "<pad>") for t in ext])
    return np.array([t == EOS or node_token_ok(t) for t in ext])


def greedy_decode(p: Params, cfg: ModelConfig, voc: Vocabs, inp: TurnInput, max_len: int | None = None) -> Decoded:
    max_len = max_len or cfg.max_decode
    ctx, st = prepare(p, cfg, voc, inp)
    ok = _valid_mask(ctx.ext, cfg.mode)
    toks: list[str] = []
    parents: list[int] = []
    truncated = True
    if cfg.mode == "vanilla":
        prev = BOS
        for _ in range(max_len + 1):
            st, out = decode_step_vanilla(p, cfg, voc, ctx, st, prev)
            tok = ctx.ext[int(np.argmax(np.where(ok, out.dist, -1.0)))]
            if tok == EOS:
                truncated = False
                break
            toks.append(tok)
            prev = tok
            if len(toks) >= max_len:
                break
        d = delinearize(toks)
        return Decoded(d.tree, toks, len(toks), truncated, d.repaired or truncated)

    prev, prev_par = BOS, ROOT
    can_parent: list[bool] = []
    for i in range(max_len + 1):
        st, out = decode_step_pp(p, cfg, voc, ctx, st, prev, prev_par)
        dist = np.where(ok, out.dist, -1.0)
        if i == 0:
            dist[voc.nodes.id(EOS)] = -1.0
        tok = ctx.ext[int(np.argmax(dist))]
        if tok == EOS:
            truncated = False
            break
        if i == 0:
            par = ROOT_PARENT
        else:
            scores = np.where(np.array(can_parent), out.parent, -np.inf)
            par = int(np.argmax(scores)) if np.isfinite(scores).any() else 0
        toks.append(tok)
        parents.append(par)
        can_parent.append(tok in voc.nodes and tok not in voc.leaf_only and not is_open_token(tok))
        prev, prev_par = tok, (ROOT if par == ROOT_PARENT else toks[par])
        if len(toks) >= max_len:
            break
    if not toks:
        return Decoded(empty_state(), [], 0, truncated, True, [])
    try:
        tree = from_node_parent_form(NodeParentForm(tuple(toks), tuple(parents)))
        repaired = truncated
    except TreeError:
        tree, repaired = empty_state(), True
    return Decoded(tree, toks, len(toks), truncated, repaired, parents)
