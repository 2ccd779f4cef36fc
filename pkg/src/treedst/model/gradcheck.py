"""Finite-difference verification of the hand-written gradients."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..tree import parse_dotted
from .data import TurnExample, Vocabs, build_vocabs, encode_example, make_input
from .ted import ModelConfig, Params, batch_loss, init_params, zeros_like

TOLERANCE = 1e-4
FLOOR = 1e-6  # denominator floor so exactly-zero gradients compare absolutely


def toy_examples() -> list[TurnExample]:
    """A two-turn dialog; the second turn copies an open value and reuses history."""
    s0 = parse_dotted("user.taxi.book.object.equals.destination.equals.location.equals.[Main St]")
    a0 = parse_dotted("system.prompt.taxi.book.object.equals.time")
    s1 = parse_dotted(
        "user.taxi.book.object.equals"
        "\n  .destination.equals.location.equals.[Main St]"
        "\n  .time.equals.hour.equals.5"
    )
    x0 = make_input("get a taxi to [Main St]", None, None, None)
    x1 = make_input("at 5", a0, s0, s0)
    return [TurnExample("toy", 0, x0, s0), TurnExample("toy", 1, x1, s1)]


def toy_config(mode: str, hidden: int = 6) -> ModelConfig:
    return ModelConfig(
        mode=mode, word_dim=5, node_dim=4, utt_hidden=hidden, hist_hidden=hidden,
        dec_hidden=hidden, attn_dim=5, enc_layers=1, dec_layers=1, seed=3,
    )


@dataclass
class GradcheckReport:
    mode: str
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    worst: tuple[str, tuple[int, ...]] | None = None
    checked: int = 0
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), FLOOR)


def check_gradients(
    params: Params,
    cfg: ModelConfig,
    voc: Vocabs,
    examples: list[TurnExample],
    h: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare the analytic gradient of the mean batch loss with central differences.

    The fourth-order stencil keeps round-off noise far below the tolerance
    even for gradients around 1e-7. With ``max_entries`` only that many
    randomly chosen entries per parameter are probed.
    """
    t0 = time.perf_counter()
    batch = [encode_example(ex, voc, cfg.mode) for ex in examples]
    grads = zeros_like(params)
    batch_loss(params, cfg, batch, grads)

    def f() -> float:
        return batch_loss(params, cfg, batch)

    rng = np.random.default_rng(seed)
    report = GradcheckReport(cfg.mode, 0.0)
    for name in sorted(params):
        w = params[name]
        flat = w.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        worst = 0.0
        for i in idx:
            old = flat[i]
            vals = []
            for d in (2 * h, h, -h, -2 * h):
                flat[i] = old + d
                vals.append(f())
            flat[i] = old
            num = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
            err = relative_error(float(grads[name].reshape(-1)[i]), num)
            if err > worst:
                worst = err
                if err > report.max_rel_error:
                    report.max_rel_error = err
                    report.worst = (name, tuple(int(j) for j in np.unravel_index(i, w.shape)))
        report.per_param[name] = worst
        report.checked += len(idx)
    report.seconds = time.perf_counter() - t0
    return report


def run_toy_gradcheck(mode: str, hidden: int = 6, max_entries: int | None = None) -> tuple[GradcheckReport, Vocabs]:
    examples = toy_examples()
    voc = build_vocabs(examples)
    cfg = toy_config(mode, hidden)
    params = init_params(cfg, voc)
    return check_gradients(params, cfg, voc, examples, max_entries=max_entries), voc
