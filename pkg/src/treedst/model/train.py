"""Mini-batch Adam training with periodic validation and early stopping."""
from __future__ import annotations

import contextlib
import io
import json
import logging
import os
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from ..tree import DialogTree, tree_equal
from .data import Encoded, TurnExample, TurnInput, Vocabs, encode_example
from .ted import Decoded, ModelConfig, Params, batch_loss, greedy_decode, init_params, zeros_like

log = logging.getLogger(__name__)

FORMAT = "treedst-checkpoint/1"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 50
    max_epochs: int = 200
    validate_every: int = 2
    patience: int = 4  # non-improving validations before stopping
    clip_norm: float | None = 5.0
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def deterministic_requested() -> bool:
    return os.environ.get("TREEDST_DETERMINISTIC", "") not in ("", "0")


@contextlib.contextmanager
def numerics(deterministic: bool | None = None) -> Iterator[None]:
    """Pin BLAS to one thread so reductions always run in the same order."""
    if deterministic is None:
        deterministic = deterministic_requested()
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


@dataclass
class Model:
    cfg: ModelConfig
    voc: Vocabs
    params: Params

    @classmethod
    def create(cls, cfg: ModelConfig, voc: Vocabs) -> "Model":
        return cls(cfg, voc, init_params(cfg, voc))

    def decode(self, inp: TurnInput, max_len: int | None = None) -> Decoded:
        return greedy_decode(self.params, self.cfg, self.voc, inp, max_len)

    def predict(self, inp: TurnInput) -> DialogTree:
        return self.decode(inp).tree

    def encode(self, ex: TurnExample) -> Encoded:
        return encode_example(ex, self.voc, self.cfg.mode)


class Adam:
    def __init__(self, params: Params, cfg: TrainConfig) -> None:
        self.cfg = cfg
        self.m = zeros_like(params)
        self.v = zeros_like(params)
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        c = self.cfg
        self.t += 1
        a = c.lr * np.sqrt(1.0 - c.beta2**self.t) / (1.0 - c.beta1**self.t)
        for k in sorted(params):
            g = grads[k]
            self.m[k] *= c.beta1
            self.m[k] += (1.0 - c.beta1) * g
            self.v[k] *= c.beta2
            self.v[k] += (1.0 - c.beta2) * g * g
            params[k] -= a * self.m[k] / (np.sqrt(self.v[k]) + c.eps)


def clip_grads(grads: Params, max_norm: float | None) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items()))))
    if max_norm is not None and norm > max_norm:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


def exact_match_rate(model: Model, examples: Sequence[TurnExample]) -> float:
    """Turn-level exact match with gold history inputs."""
    if not examples:
        return 0.0
    hits = sum(tree_equal(model.predict(ex.inp), ex.target) for ex in examples)
    return hits / len(examples)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    wall_seconds: float
    dev_em: float | None = None
    train_em: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_dev_em: float | None = None
    stopped_early: bool = False

    @property
    def epoch_seconds(self) -> list[float]:
        return [r.wall_seconds for r in self.history]


def train(
    train_examples: Sequence[TurnExample],
    dev_examples: Sequence[TurnExample],
    model: Model,
    cfg: TrainConfig = TrainConfig(),
    log_path: str | Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train ``model`` in place; its parameters end at the best validation point.

    Validation runs every ``cfg.validate_every`` epochs on ``dev_examples`` with
    error ``1 - exact match``; training stops once ``cfg.patience`` consecutive
    validations fail to lower the best error. Ties keep the later parameters.
    Without dev examples training runs for ``cfg.max_epochs``.
    """
    if not train_examples:
        raise ValueError("no training examples")
    encoded = [model.encode(ex) for ex in train_examples]
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg)
    result = TrainResult(model)
    best_err = np.inf
    best_params: Params | None = None
    bad = 0
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        with numerics():
            for epoch in range(1, cfg.max_epochs + 1):
                t0 = time.perf_counter()
                order = rng.permutation(len(encoded))
                total = 0.0
                for lo in range(0, len(order), cfg.batch_size):
                    batch = [encoded[i] for i in order[lo : lo + cfg.batch_size]]
                    grads = zeros_like(model.params)
                    loss = batch_loss(model.params, model.cfg, batch, grads)
                    if not np.isfinite(loss):
                        raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, batch starting at {lo}")
                    clip_grads(grads, cfg.clip_norm)
                    opt.step(model.params, grads)
                    total += loss * len(batch)
                rec = EpochRecord(epoch, total / len(encoded), time.perf_counter() - t0)
                if dev_examples and epoch % cfg.validate_every == 0:
                    rec.dev_em = exact_match_rate(model, dev_examples)
                    err = 1.0 - rec.dev_em
                    if err < best_err:
                        best_err, bad = err, 0
                    else:
                        bad += 1
                    if err <= best_err:
                        best_params = {k: v.copy() for k, v in model.params.items()}
                        result.best_epoch, result.best_dev_em = epoch, rec.dev_em
                result.history.append(rec)
                log.info("epoch %d loss %.4f dev_em %s %.2fs", epoch, rec.loss, rec.dev_em, rec.wall_seconds)
                if sink:
                    sink.write(json.dumps(rec.to_dict()) + "\n")
                    sink.flush()
                if on_epoch:
                    on_epoch(rec)
                if bad >= cfg.patience:
                    result.stopped_early = True
                    break
    finally:
        if sink:
            sink.close()
    if best_params is not None:
        model.params.update(best_params)
    else:
        result.best_epoch = len(result.history)
    return result


# ---------------------------------------------------------------------------
# checkpoints: one .npz holding the arrays plus a JSON metadata string


def save_model(path: str | Path, model: Model, meta: dict[str, Any] | None = None) -> None:
    header = {
        "format": FORMAT,
        "model_config": model.cfg.to_dict(),
        "vocabs": model.voc.to_dict(),
        "meta": meta or {},
    }
    arrays = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    arrays.update((f"p/{k}", v) for k, v in sorted(model.params.items()))
    # fixed zip timestamps keep identical models byte-identical on disk
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_model(path: str | Path) -> tuple[Model, dict[str, Any]]:
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: not a checkpoint (format {header.get('format')!r})")
        params = {k[2:]: z[k].astype(np.float64) for k in z.files if k.startswith("p/")}
    model = Model(ModelConfig.from_dict(header["model_config"]), Vocabs.from_dict(header["vocabs"]), params)
    return model, header.get("meta", {})
