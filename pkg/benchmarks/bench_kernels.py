"""Compare the compiled and numpy LSTM kernels on forward+backward passes.

    python benchmarks/bench_kernels.py --hidden 64 --steps 50 --repeat 200
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from treedst.model import _lstm_py

try:
    from treedst.model import _lstm as _compiled
except ImportError:  # extension not built
    _compiled = None


def bench(impl, steps: int, hidden: int, repeat: int, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    xp = rng.normal(size=(steps, 4 * hidden))
    wh = rng.normal(scale=0.1, size=(hidden, 4 * hidden))
    h0 = np.zeros(hidden)
    c0 = np.zeros(hidden)
    dH = rng.normal(size=(steps, hidden))
    t0 = time.perf_counter()
    for _ in range(repeat):
        H, C, G = impl.lstm_forward(xp, wh, h0, c0)
        impl.lstm_backward(dH, wh, H, C, G, h0, c0)
    return (time.perf_counter() - t0) / repeat


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hidden", type=int, nargs="+", default=[16, 64])
    ap.add_argument("--steps", type=int, nargs="+", default=[10, 50])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json", action="store_true", help="emit one JSON object per configuration")
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled kernel not built; only the numpy kernel is timed")
    for h in args.hidden:
        for t in args.steps:
            py = bench(_lstm_py, t, h, args.repeat)
            cy = bench(_compiled, t, h, args.repeat) if _compiled is not None else None
            row = {"hidden": h, "steps": t, "numpy_ms": py * 1e3, "cython_ms": None if cy is None else cy * 1e3}
            if args.json:
                print(json.dumps(row))
            elif cy is None:
                print(f"h={h:4d} T={t:4d}  numpy {py * 1e3:8.3f} ms")
            else:
                print(f"h={h:4d} T={t:4d}  numpy {py * 1e3:8.3f} ms  cython {cy * 1e3:8.3f} ms  speedup {py / cy:5.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
