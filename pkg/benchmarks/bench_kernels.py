"""Time alternating training epochs on the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--epochs 5] [--n-per-class 200] [--rank 2] [--hidden 75]

Each backend gets one warm-up epoch (so JIT compilation is excluded), then the
requested number of timed epochs.  The final weights of both backends are
compared so a speedup never hides a numerical difference.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from rankr_fnn import _kernels
from rankr_fnn.data import synth
from rankr_fnn.model import ModelConfig
from rankr_fnn.training import TrainConfig, init_weights, train


def run(backend: str, data, cfg: ModelConfig, epochs: int):
    _kernels.USE_NUMBA = backend == "numba"
    train(init_weights(cfg), data, TrainConfig(learning_rate=0.01, max_epochs=1, tol=0.0))
    m = init_weights(cfg)
    start = time.perf_counter()
    train(m, data, TrainConfig(learning_rate=0.01, max_epochs=epochs, tol=0.0))
    return (time.perf_counter() - start) / epochs, m


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--n-per-class", type=int, default=200)
    ap.add_argument("--shape", default="5,5,103")
    ap.add_argument("--classes", type=int, default=9)
    ap.add_argument("--rank", type=int, default=2)
    ap.add_argument("--hidden", type=int, default=75)
    args = ap.parse_args()

    shape = tuple(int(v) for v in args.shape.split(","))
    data = synth(0, args.n_per_class, shape, args.classes)
    cfg = ModelConfig(shape, args.rank, args.hidden, args.classes, seed=1)
    print(f"N={len(data)} shape={shape} R={args.rank} Q={args.hidden} C={args.classes}")

    results = {}
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    for name in backends:
        per_epoch, model = run(name, data, cfg, args.epochs)
        results[name] = model
        print(f"{name:6s} {per_epoch * 1e3:10.1f} ms/epoch")
    if len(results) == 2:
        gap = max(float(np.max(np.abs(a - b)))
                  for a, b in zip(results["numpy"].factors, results["numba"].factors))
        print(f"max factor difference between backends: {gap:.2e}")


if __name__ == "__main__":
    main()
