#!/usr/bin/env python3
"""Benchmark the kernel backends against each other.

Times the three hot operations (forward, backward, adapt_eval) at the default
experiment sizes on every importable backend and prints the speedup of the
compiled core over the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from fedmeta import _kernels
from fedmeta.numcore.model import ModelConfig, plan_for


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(repeats):
    cfg = ModelConfig(input_dim=24, encoder_dims=(64, 32), bn_dim=None,
                      head_dims=(32,), n_way=2)
    plan = plan_for(cfg)
    rng = np.random.default_rng(0)
    values = rng.normal(0, 0.3, size=plan.total)
    Xs = rng.normal(size=(10, 24))   # 2-way 5-shot support
    ys = rng.integers(0, 2, size=10)
    Xq = rng.normal(size=(20, 24))   # query = twice the support
    yq = rng.integers(0, 2, size=20)

    rows = []
    timings = {}
    for name, backend in sorted(_kernels.available().items()):
        logits, cache = backend.forward(plan, values, Xq)
        dlog = rng.normal(size=logits.shape) / 20

        t_fwd = time_call(lambda: backend.forward(plan, values, Xq), repeats)
        t_bwd = time_call(lambda: backend.backward(cache, dlog), repeats)
        t_adapt = time_call(
            lambda: backend.adapt_eval(plan, values, Xs, ys, Xq, yq,
                                       0.01, 5, 5.0, 2.0),
            repeats,
        )
        timings[name] = (t_fwd, t_bwd, t_adapt)
        rows.append((name, t_fwd, t_bwd, t_adapt))

    print(f"{'backend':10s} {'forward':>12s} {'backward':>12s} {'adapt_eval':>12s}")
    for name, f, b, a in rows:
        print(f"{name:10s} {f * 1e6:10.1f}us {b * 1e6:10.1f}us {a * 1e6:10.1f}us")
    if "cython" in timings and "python" in timings:
        py, cy = timings["python"], timings["cython"]
        print("speedup    " + "  ".join(
            f"{label}: {p / c:5.1f}x"
            for label, p, c in zip(("forward", "backward", "adapt_eval"), py, cy)
        ))


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=200)
    bench(ap.parse_args().repeats)
