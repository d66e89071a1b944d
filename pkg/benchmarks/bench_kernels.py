"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--epochs E]

Part one times each kernel in-process on training-sized arrays.  Part two
times whole pretraining epochs in two subprocesses, one per backend, since
the backend is fixed at import time.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from spargan import _kernels as K

EPOCH_SNIPPET = """
import time
from spargan import BACKEND, tcgan
from spargan.data import WorldConfig, make_world, sample_dataset
world = WorldConfig()
split = sample_dataset(make_world(world))
t0 = time.perf_counter()
tcgan.pretrain_representation(split.train_base, world, tcgan.GanConfig(), tcgan.GanTrainConfig(epochs={epochs}), 0)
print(BACKEND, (time.perf_counter() - t0) / {epochs})
"""


def kernel_cases(rng):
    logits = rng.standard_normal((24, 40))
    labels = rng.integers(0, 40, 24)
    src = rng.standard_normal(24)
    targets = rng.integers(0, 2, 24).astype(float)
    h = rng.standard_normal((24, 128))
    w = rng.standard_normal(128 * 128)
    g = rng.standard_normal(128 * 128)
    return {
        "softmax_rows": lambda m: m.softmax_rows(logits),
        "softmax_xent": lambda m: m.softmax_xent(logits, labels),
        "sigmoid_bce": lambda m: m.sigmoid_bce(src, targets, 1e-7),
        "leaky_relu_fwd": lambda m: m.leaky_relu_fwd(h, 0.2),
        "leaky_relu_bwd": lambda m: m.leaky_relu_bwd(h, h, 0.2),
        "tanh_bwd": lambda m: m.tanh_bwd(np.tanh(h), h),
        "adam_update": lambda m: m.adam_update(w, g, np.zeros_like(w), np.zeros_like(w),
                                               2e-4, 0.9, 0.999, 1e-8, 1),
        "sgd_momentum_update": lambda m: m.sgd_momentum_update(w, g, np.zeros_like(w), 1e-3, 0.5),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=3)
    args = ap.parse_args()

    if K.compiled is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':<22}{'numpy us':>12}{'cython us':>12}{'speedup':>10}")
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        py = min(timeit.repeat(lambda: fn(K.py), number=args.repeat, repeat=3)) / args.repeat * 1e6
        if K.compiled is None:
            print(f"{name:<22}{py:>12.2f}{'-':>12}{'-':>10}")
            continue
        cy = min(timeit.repeat(lambda: fn(K.compiled), number=args.repeat, repeat=3)) / args.repeat * 1e6
        print(f"{name:<22}{py:>12.2f}{cy:>12.2f}{py / cy:>9.2f}x")

    print(f"\npretraining epoch, default world ({args.epochs} epochs each)")
    for pure in ("1", "0"):
        env = {**os.environ, "SPARGAN_PURE_PYTHON": pure}
        out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET.format(epochs=args.epochs)],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        print(f"  {out[0]:<8}{float(out[1]):.3f} s/epoch")


if __name__ == "__main__":
    main()
