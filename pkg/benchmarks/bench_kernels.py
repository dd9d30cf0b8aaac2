"""Benchmark the 3x3 convolution kernels and full model training steps.

Compares every available kernel backend (compiled extension vs numpy
fallback) on the conv shapes the models actually use, then times one full
forward/backward/update step per model family under the import-selected
backend (set CSI_MTL_KERNELS=python|native before running to pin it).

Usage: python3 benchmarks/bench_kernels.py [--batch 50] [--size 32] [--repeats 5]
"""

import argparse
import time

import numpy as np

from csi_mtl import ModelConfig, TrainConfig, build_model
from csi_mtl.kernels import (
    BACKEND,
    available_backends,
    conv2d_backward_input,
    conv2d_backward_params,
    conv2d_forward,
)
from csi_mtl.nn import Adam


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_raw_kernels(batch, size, repeats):
    rng = np.random.default_rng(0)
    # channel shapes that appear in the csinet/stnet blocks
    shapes = [(2, 8), (8, 16), (16, 2), (2, 2)]
    print(f"raw conv kernels, batch={batch}, image {size}x{size}, best of {repeats}")
    header = f"{'c_in->c_out':>12} {'op':>16}"
    backends = available_backends()
    for name in backends:
        header += f" {name + ' (ms)':>14}"
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)
    for c_in, c_out in shapes:
        x = rng.standard_normal((batch, c_in, size, size)).astype(np.float32)
        w = rng.standard_normal((c_out, c_in, 3, 3)).astype(np.float32)
        b = rng.standard_normal(c_out).astype(np.float32)
        dy = rng.standard_normal((batch, c_out, size, size)).astype(np.float32)
        ops = [
            ("forward", lambda impl: conv2d_forward(x, w, b, impl=impl)),
            ("backward_input", lambda impl: conv2d_backward_input(dy, w, impl=impl)),
            ("backward_params", lambda impl: conv2d_backward_params(dy, x, impl=impl)),
        ]
        for op_name, op in ops:
            row = f"{f'{c_in}->{c_out}':>12} {op_name:>16}"
            per_backend = []
            for impl in backends:
                dt = best_of(lambda: op(impl), repeats)
                per_backend.append(dt)
                row += f" {dt * 1e3:>14.3f}"
            if len(per_backend) == 2:
                row += f" {per_backend[1] / per_backend[0]:>8.1f}x"
            print(row)


def bench_model_step(batch, size, repeats):
    rng = np.random.default_rng(1)
    x = rng.random((batch, 2, size, size), dtype=np.float32)
    tc = TrainConfig()
    print(f"\nfull train step (forward + backward + adam), backend={BACKEND}")
    for family in ("csinet", "stnet"):
        enc = build_model(ModelConfig(family, "encoder", "1/4", dims=(size, size)), seed=0)
        dec = build_model(ModelConfig(family, "decoder", "1/4", dims=(size, size)), seed=1)
        enc.bind_names("enc")
        dec.bind_names("dec")
        params = enc.parameters() + dec.parameters()
        opt = Adam(params, lr=tc.learning_rate, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps)

        def step():
            for m in (enc, dec):
                m.zero_grad()
            y = dec.forward(enc.forward(x))
            enc.backward(dec.backward(np.float32(2.0 / batch) * (y - x)))
            opt.step()

        step()  # warm the caches before timing
        dt = best_of(step, repeats)
        n_params = sum(p.data.size for p in params)
        print(f"  {family:>7}: {dt * 1e3:8.1f} ms/step ({n_params:,} params)")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=50)
    ap.add_argument("--size", type=int, default=32, help="square image side")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    print(f"available backends: {available_backends()} (active: {BACKEND})\n")
    bench_raw_kernels(args.batch, args.size, args.repeats)
    bench_model_step(args.batch, args.size, args.repeats)


if __name__ == "__main__":
    main()
