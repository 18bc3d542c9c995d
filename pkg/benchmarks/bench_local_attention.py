"""Time the compiled and numpy local-attention kernels on the same inputs.

    python3 benchmarks/bench_local_attention.py [--size 64] [--channels 32] [--window 5]
"""

import argparse
import time

import numpy as np

from hopmatting.attention import kernels


def bench(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--window", type=int, default=5)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    b, n, c, k = args.batch, args.size, args.channels, args.window
    q = rng.standard_normal((b, n, n, c))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    v = rng.standard_normal((b, n, n, c))
    r = k // 2 + 1
    pe = rng.standard_normal((r, r, c)) * 0.1
    g = rng.standard_normal((b, n, n, c))

    print(f"B={b} H=W={n} C={c} k={k}")
    print(f"{'backend':<10}{'forward ms':>12}{'backward ms':>13}")
    times, outs = {}, {}
    for name in sorted(kernels.BACKENDS):
        outs[name], attn = kernels.local_forward(q, v, pe, k, backend=name)
        tf = bench(lambda: kernels.local_forward(q, v, pe, k, backend=name), args.repeat)
        tb = bench(lambda: kernels.local_backward(q, v, pe, k, attn, g, backend=name), args.repeat)
        times[name] = (tf, tb)
        print(f"{name:<10}{tf * 1e3:>12.2f}{tb * 1e3:>13.2f}")
    if "compiled" in times:
        (cf, cb), (pf, pb) = times["compiled"], times["python"]
        diff = np.abs(outs["compiled"] - outs["python"]).max()
        print(f"speedup: forward {pf / cf:.1f}x, backward {pb / cb:.1f}x; max |output difference| {diff:.2e}")
    if len(kernels.BACKENDS) == 1:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
