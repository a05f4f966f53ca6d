#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Sizes mirror the two regimes the engine actually runs: desk-scale synthetic
features (D=64) and full-scale exported features (40 categories, 12 views,
D=768, ~2.5k shapes). The active backend for normal runs is chosen by the
PEVA_BACKEND environment variable; this script always times both.
"""

import argparse
import time

import numpy as np

from peva import kernels
from peva.rng import Stream


def bench(fn, *args, repeats, warmups=2):
    for _ in range(warmups):
        fn(*args)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def row(name, np_time, nb_time):
    ratio = np_time / nb_time if nb_time > 0 else float("inf")
    print(f"{name:<42} {np_time * 1e6:>12.1f} {nb_time * 1e6:>12.1f} {ratio:>8.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()

    if kernels.numba_impls is None:
        raise SystemExit("numba is not importable; nothing to compare")
    nb = kernels.numba_impls
    np_impl = kernels.numpy_impls

    rng = Stream(0)
    print(f"{'kernel':<42} {'numpy us':>12} {'numba us':>12} {'speedup':>8}")

    # aggregation, desk scale and full scale
    for label, (n, m, d) in {
        "peva_fused 10x8 views, d=64": (10, 8, 64),
        "peva_fused 40x12 views, d=768": (40, 12, 768),
    }.items():
        prompts = rng.normals(n * d).reshape(n, d)
        views = rng.normals(m * d).reshape(m, d)
        row(label,
            bench(np_impl["peva_fused"], prompts, views, repeats=args.repeats),
            bench(nb["peva_fused"], prompts, views, repeats=args.repeats))

    # encoder row kernels at training batch size (32 shapes x 9 tokens)
    x = rng.normals(288 * 512).reshape(288, 512)
    g = rng.normals(288 * 512).reshape(288, 512)
    gamma, beta = np.ones(512), np.zeros(512)
    row("softmax_rows 288x512",
        bench(np_impl["softmax_rows"], x, repeats=args.repeats),
        bench(nb["softmax_rows"], x, repeats=args.repeats))
    row("layer_norm_rows 288x512",
        bench(lambda: np_impl["layer_norm_rows"](x, gamma, beta, 1e-5), repeats=args.repeats),
        bench(lambda: nb["layer_norm_rows"](x, gamma, beta, 1e-5), repeats=args.repeats))
    row("gelu 288x512",
        bench(np_impl["gelu"], x, repeats=args.repeats),
        bench(nb["gelu"], x, repeats=args.repeats))
    row("gelu_bwd 288x512",
        bench(np_impl["gelu_bwd"], x, g, repeats=args.repeats),
        bench(nb["gelu_bwd"], x, g, repeats=args.repeats))

    # segment attention on a 32-shape batch, 4 heads of width 256
    q = rng.normals(288 * 1024).reshape(288, 1024)
    bounds = np.arange(0, 289, 9, dtype=np.int64)
    out, cache = np_impl["seg_attention"](q, q, q, bounds, 4)
    row("seg_attention 32 segments, 4 heads",
        bench(np_impl["seg_attention"], q, q, q, bounds, 4, repeats=args.repeats),
        bench(nb["seg_attention"], q, q, q, bounds, 4, repeats=args.repeats))
    row("seg_attention_bwd 32 segments",
        bench(np_impl["seg_attention_bwd"], out, q, q, q, cache, bounds, 4,
              repeats=args.repeats),
        bench(nb["seg_attention_bwd"], out, q, q, q, cache, bounds, 4,
              repeats=args.repeats))

    # optimizer update over a full parameter tensor
    p = rng.normals(64 * 1024)
    grad = rng.normals(64 * 1024)
    m1, v1 = np.zeros_like(p), np.zeros_like(p)
    adam_args = (0.001, 0.9, 0.999, 1e-8, 1e-4, 0.1, 0.001, 1.0)
    row("adam_update 65k params",
        bench(lambda: np_impl["adam_update"](p.copy(), grad, m1.copy(), v1.copy(), *adam_args),
              repeats=args.repeats),
        bench(lambda: nb["adam_update"](p.copy(), grad, m1.copy(), v1.copy(), *adam_args),
              repeats=args.repeats))

    # raw stream generation
    state = Stream(1)._state
    out64 = np.empty(100_000, dtype=np.uint64)
    row("xoshiro_fill 100k",
        bench(np_impl["xoshiro_fill"], state.copy(), out64, repeats=max(1, args.repeats // 10)),
        bench(nb["xoshiro_fill"], state.copy(), out64, repeats=args.repeats))

    print(f"\nactive backend for library calls: {kernels.BACKEND} "
          f"(override with PEVA_BACKEND=numpy|numba|auto)")


if __name__ == "__main__":
    main()
