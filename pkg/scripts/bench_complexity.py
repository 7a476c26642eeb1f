"""Timing experiments behind the complexity claims.

1. discriminator epoch time at fixed interaction count while M grows;
2. generator-round time against N + M (log-log slope);
3. alias vs naive softmax per-draw cost (same as ``sdgar bench-sampler``).
"""
import argparse
import sys
import time

import numpy as np

from sdgar import discriminator as D
from sdgar.cli import bench_sampler
from sdgar.generator import GeneratorParams, generator_round, rebuild_tables
from sdgar.trainer import TrainConfig, train_epoch


def epoch_seconds(M, N=2000, per_context=20, repeats=5):
    rng = np.random.default_rng(0)
    positives = tuple(np.sort(rng.choice(M, per_context, replace=False)) for _ in range(N))
    cfg = TrainConfig()
    disc = D.DiscriminatorParams.init(N, M, cfg.dim, rng)
    gen = GeneratorParams.init(N, M, cfg.K, rng)
    tables = rebuild_tables(gen)
    opt = D.OptimizerState.for_params(disc)
    train_epoch(disc, opt, gen, tables, cfg, positives, rng)
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        train_epoch(disc, opt, gen, tables, cfg, positives, rng)
        best = min(best, time.perf_counter() - t)
    return best


def round_seconds(n, repeats=3):
    rng = np.random.default_rng(0)
    disc = D.DiscriminatorParams.init(n, n, 32, rng, 0.1)
    gen = GeneratorParams.init(n, n, 32, rng)
    tables = rebuild_tables(gen)
    generator_round(disc, gen, tables, 1.0, 1.0, 1.0, 64, rng)
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        generator_round(disc, gen, tables, 1.0, 1.0, 1.0, 64, rng)
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--epoch-items", default="2000,4000,10000,20000,50000")
    p.add_argument("--round-sizes", default="500,1000,2000,4000,8000,16000")
    p.add_argument("--sampler-sizes", default="1000,10000,100000,1000000")
    args = p.parse_args(argv)

    print("# epoch time, N=2000, 20 positives per context")
    print("M\tseconds")
    for M in map(int, args.epoch_items.split(",")):
        print(f"{M}\t{epoch_seconds(M):.4f}")

    print("\n# generator round, N = M = n")
    print("N+M\tseconds")
    sizes = np.array([int(s) for s in args.round_sizes.split(",")])
    secs = np.array([round_seconds(int(n)) for n in sizes])
    for n, s in zip(sizes, secs):
        print(f"{2 * n}\t{s:.4f}")
    x, y = np.log(2 * sizes), np.log(secs)
    slope, _ = np.polyfit(x, y, 1)
    print(f"# log-log slope {slope:.3f}, R2 {np.corrcoef(x, y)[0, 1] ** 2:.4f}")

    print("\n# per-draw cost")
    print("M\talias_ns\tnaive_ns")
    for r in bench_sampler([int(s) for s in args.sampler_sizes.split(",")]):
        print(f"{r['M']}\t{r['alias_ns']:.1f}\t{r['naive_ns']:.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
