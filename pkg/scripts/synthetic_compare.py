"""Sampler-mode comparison on a synthetic low-rank dataset (no download needed)."""
import argparse
import json
import sys
from pathlib import Path

from sdgar.experiments import compare_modes, synthetic_split
from sdgar.trainer import TrainConfig


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--contexts", type=int, default=1500)
    p.add_argument("--items", type=int, default=3000)
    p.add_argument("--per-context", type=int, default=20)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--seeds", default="0")
    p.add_argument("--modes", default="sd_gar,self_adversarial,uniform,dns")
    p.add_argument("--out", type=Path)
    args = p.parse_args(argv)

    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        split = synthetic_split(args.contexts, args.items, per_context=args.per_context, seed=seed)
        cfg = TrainConfig(dim=args.dim, K=args.dim, epochs=args.epochs, T=args.T, seed=seed, eval_k=args.k)
        for mode, r in compare_modes(split, cfg, args.modes.split(","), k=args.k).items():
            rows.append({"seed": seed, "mode": mode, **r})
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))
    return 0


if __name__ == "__main__":
    sys.exit(main())
