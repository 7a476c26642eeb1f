"""One-at-a-time sensitivity sweeps: embedding size, discriminator negatives,
generator estimation samples.

Runs on CiteULike when available, otherwise on the synthetic dataset. Output
is JSON lines, one per (parameter, value).
"""
import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from sdgar.evaluator import evaluate
from sdgar.experiments import find_citeulike, load_citeulike, synthetic_split
from sdgar.trainer import TrainConfig, train

GRIDS = {
    "dim": [16, 32, 64, 128, 256],
    "neg_per_context": [1, 5, 10, 15, 20],
    "est_samples": [16, 32, 64, 128, 256],
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--params", default=",".join(GRIDS))
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--synthetic", action="store_true", help="force the synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("results/sensitivity.jsonl"))
    args = p.parse_args(argv)

    path = None if args.synthetic else find_citeulike()
    split = load_citeulike(path, seed=args.seed) if path else synthetic_split(1500, 3000, seed=args.seed)
    base = TrainConfig(epochs=args.epochs, seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for name in args.params.split(","):
            for value in GRIDS[name]:
                cfg = replace(base, **{name: value})
                if name == "dim":
                    cfg = replace(cfg, K=value)
                disc, _, tlog = train(cfg, split)
                rec = {"param": name, "value": value, "dataset": "citeulike" if path else "synthetic",
                       "test_ndcg": evaluate(disc, split, cfg.eval_k).mean_ndcg, "best_epoch": tlog.best_epoch}
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
                print(json.dumps(rec))
    return 0


if __name__ == "__main__":
    sys.exit(main())
