"""Compare sampler modes on CiteULike under identical settings.

Usage:
    python scripts/run_citeulike.py --input data/citeulike/users.dat --out results/citeulike.json

Without ``--input`` the file is looked up under ``$SDGAR_DATA_DIR/citeulike``.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from sdgar.experiments import compare_modes, find_citeulike, load_citeulike
from sdgar.trainer import TrainConfig


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--input", type=Path)
    p.add_argument("--out", type=Path, default=Path("results/citeulike.json"))
    p.add_argument("--modes", default="sd_gar,self_adversarial,uniform,dns")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--T", type=float, default=TrainConfig.T)
    p.add_argument("--l2", type=float, default=TrainConfig.l2_coeff)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    path = args.input or find_citeulike()
    if path is None or not path.is_file():
        print("CiteULike file not found; pass --input or set SDGAR_DATA_DIR", file=sys.stderr)
        return 2
    split = load_citeulike(path, seed=args.seed)
    print(f"contexts={split.train.num_contexts} items={split.train.num_items} "
          f"interactions={split.train.num_interactions + split.validation.num_interactions + split.test.num_interactions}")
    base = replace(TrainConfig(dim=32, K=32), epochs=args.epochs, T=args.T, l2_coeff=args.l2, seed=args.seed)
    res = compare_modes(split, base, args.modes.split(","), threads=args.threads)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps({"config": base.to_dict(), "results": res}, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
