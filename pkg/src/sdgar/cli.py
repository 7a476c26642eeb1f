"""``sdgar`` command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .checkpoint import ChecksumError, ShapeMismatchError, load_checkpoint, save_checkpoint
from .evaluator import evaluate
from .trainer import SAMPLER_MODES, ConfigError, TrainConfig, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# config plumbing -----------------------------------------------------------

_FLAG_ALIASES = {"T": "temperature", "sampler_mode": "sampler"}


def _coerce(name: str, value):
    default = getattr(TrainConfig(), name)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        v = str(value).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {value!r}")
    try:
        return type(default)(value)
    except (TypeError, ValueError):
        raise UsageError(f"{name}: cannot parse {value!r}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config not found: {path}")
    known = set(TrainConfig.field_names())
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, value.strip())
    return out


def build_config(args) -> TrainConfig:
    values = TrainConfig().to_dict()
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in TrainConfig.field_names():
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return TrainConfig(**values).validate()


def write_config(config: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in config.to_dict().items():
            fh.write(f"{k} = {v}\n")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    for name, default in TrainConfig().to_dict().items():
        flags = ["--" + name.replace("_", "-")]
        if name in _FLAG_ALIASES:
            flags.insert(0, "--" + _FLAG_ALIASES[name])
        if name == "seed":
            continue
        if isinstance(default, bool):
            p.add_argument(*flags, dest=name, type=lambda s, n=name: _coerce(n, s), default=None,
                           metavar="BOOL", help=f"default {default}")
        elif name == "sampler_mode":
            p.add_argument(*flags, dest=name, choices=SAMPLER_MODES, default=None, help=f"default {default}")
        else:
            p.add_argument(*flags, dest=name, type=type(default), default=None, help=f"default {default}")
    p.add_argument("--config", help="key = value config file (CLI flags take precedence)")


def _data_dir(args) -> Path:
    if args.data:
        return Path(args.data)
    return ds_mod.default_data_dir()


def _require(path: Path, what: str = "input") -> Path:
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


# commands ------------------------------------------------------------------

def cmd_split(args) -> int:
    src = _require(Path(args.input))
    if args.format == "user-lists":
        if args.rating_threshold is not None:
            raise UsageError("--rating-threshold does not apply to user-lists files")
        data = ds_mod.load_user_lists(src)
    else:
        data = ds_mod.load_interactions(src, args.rating_threshold)
    raw_interactions = data.num_interactions
    data = ds_mod.filter_min_interactions(data, args.min_count)
    sp = ds_mod.split(data, args.train_frac, args.valid_frac, args.seed)
    meta = ds_mod.write_split(sp, args.out_dir, {
        "source": str(src),
        "rating_threshold": args.rating_threshold,
        "min_count": args.min_count,
        "filter_order": "threshold_then_min_count",
        "raw_interactions": raw_interactions,
        "interactions": data.num_interactions,
    })
    print(f"contexts={meta['num_contexts']} items={meta['num_items']} "
          f"train={meta['lines_train']} valid={meta['lines_valid']} test={meta['lines_test']}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = build_config(args)
    split_dir = _require(_data_dir(args), "data")
    sp = ds_mod.load_split(split_dir)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_config(config, out / "config.txt")
    log_path = Path(args.log) if args.log else out / "train_log.jsonl"
    disc, gen, tlog = train(config, sp, log_path=log_path, threads=args.threads)
    save_checkpoint(disc, gen, out / "model.ckpt", config=config.to_dict(),
                    extra={"best_epoch": tlog.best_epoch, "split_dir": str(split_dir)})
    msg = f"trained {len(tlog.records)} epochs, best epoch {tlog.best_epoch}"
    if args.eval_test:
        rep = evaluate(disc, sp, config.eval_k, threads=args.threads)
        rep.write(out / "test_report.json")
        msg += f", test NDCG@{config.eval_k} {rep.mean_ndcg:.6f}"
    print(msg)
    return EXIT_OK


def cmd_eval(args) -> int:
    sp = ds_mod.load_split(_require(_data_dir(args), "data"))
    ckpt = _require(Path(args.checkpoint), "checkpoint")
    try:
        disc, _, _ = load_checkpoint(ckpt, {"N": sp.train.num_contexts, "M": sp.train.num_items})
    except (ChecksumError, ShapeMismatchError) as exc:
        raise UsageError(str(exc)) from None
    rep = evaluate(disc, sp, args.k, mask_train=not args.no_mask_train, target=args.target,
                   threads=args.threads)
    if args.report:
        rep.write(args.report, include_per_context=args.per_context)
    print(f"NDCG@{args.k} {rep.mean_ndcg:.6f} over {rep.num_evaluated} contexts")
    return EXIT_OK


def _time_per_draw(fn, n: int, repeats: int) -> float:
    fn()  # warm up
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best / n * 1e9


def bench_sampler(sizes, K: int = 32, dim: int = 32, draws: int = 200_000, naive_draws: int = 200,
                  num_contexts: int = 1000, seed: int = 0, repeats: int = 3) -> list[dict]:
    """Per-draw nanoseconds of two-step alias draws vs. a naive full-softmax sampler."""
    from .generator import GeneratorParams, rebuild_tables, sample_items

    rng = np.random.default_rng(seed)
    rows = []
    for M in sizes:
        gen = GeneratorParams.init(num_contexts, M, K, rng)
        tables = rebuild_tables(gen)
        ctx = rng.integers(num_contexts, size=draws)
        alias_ns = _time_per_draw(lambda: sample_items(gen, tables, ctx, None, rng), draws, repeats)

        U = rng.normal(0, 0.1, (num_contexts, dim))
        V = rng.normal(0, 0.1, (M, dim))
        nctx = rng.integers(num_contexts, size=naive_draws)

        def naive():
            for c in nctx:
                s = V @ U[c]
                p = np.exp(s - s.max())
                cdf = np.cumsum(p)
                np.searchsorted(cdf, rng.random() * cdf[-1], side="right")

        naive_ns = _time_per_draw(naive, naive_draws, repeats)
        rows.append({"M": int(M), "alias_ns": alias_ns, "naive_ns": naive_ns})
    return rows


def cmd_bench_sampler(args) -> int:
    sizes = [int(float(s)) for s in args.sizes.split(",") if s.strip()]
    rows = bench_sampler(sizes, args.K, args.dim, args.draws, args.naive_draws, seed=args.seed)
    lines = ["M\talias_ns_per_draw\tnaive_ns_per_draw"]
    lines += [f"{r['M']}\t{r['alias_ns']:.1f}\t{r['naive_ns']:.1f}" for r in rows]
    print("\n".join(lines))
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _parse_grid(specs) -> dict[str, list]:
    grid = {}
    known = set(TrainConfig.field_names())
    for spec in specs or []:
        key, sep, values = spec.partition("=")
        key = key.strip()
        if not sep or key not in known:
            raise UsageError(f"bad grid spec {spec!r}; use name=v1,v2,...")
        grid[key] = [_coerce(key, v) for v in values.split(",") if v.strip()]
    return grid


def cmd_sweep(args) -> int:
    base = build_config(args)
    grid = _parse_grid(args.grid)
    sp = ds_mod.load_split(_require(_data_dir(args), "data"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    keys = list(grid)
    with open(out, "w", encoding="utf-8") as fh:
        for combo in itertools.product(*(grid[k] for k in keys)):
            cfg = TrainConfig(**{**base.to_dict(), **dict(zip(keys, combo))}).validate()
            disc, _, tlog = train(cfg, sp, threads=args.threads)
            valid = max((r["valid_ndcg"] or 0.0) for r in tlog.records) if tlog.records else None
            test = evaluate(disc, sp, cfg.eval_k, threads=args.threads).mean_ndcg
            rec = {**dict(zip(keys, combo)), "best_epoch": tlog.best_epoch, "valid_ndcg": valid,
                   "test_ndcg": test}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
            print(json.dumps(rec, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdgar", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="filter an interaction file and write train/valid/test splits")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--format", choices=("pairs", "user-lists"), default="pairs")
    p.add_argument("--rating-threshold", type=float, default=None)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--valid-frac", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a discriminator with the chosen negative sampler")
    p.add_argument("--data", help="split directory (default $SDGAR_DATA_DIR)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--log", help="TrainLog path (default OUT_DIR/train_log.jsonl)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--eval-test", action="store_true", help="report test NDCG after training")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with NDCG@k")
    p.add_argument("--data", help="split directory (default $SDGAR_DATA_DIR)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--target", choices=("test", "validation"), default="test")
    p.add_argument("--no-mask-train", action="store_true")
    p.add_argument("--report")
    p.add_argument("--per-context", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-sampler", help="alias vs naive softmax per-draw timing")
    p.add_argument("--sizes", default="1000,10000,100000")
    p.add_argument("--K", type=int, default=32)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--draws", type=int, default=200_000)
    p.add_argument("--naive-draws", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench_sampler)

    p = sub.add_parser("sweep", help="grid enumeration over TrainConfig fields")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", nargs="+", help="name=v1,v2,... (repeatable)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=1)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"sdgar: config error ({exc.field}): {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, FileNotFoundError, ds_mod.DatasetConfigError) as exc:
        print(f"sdgar: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ds_mod.DatasetParseError as exc:
        print(f"sdgar: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, ValueError, RuntimeError) as exc:
        print(f"sdgar: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
