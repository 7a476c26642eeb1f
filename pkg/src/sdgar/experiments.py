"""Shared helpers for the experiment scripts and the end-to-end acceptance run."""
from __future__ import annotations

import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .evaluator import evaluate
from .trainer import TrainConfig, train

CITEULIKE_NAMES = ("users.dat", "citeulike.tsv", "citeulike.csv", "interactions.tsv")


def find_citeulike(extra_dirs=()) -> Path | None:
    """Look for a CiteULike interaction file.

    Searched, in order: ``$SDGAR_CITEULIKE``, then ``citeulike/`` under
    ``$SDGAR_DATA_DIR`` (default ``data``) and any ``extra_dirs``.
    """
    env = os.environ.get("SDGAR_CITEULIKE")
    if env and Path(env).is_file():
        return Path(env)
    roots = [ds_mod.default_data_dir(), *map(Path, extra_dirs)]
    for root in roots:
        for name in CITEULIKE_NAMES:
            p = root / "citeulike" / name
            if p.is_file():
                return p
    return None


def load_citeulike(path: Path, min_count: int = 5, seed: int = 0) -> ds_mod.DatasetSplit:
    if path.name == "users.dat":
        data = ds_mod.load_user_lists(path)
    else:
        data = ds_mod.load_interactions(path)
    data = ds_mod.filter_min_interactions(data, min_count)
    return ds_mod.split(data, 0.8, 0.1, seed)


def compare_modes(split: ds_mod.DatasetSplit, base: TrainConfig, modes, k: int = 50,
                  threads: int = 1, log=print) -> dict[str, dict]:
    """Train each sampler mode under identical settings; report test NDCG@k."""
    out = {}
    for mode in modes:
        cfg = replace(base, sampler_mode=mode)
        t0 = time.perf_counter()
        disc, _, tlog = train(cfg, split, threads=threads)
        rep = evaluate(disc, split, k, threads=threads)
        out[mode] = {
            "test_ndcg": rep.mean_ndcg,
            "best_epoch": tlog.best_epoch,
            "best_valid_ndcg": max((r["valid_ndcg"] or 0.0 for r in tlog.records), default=None),
            "seconds": time.perf_counter() - t0,
        }
        if log is not None:
            log(f"{mode}\tNDCG@{k}={rep.mean_ndcg:.4f}\tbest_epoch={tlog.best_epoch}\t"
                f"{out[mode]['seconds']:.0f}s")
    return out


def synthetic_split(num_contexts: int, num_items: int, dim: int = 8, per_context: int = 20,
                    temperature: float = 0.5, seed: int = 0) -> ds_mod.DatasetSplit:
    """Interactions drawn from a low-rank softmax model with popularity skew."""
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(num_contexts, dim))
    V = rng.normal(size=(num_items, dim))
    pop = rng.normal(0, 1.0, num_items)
    lists = []
    for c in range(num_contexts):
        logits = (V @ U[c]) / np.sqrt(dim) / temperature + pop
        p = np.exp(logits - logits.max())
        p /= p.sum()
        lists.append(rng.choice(num_items, size=per_context, replace=False, p=p))
    data = ds_mod.InteractionDataset.from_lists(lists, num_items=num_items)
    return ds_mod.split(data, 0.8, 0.1, seed)
