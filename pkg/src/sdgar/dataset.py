"""Interaction data: loading, user filtering, per-context train/valid/test splits.

Files hold one interaction per line, ``context<sep>item[<sep>rating]`` where
the separator (tab or comma) is detected from the first non-empty line.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetParseError(ValueError):
    pass


class DatasetConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionDataset:
    num_contexts: int
    num_items: int
    positives: tuple[np.ndarray, ...]
    context_ids: tuple[str, ...] = ()
    item_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.positives) != self.num_contexts:
            raise ValueError("positives must have one entry per context")
        for c, pos in enumerate(self.positives):
            if pos.size and (pos[0] < 0 or pos[-1] >= self.num_items):
                raise ValueError(f"context {c}: item index out of range")
            if pos.size > 1 and np.any(np.diff(pos) <= 0):
                raise ValueError(f"context {c}: positives must be sorted and unique")

    @property
    def num_interactions(self) -> int:
        return int(sum(p.size for p in self.positives))

    def sizes(self) -> np.ndarray:
        return np.array([p.size for p in self.positives], dtype=np.int64)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(context, item)`` arrays in context-major order."""
        sizes = self.sizes()
        ctx = np.repeat(np.arange(self.num_contexts), sizes)
        items = np.concatenate(self.positives) if self.positives else np.empty(0, np.int64)
        return ctx, items.astype(np.int64)

    @classmethod
    def from_lists(cls, lists, num_items: int | None = None, context_ids=(), item_ids=()):
        positives = tuple(np.unique(np.asarray(l, dtype=np.int64)) for l in lists)
        if num_items is None:
            num_items = max((int(p[-1]) + 1 for p in positives if p.size), default=0)
        return cls(len(positives), num_items, positives, tuple(context_ids), tuple(item_ids))


@dataclass(frozen=True)
class DatasetSplit:
    train: InteractionDataset
    validation: InteractionDataset
    test: InteractionDataset
    seed: int
    train_frac: float = 0.8
    valid_frac: float = 0.1
    meta: dict = field(default_factory=dict)


def _detect_sep(line: str) -> str:
    return "\t" if "\t" in line else ","


def load_interactions(path, rating_threshold: float | None = None) -> InteractionDataset:
    """Read an interaction file and densely re-index its identifiers.

    With ``rating_threshold`` set, only records rated strictly above it are
    kept.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    ctx_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    lists: list[set[int]] = []
    sep = None
    saw_rating = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if sep is None:
                sep = _detect_sep(line)
            fields = [f.strip() for f in line.split(sep)]
            if len(fields) not in (2, 3) or not fields[0] or not fields[1]:
                raise DatasetParseError(f"line {lineno}: expected 2 or 3 fields, got {len(fields)}")
            has_rating = len(fields) == 3
            if saw_rating is None:
                saw_rating = has_rating
                if rating_threshold is not None and not has_rating:
                    raise DatasetConfigError("rating threshold given but the file has no rating column")
            elif has_rating != saw_rating:
                raise DatasetParseError(f"line {lineno}: inconsistent number of fields")
            if has_rating:
                try:
                    rating = float(fields[2])
                except ValueError:
                    raise DatasetParseError(f"line {lineno}: rating {fields[2]!r} is not a number") from None
                if rating_threshold is not None and not rating > rating_threshold:
                    continue
            c = ctx_index.setdefault(fields[0], len(ctx_index))
            i = item_index.setdefault(fields[1], len(item_index))
            if c == len(lists):
                lists.append(set())
            lists[c].add(i)
    return InteractionDataset.from_lists(
        [sorted(s) for s in lists],
        num_items=len(item_index),
        context_ids=ctx_index.keys(),
        item_ids=item_index.keys(),
    )


def load_user_lists(path) -> InteractionDataset:
    """Read the ``users.dat`` layout: per line, a count followed by item ids.

    Line ``u`` (0-based) is context ``u``; items keep their numeric ids.
    """
    lists = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                lists.append([])
                continue
            try:
                nums = [int(p) for p in parts]
            except ValueError:
                raise DatasetParseError(f"line {lineno}: non-integer token") from None
            if nums[0] != len(nums) - 1:
                raise DatasetParseError(f"line {lineno}: count {nums[0]} does not match {len(nums) - 1} items")
            lists.append(nums[1:])
    num_items = max((max(l) + 1 for l in lists if l), default=0)
    ds = InteractionDataset.from_lists(lists, num_items=num_items,
                                       context_ids=[str(u) for u in range(len(lists))],
                                       item_ids=[str(i) for i in range(num_items)])
    return _drop_empty(ds)


def _drop_empty(ds: InteractionDataset) -> InteractionDataset:
    return filter_min_interactions(ds, 1)


def filter_min_interactions(ds: InteractionDataset, min_count: int) -> InteractionDataset:
    """Drop contexts with fewer than ``min_count`` positives (one pass, items untouched)."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    keep = [c for c, p in enumerate(ds.positives) if p.size >= min_count]
    ids = tuple(ds.context_ids[c] for c in keep) if ds.context_ids else ()
    return InteractionDataset(len(keep), ds.num_items, tuple(ds.positives[c] for c in keep),
                              ids, ds.item_ids)


def split(ds: InteractionDataset, train_frac: float = 0.8, valid_frac: float = 0.1,
          seed: int = 0) -> DatasetSplit:
    """Per-context random holdout.

    ``ceil(train_frac * n)`` positives form the train pool, the rest is test;
    ``floor(valid_frac * pool)`` of the pool then moves to validation.
    """
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    if not 0 <= valid_frac < 1:
        raise ValueError("valid_frac must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    train, valid, test = [], [], []
    for pos in ds.positives:
        n = pos.size
        perm = pos[rng.permutation(n)]
        # guard against fp error in e.g. 0.8 * 10 = 8.000000000000002
        n_pool = min(n, math.ceil(round(train_frac * n, 9)))
        n_valid = math.floor(round(valid_frac * n_pool, 9))
        pool = perm[:n_pool]
        valid.append(np.sort(pool[:n_valid]))
        train.append(np.sort(pool[n_valid:]))
        test.append(np.sort(perm[n_pool:]))

    def make(lists):
        return InteractionDataset(ds.num_contexts, ds.num_items, tuple(lists), ds.context_ids, ds.item_ids)

    return DatasetSplit(make(train), make(valid), make(test), seed, train_frac, valid_frac)


def write_interactions(ds: InteractionDataset, path, sep: str = "\t") -> int:
    """Write ``ds`` in the input format using original identifiers. Returns line count."""
    cids = ds.context_ids or tuple(str(c) for c in range(ds.num_contexts))
    iids = ds.item_ids or tuple(str(i) for i in range(ds.num_items))
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for c, pos in enumerate(ds.positives):
            for i in pos:
                fh.write(f"{cids[c]}{sep}{iids[i]}\n")
                n += 1
    return n


def write_split(sp: DatasetSplit, out_dir, extra_meta: dict | None = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, part in (("train", sp.train), ("valid", sp.validation), ("test", sp.test)):
        counts[name] = write_interactions(part, out_dir / f"{name}.tsv")
    meta = {
        "seed": sp.seed,
        "train_frac": sp.train_frac,
        "valid_frac": sp.valid_frac,
        "num_contexts": sp.train.num_contexts,
        "num_items": sp.train.num_items,
        **{f"lines_{k}": v for k, v in counts.items()},
        **sp.meta,
        **(extra_meta or {}),
    }
    with open(out_dir / "split.meta", "w", encoding="utf-8") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={v}\n")
    return meta


def read_meta(path) -> dict[str, str]:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                k, _, v = line.partition("=")
                meta[k.strip()] = v.strip()
    return meta


def load_split(split_dir) -> DatasetSplit:
    """Load ``train/valid/test.tsv`` written by :func:`write_split` with a shared index."""
    split_dir = Path(split_dir)
    ctx_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    parts = {}
    for name in ("train", "valid", "test"):
        pairs = []
        path = split_dir / f"{name}.tsv"
        if not path.exists():
            raise FileNotFoundError(f"input not found: {path}")
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                fields = line.split(_detect_sep(line))
                if len(fields) < 2:
                    raise DatasetParseError(f"{path.name} line {lineno}: expected at least 2 fields")
                c = ctx_index.setdefault(fields[0], len(ctx_index))
                i = item_index.setdefault(fields[1], len(item_index))
                pairs.append((c, i))
        parts[name] = pairs
    meta_path = split_dir / "split.meta"
    meta = read_meta(meta_path) if meta_path.exists() else {}
    num_items = int(meta.get("num_items", len(item_index)))
    num_items = max(num_items, len(item_index))
    n = len(ctx_index)

    def make(pairs):
        lists = [[] for _ in range(n)]
        for c, i in pairs:
            lists[c].append(i)
        return InteractionDataset.from_lists(lists, num_items=num_items,
                                             context_ids=ctx_index.keys(), item_ids=item_index.keys())

    # item ids never seen in any part keep their slots via num_items from the meta file
    return DatasetSplit(make(parts["train"]), make(parts["valid"]), make(parts["test"]),
                        seed=int(meta.get("seed", 0)),
                        train_frac=float(meta.get("train_frac", 0.8)),
                        valid_frac=float(meta.get("valid_frac", 0.1)),
                        meta=meta)


def default_data_dir() -> Path:
    return Path(os.environ.get("SDGAR_DATA_DIR", "data"))
