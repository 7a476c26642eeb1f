"""Top-k ranking with the discriminator and binary-relevance NDCG@k."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import DatasetSplit, InteractionDataset
from .discriminator import DiscriminatorParams, score_all


@dataclass
class EvalReport:
    k: int
    per_context_ndcg: dict[int, float] = field(default_factory=dict)
    mean_ndcg: float = 0.0
    num_evaluated: int = 0

    def to_record(self, include_per_context: bool = False) -> dict:
        rec = {"k": self.k, "mean_ndcg": self.mean_ndcg, "num_evaluated": self.num_evaluated}
        if include_per_context:
            rec["per_context_ndcg"] = {str(c): v for c, v in self.per_context_ndcg.items()}
        return rec

    def write(self, path, include_per_context: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_record(include_per_context), fh, indent=2)
            fh.write("\n")


def _top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest finite scores, descending, ties to the lower index."""
    valid = np.isfinite(scores)
    n_valid = int(valid.sum())
    k = min(k, n_valid)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    s = np.where(valid, scores, -np.inf)
    part = np.argpartition(-s, k - 1)[:k]
    t = s[part].min()
    above = np.flatnonzero(s > t)
    ties = np.flatnonzero(s == t)[: k - above.size]
    cand = np.concatenate([above, ties])
    return cand[np.lexsort((cand, -s[cand]))]


def rank_items(disc: DiscriminatorParams, c: int, exclude=(), k: int = 50) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    s = score_all(disc, [c])[0]
    ex = np.fromiter(exclude, dtype=np.int64) if not isinstance(exclude, np.ndarray) else exclude
    if ex.size:
        s[ex] = -np.inf
    return _top_k(s, k)


_DISCOUNT_CACHE: dict[int, np.ndarray] = {}


def _discounts(k: int) -> np.ndarray:
    if k not in _DISCOUNT_CACHE:
        _DISCOUNT_CACHE[k] = 1.0 / np.log2(np.arange(2, k + 2))
    return _DISCOUNT_CACHE[k]


def ndcg_at_k(ranked, relevant, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(int(r) for r in relevant)
    if not relevant:
        return 0.0
    dcg = sum(1.0 / math.log2(r + 2) for r, item in enumerate(list(ranked)[:k]) if int(item) in relevant)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(k, len(relevant))))
    return dcg / idcg


def _ndcg_rows(disc, contexts, targets, excludes, k, chunk):
    out = {}
    for lo in range(0, len(contexts), chunk):
        block = contexts[lo: lo + chunk]
        S = score_all(disc, block)
        for row, c in enumerate(block):
            s = S[row]
            ex = excludes[c]
            if ex is not None and ex.size:
                s[ex] = -np.inf
            top = _top_k(s, k)
            rel = targets[c]
            hits = np.isin(top, rel)
            disc_k = _discounts(k)
            dcg = float(disc_k[: top.size][hits].sum())
            idcg = float(disc_k[: min(k, rel.size)].sum())
            out[int(c)] = dcg / idcg
    return out


def evaluate(disc: DiscriminatorParams, split: DatasetSplit, k: int = 50, mask_train: bool = True,
             target: str = "test", threads: int = 1, chunk: int = 512) -> EvalReport:
    """NDCG@k of the discriminator's ranking against held-out positives.

    ``target`` selects ``"test"`` or ``"validation"`` positives. With
    ``mask_train`` the training positives are removed from the ranking (and,
    for the test target, the validation positives too, since they are part of
    the training data).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    held: InteractionDataset = split.test if target == "test" else split.validation
    contexts = np.array([c for c, p in enumerate(held.positives) if p.size], dtype=np.int64)
    excludes: dict[int, np.ndarray | None] = {}
    for c in contexts:
        if not mask_train:
            excludes[c] = None
        elif target == "test":
            excludes[c] = np.concatenate([split.train.positives[c], split.validation.positives[c]])
        else:
            excludes[c] = split.train.positives[c]
    targets = {int(c): held.positives[c] for c in contexts}
    if threads > 1 and contexts.size > chunk:
        parts = np.array_split(contexts, threads)
        with ThreadPoolExecutor(threads) as ex:
            results = ex.map(lambda p: _ndcg_rows(disc, p, targets, excludes, k, chunk), parts)
        per = {}
        for r in results:
            per.update(r)
        per = dict(sorted(per.items()))
    else:
        per = _ndcg_rows(disc, contexts, targets, excludes, k, chunk)
    mean = float(np.mean(list(per.values()))) if per else 0.0
    return EvalReport(k, per, mean, len(per))


def random_ranking_ndcg(num_candidates: int, num_relevant: int, k: int, rng, trials: int = 100_000) -> tuple[float, float]:
    """Monte-Carlo mean and standard error of NDCG@k for a uniformly random ranking."""
    kk = min(k, num_candidates)
    disc_k = _discounts(k)[:kk]
    idcg = _discounts(k)[: min(k, num_relevant)].sum()
    vals = []
    for lo in range(0, trials, 10_000):
        n = min(10_000, trials - lo)
        perm = np.argsort(rng.random((n, num_candidates)), axis=1)[:, :kk]
        # items 0..num_relevant-1 play the relevant ones
        vals.append((perm < num_relevant) @ disc_k / idcg)
    vals = np.concatenate(vals)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(trials))
