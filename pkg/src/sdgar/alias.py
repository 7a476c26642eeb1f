"""Vose alias tables for constant-time draws from fixed discrete distributions.

Two containers live here. :class:`AliasTable` wraps a single distribution.
:class:`AliasBank` stacks many equally-sized distributions (one per row) so
that a batch of draws, each from a different row, is a handful of vectorized
numpy ops; the generator keeps all of its conditional tables in banks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


class InvalidDistributionError(ValueError):
    """Raised when weights cannot be normalized into a distribution."""


@numba.njit(cache=True)
def _vose_fill(scaled, prob, alias):
    # scaled holds n * pmf and is consumed in place.
    n = scaled.shape[0]
    small = np.empty(n, dtype=np.int64)
    large = np.empty(n, dtype=np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        nl -= 1
        g = large[nl]
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small[ns] = g
            ns += 1
        else:
            large[nl] = g
            nl += 1
    # leftovers are 1 up to rounding drift
    while nl > 0:
        nl -= 1
        g = large[nl]
        prob[g] = 1.0
        alias[g] = g
    while ns > 0:
        ns -= 1
        s = small[ns]
        prob[s] = 1.0
        alias[s] = s


@numba.njit(cache=True)
def _vose_fill_rows(scaled, prob, alias):
    for r in range(scaled.shape[0]):
        _vose_fill(scaled[r], prob[r], alias[r])


def _normalize_rows(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] == 0:
        raise InvalidDistributionError("weights must be non-empty")
    if not np.all(np.isfinite(w)):
        raise InvalidDistributionError("weights contain NaN or infinite entries")
    if np.any(w < 0):
        raise InvalidDistributionError("weights contain negative entries")
    totals = w.sum(axis=1)
    bad = np.flatnonzero(totals <= 0)
    if bad.size:
        raise InvalidDistributionError(f"row {int(bad[0])} has zero total mass")
    return w / totals[:, None]


@dataclass(frozen=True)
class AliasTable:
    """Alias table over ``size`` categories.

    ``prob[s]`` is the probability of keeping slot ``s`` after a uniform slot
    pick; otherwise ``alias[s]`` is returned.
    """

    size: int
    prob: np.ndarray
    alias: np.ndarray
    source_pmf: np.ndarray

    @classmethod
    def build(cls, weights) -> AliasTable:
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1:
            raise InvalidDistributionError("weights must be one-dimensional")
        pmf = _normalize_rows(w[None, :])[0]
        n = pmf.shape[0]
        prob = np.empty(n, dtype=np.float64)
        alias = np.empty(n, dtype=np.int64)
        _vose_fill(pmf * n, prob, alias)
        for arr in (prob, alias, pmf):
            arr.setflags(write=False)
        return cls(n, prob, alias, pmf)

    def draw(self, rng: np.random.Generator) -> int:
        s = int(rng.integers(self.size))
        if rng.random() < self.prob[s]:
            return s
        return int(self.alias[s])

    def draw_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        slots = rng.integers(self.size, size=n)
        keep = rng.random(n) < self.prob[slots]
        return np.where(keep, slots, self.alias[slots])

    def reconstruct_pmf(self) -> np.ndarray:
        return reconstruct_pmf(self.prob, self.alias)


def reconstruct_pmf(prob: np.ndarray, alias: np.ndarray) -> np.ndarray:
    """Exact pmf implied by ``(prob, alias)``; works row-wise on 2-D input."""
    prob = np.asarray(prob, dtype=np.float64)
    alias = np.asarray(alias)
    if prob.ndim == 1:
        return reconstruct_pmf(prob[None, :], alias[None, :])[0]
    rows, n = prob.shape
    mass = prob.copy()
    flat_target = (alias + np.arange(rows)[:, None] * n).ravel()
    out = mass.ravel()
    np.add.at(out, flat_target, (1.0 - prob).ravel())
    return out.reshape(rows, n) / n


def build(weights) -> AliasTable:
    return AliasTable.build(weights)


def draw(table: AliasTable, rng: np.random.Generator) -> int:
    return table.draw(rng)


class AliasBank:
    """A stack of alias tables with a common number of categories.

    Row ``r`` is the table built from ``weights[r]``; rows are normalized
    independently.
    """

    def __init__(self, weights):
        pmf = _normalize_rows(weights)
        rows, n = pmf.shape
        self.prob = np.empty((rows, n), dtype=np.float64)
        self.alias = np.empty((rows, n), dtype=np.int64)
        _vose_fill_rows(pmf * n, self.prob, self.alias)
        self.source_pmf = pmf
        for arr in (self.prob, self.alias, self.source_pmf):
            arr.setflags(write=False)

    @property
    def num_rows(self) -> int:
        return self.prob.shape[0]

    @property
    def size(self) -> int:
        return self.prob.shape[1]

    def __len__(self) -> int:
        return self.num_rows

    def table(self, row: int) -> AliasTable:
        return AliasTable(self.size, self.prob[row], self.alias[row], self.source_pmf[row])

    def draw(self, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One draw from each table named in ``rows``."""
        rows = np.asarray(rows, dtype=np.int64)
        slots = rng.integers(self.size, size=rows.shape)
        keep = rng.random(rows.shape) < self.prob[rows, slots]
        return np.where(keep, slots, self.alias[rows, slots])

    def reconstruct_pmf(self) -> np.ndarray:
        return reconstruct_pmf(self.prob, self.alias)
