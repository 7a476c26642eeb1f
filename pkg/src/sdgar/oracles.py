"""Exhaustive O(N M K) computations on toy instances.

These are the ground truth that the sampled estimators and the training loss
are checked against; none of them draws a sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import InteractionDataset
from .discriminator import DiscriminatorParams, score_all, softplus
from .generator import GeneratorEstimates, GeneratorParams


class DegenerateProposalError(ValueError):
    pass


@dataclass
class OracleInstance:
    disc: DiscriminatorParams
    gen: GeneratorParams
    T: float
    dataset: InteractionDataset

    @classmethod
    def random(cls, rng: np.random.Generator, N: int = 8, M: int = 20, K: int = 4, dim: int = 4,
               T: float = 1.0, scale: float = 1.0, max_pos: int = 4) -> OracleInstance:
        if N > 16 or M > 64:
            raise ValueError("oracle instances are limited to N <= 16, M <= 64")
        disc = DiscriminatorParams(rng.normal(0, scale, (N, dim)), rng.normal(0, scale, (M, dim)),
                                   rng.normal(0, 0.5 * scale, M))
        gen = GeneratorParams.init(N, M, K, rng)
        lists = [rng.choice(M, size=rng.integers(1, min(max_pos, M) + 1), replace=False) for _ in range(N)]
        return cls(disc, gen, T, InteractionDataset.from_lists(lists, num_items=M))


def f_matrix(disc: DiscriminatorParams) -> np.ndarray:
    """``f_c(i) = softplus(g(c, i))`` for every pair, ``N x M``."""
    return softplus(score_all(disc, np.arange(disc.num_contexts)))


def exact_hard_optimum(disc: DiscriminatorParams, c: int) -> int:
    g = score_all(disc, [c])[0]
    return int(np.argmax(g))  # first maximum wins ties


def exact_soft_optimum(disc: DiscriminatorParams, c: int, T: float) -> np.ndarray:
    if not T > 0:
        raise ValueError("T must be positive")
    f = softplus(score_all(disc, [c])[0])
    a = f / T
    e = np.exp(a - a.max())
    return e / e.sum()


def soft_optimum_matrix(disc: DiscriminatorParams, T: float) -> np.ndarray:
    a = f_matrix(disc) / T
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def exact_objective(disc: DiscriminatorParams, gen_dist, dataset: InteractionDataset) -> float:
    """Adversarial objective with the empirical positive distribution.

    ``gen_dist`` is an ``N x M`` array of per-context negative distributions.
    """
    gen_dist = np.asarray(gen_dist, dtype=np.float64)
    total = 0.0
    for c, pos in enumerate(dataset.positives):
        g = score_all(disc, [c])[0]
        if pos.size:
            total += float(np.mean(softplus(-g[pos])))
        total += float(np.dot(gen_dist[c], softplus(g)))
    return total


def exact_mu(disc: DiscriminatorParams, T: float) -> np.ndarray:
    return np.sum(soft_optimum_matrix(disc, T) * f_matrix(disc), axis=1)


def exact_variance(disc: DiscriminatorParams, proposal, dataset: InteractionDataset | None,
                   T: float, sample_sizes) -> float:
    """Delta-method variance of the sampled loss for proposal ``Q`` (``N x M``).

    Returns ``inf`` when ``Q`` vanishes where the integrand does not.
    """
    if isinstance(proposal, GeneratorParams):
        proposal = proposal.item_distribution()
    q = np.asarray(proposal, dtype=np.float64)
    p = soft_optimum_matrix(disc, T)
    f = f_matrix(disc)
    mu = np.sum(p * f, axis=1, keepdims=True)
    num = (p * (f - mu)) ** 2
    sizes = np.broadcast_to(np.asarray(sample_sizes, dtype=np.float64), (q.shape[0],))
    if np.any((q <= 0) & (num > 0)):
        return float("inf")
    per_ctx = np.sum(np.divide(num, q, out=np.zeros_like(num), where=q > 0), axis=1)
    return float(np.sum(per_ctx / sizes))


def variance_lower_bound(disc: DiscriminatorParams, T: float, sample_sizes) -> float:
    p = soft_optimum_matrix(disc, T)
    f = f_matrix(disc)
    mu = np.sum(p * f, axis=1, keepdims=True)
    e_abs = np.sum(p * np.abs(f - mu), axis=1)
    sizes = np.broadcast_to(np.asarray(sample_sizes, dtype=np.float64), e_abs.shape)
    return float(np.sum(e_abs ** 2 / sizes))


def optimal_proposal(disc: DiscriminatorParams, c: int, T: float) -> np.ndarray:
    p = exact_soft_optimum(disc, c, T)
    f = softplus(score_all(disc, [c])[0])
    num = p * np.abs(f - np.dot(p, f))
    tot = num.sum()
    if not tot > 0:
        raise DegenerateProposalError(f"context {c}: f is constant, no optimal proposal")
    return num / tot


def proposal_from_parts(p: np.ndarray, dev: np.ndarray) -> np.ndarray:
    """Normalize ``p * |dev|``; exposed for hand-computed checks."""
    num = np.asarray(p) * np.abs(np.asarray(dev))
    if not num.sum() > 0:
        raise DegenerateProposalError("all-zero numerator")
    return num / num.sum()


def exact_mu_b_d(disc: DiscriminatorParams, gen: GeneratorParams, dataset: InteractionDataset | None,
                 T: float) -> GeneratorEstimates:
    """Exact ``mu_c``, ``b_c``, ``log Z_c`` and ``d_{k,i}`` by full sums."""
    f = f_matrix(disc)
    a = f / T
    amax = a.max(axis=1, keepdims=True)
    log_z = (amax + np.log(np.exp(a - amax).sum(axis=1, keepdims=True)))[:, 0]
    p = np.exp(a - log_z[:, None])
    mu = np.sum(p * f, axis=1)
    h = p * np.abs(f - mu[:, None])  # N x M
    b = h @ gen.Y  # N x K
    d = gen.X.T @ h  # K x M
    return GeneratorEstimates(mu, b, log_z, d)


def simplex_objective(x: np.ndarray, b: np.ndarray, lam: float) -> float:
    """``x.b + lam * H(x)``, the per-row objective maximized by ``softmax(b/lam)``."""
    x = np.asarray(x, dtype=np.float64)
    nz = x > 0
    return float(np.dot(x, b) - lam * np.sum(x[nz] * np.log(x[nz])))
