"""Sampling-decomposable generator ``Q(i|c) = sum_k X[c, k] Y[i, k]``.

Rows of ``X`` live on the K-simplex and columns of ``Y`` on the M-simplex, so
``Q(.|c) = Y @ X[c]`` is normalized by construction. Sampling goes through a
latent state: ``k ~ X[c]`` then ``i ~ Y[:, k]``, two alias lookups per item.
The reverse direction ``Q(c|i) = sum_k P(k|i) P(c|k)`` is used to draw
contexts for an item during the ``Y`` update.

Both factors are refit by closed-form softmax updates whose inputs are
importance-sampled estimates against the tempered discriminator target
``P*(i|c) ~ exp(f_c(i) / T)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alias import AliasBank
from .discriminator import DiscriminatorParams, normalized_log_weights, score, softplus

PROB_FLOOR = 1e-12


class InvalidGeneratorState(ValueError):
    pass


@dataclass
class GeneratorParams:
    X: np.ndarray  # N x K, rows sum to 1
    Y: np.ndarray  # M x K, columns sum to 1

    def __post_init__(self):
        if self.X.shape[1] != self.Y.shape[1]:
            raise ValueError(f"X has {self.X.shape[1]} states but Y has {self.Y.shape[1]}")

    @property
    def K(self) -> int:
        return self.X.shape[1]

    @property
    def num_contexts(self) -> int:
        return self.X.shape[0]

    @property
    def num_items(self) -> int:
        return self.Y.shape[0]

    @classmethod
    def init(cls, num_contexts: int, num_items: int, K: int, rng: np.random.Generator) -> GeneratorParams:
        X = rng.uniform(0.0, 1.0, (num_contexts, K))
        Y = rng.uniform(0.0, 1.0, (num_items, K))
        return cls(X / X.sum(axis=1, keepdims=True), Y / Y.sum(axis=0, keepdims=True))

    @classmethod
    def uniform(cls, num_contexts: int, num_items: int, K: int = 1) -> GeneratorParams:
        return cls(np.full((num_contexts, K), 1.0 / K), np.full((num_items, K), 1.0 / num_items))

    def copy(self) -> GeneratorParams:
        return GeneratorParams(self.X.copy(), self.Y.copy())

    def check(self, atol: float = 1e-9) -> None:
        if np.any(self.X < 0) or np.any(self.Y < 0):
            raise InvalidGeneratorState("negative generator entries")
        if not np.allclose(self.X.sum(axis=1), 1.0, atol=atol, rtol=0):
            raise InvalidGeneratorState("rows of X are not on the simplex")
        if not np.allclose(self.Y.sum(axis=0), 1.0, atol=atol, rtol=0):
            raise InvalidGeneratorState("columns of Y are not on the simplex")

    def item_distribution(self) -> np.ndarray:
        """Dense ``N x M`` matrix of ``Q(i|c)``; small instances only."""
        return self.X @ self.Y.T


@dataclass
class GeneratorTables:
    item_given_state: AliasBank  # K rows over M items
    state_given_context: AliasBank  # N rows over K states
    context_given_state: AliasBank  # K rows over N contexts
    state_given_item: AliasBank  # M rows over K states


def _bank(weights: np.ndarray, what: str) -> AliasBank:
    bad = np.flatnonzero(~(weights.sum(axis=1) > 0))
    if bad.size:
        raise InvalidGeneratorState(f"{what} {int(bad[0])} has zero mass")
    return AliasBank(weights)


def rebuild_tables(gen: GeneratorParams) -> GeneratorTables:
    return GeneratorTables(
        item_given_state=_bank(gen.Y.T, "state"),
        state_given_context=_bank(gen.X, "context"),
        context_given_state=_bank(gen.X.T, "state"),
        state_given_item=_bank(gen.Y, "item"),
    )


def q_item_prob(gen: GeneratorParams, c, i):
    p = np.einsum("...k,...k->...", gen.X[np.asarray(c)], gen.Y[np.asarray(i)])
    return p if np.ndim(p) else float(p)


def sample_items(gen: GeneratorParams, tables: GeneratorTables, c, n: int | None, rng) -> np.ndarray:
    """Draw items given contexts. With ``n`` set, ``n`` draws for scalar ``c``;
    otherwise one draw per entry of the context array ``c``."""
    ctx = np.full(n, c, dtype=np.int64) if n is not None else np.asarray(c, dtype=np.int64)
    states = tables.state_given_context.draw(ctx, rng)
    return tables.item_given_state.draw(states, rng)


def _state_given_item(gen: GeneratorParams, i) -> np.ndarray:
    y = gen.Y[np.asarray(i)]
    tot = y.sum(axis=-1, keepdims=True)
    if np.any(tot <= 0):
        raise InvalidGeneratorState("item with zero mass over states cannot be used to sample contexts")
    return y / tot


def q_context_prob(gen: GeneratorParams, i, c):
    p_k_i = _state_given_item(gen, i)
    p_c_k = gen.X[np.asarray(c)] / gen.X.sum(axis=0)
    p = np.einsum("...k,...k->...", p_k_i, p_c_k)
    return p if np.ndim(p) else float(p)


def sample_contexts(gen: GeneratorParams, tables: GeneratorTables, i, n: int | None, rng) -> np.ndarray:
    items = np.full(n, i, dtype=np.int64) if n is not None else np.asarray(i, dtype=np.int64)
    if np.any(gen.Y[items].sum(axis=-1) <= 0):
        raise InvalidGeneratorState("item with zero mass over states cannot be used to sample contexts")
    states = tables.state_given_item.draw(items, rng)
    return tables.context_given_state.draw(states, rng)


# ---------------------------------------------------------------------------
# single-context estimators


def _f_and_logq(disc, gen, c, sample):
    sample = np.asarray(sample, dtype=np.int64)
    if sample.size == 0:
        raise ValueError("estimators need a non-empty sample")
    ctx = np.full(sample.shape, c)
    f = np.atleast_1d(softplus(score(disc, ctx, sample)))
    logq = np.log(np.atleast_1d(q_item_prob(gen, ctx, sample)))
    return f, logq


def estimate_mu(disc: DiscriminatorParams, gen: GeneratorParams, c: int, sample, T: float) -> float:
    f, logq = _f_and_logq(disc, gen, c, sample)
    w = normalized_log_weights(f / T - logq)
    return float(np.dot(w, f))


def estimate_b(disc, gen, c: int, sample, mu_c: float, T: float) -> np.ndarray:
    f, logq = _f_and_logq(disc, gen, c, sample)
    w = normalized_log_weights(f / T - logq)
    return (w * np.abs(f - mu_c)) @ gen.Y[np.asarray(sample)]


def estimate_log_z(disc, gen, c: int, sample, T: float) -> float:
    f, logq = _f_and_logq(disc, gen, c, sample)
    a = f / T - logq
    m = a.max()
    return float(m + np.log(np.exp(a - m).sum()) - np.log(a.size))


def estimate_d(disc, gen, i: int, contexts, mu, log_z, T: float, diagnostics: dict | None = None) -> np.ndarray:
    """Unnormalized importance estimate of ``d[:, i]`` from contexts drawn from ``Q(.|i)``."""
    contexts = np.asarray(contexts, dtype=np.int64)
    if contexts.size == 0:
        raise ValueError("estimators need a non-empty sample")
    q = np.atleast_1d(q_context_prob(gen, np.full(contexts.shape, i), contexts))
    ok = q > 0
    if diagnostics is not None:
        diagnostics["skipped_zero_q"] = diagnostics.get("skipped_zero_q", 0) + int((~ok).sum())
    cs = contexts[ok]
    f = np.atleast_1d(softplus(score(disc, cs, np.full(cs.shape, i))))
    log_w = f / T - np.log(q[ok]) - np.asarray(log_z)[cs]
    contrib = np.exp(log_w) * np.abs(f - np.asarray(mu)[cs])
    return (contrib @ gen.X[cs]) / contexts.size


def _softmax_floor(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)
    # keep every state/item reachable
    p = np.maximum(p, PROB_FLOOR)
    return p / p.sum(axis=axis, keepdims=True)


def update_x(b_c, lambda_x: float) -> np.ndarray:
    if not lambda_x > 0:
        raise ValueError("lambda_x must be positive")
    return _softmax_floor(np.asarray(b_c, dtype=np.float64) / lambda_x, axis=-1)


def update_y(d_k, lambda_y: float) -> np.ndarray:
    if not lambda_y > 0:
        raise ValueError("lambda_y must be positive")
    return _softmax_floor(np.asarray(d_k, dtype=np.float64) / lambda_y, axis=-1)


# ---------------------------------------------------------------------------
# vectorized generator round


@dataclass
class GeneratorEstimates:
    mu: np.ndarray  # N
    b: np.ndarray  # N x K
    log_z: np.ndarray  # N
    d: np.ndarray  # K x M
    diagnostics: dict = field(default_factory=dict)


def _pair_f(disc: DiscriminatorParams, ctx: np.ndarray, items: np.ndarray) -> np.ndarray:
    return softplus(np.einsum("...d,...d->...", disc.context_emb[ctx], disc.item_emb[items])
                    + disc.item_bias[items])


def _rowwise_softmax(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _estimate_contexts(disc, gen, tables, contexts, n, T, rng):
    """mu, b and log Z for a block of contexts, each from its own fresh sample."""
    ctx = np.repeat(contexts[:, None], n, axis=1)

    def draw():
        items = sample_items(gen, tables, ctx, None, rng)
        f = _pair_f(disc, ctx, items)
        yi = gen.Y[items]
        logq = np.log(np.einsum("bsk,bk->bs", yi, gen.X[contexts]))
        return items, f, logq, yi

    _, f, logq, _ = draw()
    mu = np.sum(_rowwise_softmax(f / T - logq) * f, axis=1)

    _, f, logq, yi = draw()
    w = _rowwise_softmax(f / T - logq) * np.abs(f - mu[:, None])
    b = np.einsum("bs,bsk->bk", w, yi)

    _, f, logq, _ = draw()
    a = f / T - logq
    m = a.max(axis=1)
    log_z = m + np.log(np.exp(a - m[:, None]).sum(axis=1)) - np.log(n)
    return mu, b, log_z


def _estimate_mu_only(disc, gen, tables, contexts, n, T, rng):
    ctx = np.repeat(contexts[:, None], n, axis=1)
    items = sample_items(gen, tables, ctx, None, rng)
    f = _pair_f(disc, ctx, items)
    logq = np.log(np.einsum("bsk,bk->bs", gen.Y[items], gen.X[contexts]))
    return np.sum(_rowwise_softmax(f / T - logq) * f, axis=1)


def _estimate_items(disc, gen, tables, items, n, mu, log_z, T, rng, diagnostics):
    it = np.repeat(items[:, None], n, axis=1)
    states = tables.state_given_item.draw(it, rng)
    ctx = tables.context_given_state.draw(states, rng)
    p_k_i = gen.Y[items] / gen.Y[items].sum(axis=1, keepdims=True)
    p_c_k = gen.X[ctx] / gen.X.sum(axis=0)
    q = np.einsum("bk,bsk->bs", p_k_i, p_c_k)
    ok = q > 0
    skipped = int((~ok).sum())
    if skipped:
        diagnostics["skipped_zero_q"] = diagnostics.get("skipped_zero_q", 0) + skipped
    f = _pair_f(disc, ctx, it)
    log_w = f / T - np.log(np.where(ok, q, 1.0)) - log_z[ctx]
    contrib = np.where(ok, np.exp(log_w) * np.abs(f - mu[ctx]), 0.0)
    return np.einsum("bs,bsk->kb", contrib, gen.X[ctx]) / n


def generator_round(disc: DiscriminatorParams, gen: GeneratorParams, tables: GeneratorTables,
                    T: float, lambda_x: float, lambda_y: float, est_samples: int,
                    rng: np.random.Generator, chunk: int = 2048, reestimate_mu: bool = False):
    """One alternating refit of ``X`` then ``Y``.

    Returns ``(new_gen, new_tables, estimates)``; the inputs are not modified.
    """
    N, M, K = gen.num_contexts, gen.num_items, gen.K
    mu = np.empty(N)
    b = np.empty((N, K))
    log_z = np.empty(N)
    for lo in range(0, N, chunk):
        cs = np.arange(lo, min(lo + chunk, N))
        mu[cs], b[cs], log_z[cs] = _estimate_contexts(disc, gen, tables, cs, est_samples, T, rng)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(b)) and np.all(np.isfinite(log_z))):
        raise FloatingPointError("non-finite estimate in the context phase of the generator round")
    X = update_x(b, lambda_x)

    mid = GeneratorParams(X, gen.Y)
    mid_tables = GeneratorTables(
        item_given_state=tables.item_given_state,
        state_given_context=_bank(X, "context"),
        context_given_state=_bank(X.T, "state"),
        state_given_item=tables.state_given_item,
    )
    if reestimate_mu:
        for lo in range(0, N, chunk):
            cs = np.arange(lo, min(lo + chunk, N))
            mu[cs] = _estimate_mu_only(disc, mid, mid_tables, cs, est_samples, T, rng)

    diagnostics: dict = {}
    d = np.empty((K, M))
    for lo in range(0, M, chunk):
        its = np.arange(lo, min(lo + chunk, M))
        d[:, its] = _estimate_items(disc, mid, mid_tables, its, est_samples, mu, log_z, T, rng, diagnostics)
    if not np.all(np.isfinite(d)):
        k = int(np.flatnonzero(~np.all(np.isfinite(d), axis=1))[0])
        raise InvalidGeneratorState(f"degenerate generator column for state {k}")
    Y = update_y(d, lambda_y).T

    new_gen = GeneratorParams(X, np.ascontiguousarray(Y))
    new_tables = GeneratorTables(
        item_given_state=_bank(new_gen.Y.T, "state"),
        state_given_context=mid_tables.state_given_context,
        context_given_state=mid_tables.context_given_state,
        state_given_item=_bank(new_gen.Y, "item"),
    )
    return new_gen, new_tables, GeneratorEstimates(mu, b, log_z, d, diagnostics)
