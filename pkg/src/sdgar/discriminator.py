"""Matrix-factorization discriminator and its importance-weighted logistic loss.

The score is ``g(c, i) = <u_c, v_i> + b_i`` and ``D(i|c) = sigmoid(g)``. With
``f_c(i) = softplus(g(c, i))`` the per-context loss is::

    mean_{i in I_c} softplus(-g(c, i)) + sum_{j in S_c} w_cj softplus(g(c, j))

where the weights are a softmax of ``f/T - log Q(j|c)`` within the sample.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_SOFTPLUS_CUT = 30.0


def softplus(g):
    """``log(1 + exp(g))`` without overflow or negative underflow."""
    g = np.asarray(g, dtype=np.float64)
    mid = np.clip(g, -_SOFTPLUS_CUT, _SOFTPLUS_CUT)
    tail = np.exp(np.minimum(g, 0.0))
    out = np.where(g > _SOFTPLUS_CUT, g, np.where(g < -_SOFTPLUS_CUT, tail, np.log1p(np.exp(mid))))
    return out if out.ndim else float(out)


def sigmoid(g):
    g = np.asarray(g, dtype=np.float64)
    out = np.empty_like(g)
    pos = g >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-g[pos]))
    e = np.exp(g[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


@dataclass
class DiscriminatorParams:
    context_emb: np.ndarray
    item_emb: np.ndarray
    item_bias: np.ndarray

    def __post_init__(self):
        n, d = self.context_emb.shape
        m, d2 = self.item_emb.shape
        if d != d2 or self.item_bias.shape != (m,):
            raise ValueError(f"inconsistent shapes: context {self.context_emb.shape}, "
                             f"item {self.item_emb.shape}, bias {self.item_bias.shape}")

    @property
    def dim(self) -> int:
        return self.context_emb.shape[1]

    @property
    def num_contexts(self) -> int:
        return self.context_emb.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_emb.shape[0]

    @classmethod
    def init(cls, num_contexts: int, num_items: int, dim: int, rng: np.random.Generator,
             scale: float = 0.01) -> DiscriminatorParams:
        return cls(rng.uniform(-scale, scale, (num_contexts, dim)),
                   rng.uniform(-scale, scale, (num_items, dim)),
                   np.zeros(num_items))

    def copy(self) -> DiscriminatorParams:
        return DiscriminatorParams(self.context_emb.copy(), self.item_emb.copy(), self.item_bias.copy())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.context_emb, self.item_emb, self.item_bias))


def score(params: DiscriminatorParams, c, i):
    """``g(c, i)``; ``c`` and ``i`` broadcast elementwise."""
    c = np.asarray(c)
    i = np.asarray(i)
    g = np.einsum("...d,...d->...", params.context_emb[c], params.item_emb[i]) + params.item_bias[i]
    return g if np.ndim(g) else float(g)


def score_all(params: DiscriminatorParams, contexts) -> np.ndarray:
    """Dense ``len(contexts) x M`` score block."""
    return params.context_emb[contexts] @ params.item_emb.T + params.item_bias


def softplus_f(params: DiscriminatorParams, c, i):
    return softplus(score(params, c, i))


@dataclass
class WeightedNegatives:
    context: int
    items: np.ndarray
    log_proposal: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if not (len(self.items) == len(self.log_proposal) == len(self.weights)):
            raise ValueError("items, log_proposal and weights must have equal length")


def normalized_log_weights(values: np.ndarray) -> np.ndarray:
    """Max-shifted softmax of a 1-D array."""
    v = np.asarray(values, dtype=np.float64)
    e = np.exp(v - v.max())
    return e / e.sum()


def importance_weights(params: DiscriminatorParams, c: int, items, log_proposal, T: float) -> WeightedNegatives:
    items = np.asarray(items, dtype=np.int64)
    log_proposal = np.asarray(log_proposal, dtype=np.float64)
    if items.size == 0:
        raise ValueError("importance weights need at least one sampled item")
    if items.shape != log_proposal.shape:
        raise ValueError("items and log_proposal must have the same length")
    if not T > 0:
        raise ValueError("T must be positive")
    f = softplus(score(params, np.full(items.shape, c), items))
    w = normalized_log_weights(np.atleast_1d(f) / T - log_proposal)
    return WeightedNegatives(int(c), items, log_proposal, w)


def loss_contribution(params: DiscriminatorParams, c: int, positives, negatives: WeightedNegatives) -> float:
    positives = np.asarray(positives, dtype=np.int64)
    if positives.size == 0:
        raise ValueError("context needs at least one positive")
    g_pos = np.atleast_1d(score(params, np.full(positives.shape, c), positives))
    loss = float(np.mean(softplus(-g_pos)))
    if len(negatives.items):
        g_neg = np.atleast_1d(score(params, np.full(negatives.items.shape, c), negatives.items))
        loss += float(np.dot(negatives.weights, softplus(g_neg)))
    return loss


# ---------------------------------------------------------------------------
# batched training path


@dataclass
class Batch:
    """Flattened positives and weighted negatives for a group of contexts.

    Negatives are laid out contiguously per context; ``neg_starts`` are the
    segment offsets (one per context in ``contexts``, each segment non-empty
    unless there are no negatives at all).
    """

    contexts: np.ndarray
    pos_ctx: np.ndarray
    pos_item: np.ndarray
    pos_scale: np.ndarray
    neg_ctx: np.ndarray
    neg_item: np.ndarray
    neg_weight: np.ndarray
    neg_log_proposal: np.ndarray | None = None
    neg_starts: np.ndarray | None = None

    @classmethod
    def from_contexts(cls, contexts, positives, negatives: list[WeightedNegatives]) -> Batch:
        contexts = np.asarray(contexts, dtype=np.int64)
        pos_ctx, pos_item, pos_scale = [], [], []
        for c, pos in zip(contexts, positives):
            pos = np.asarray(pos, dtype=np.int64)
            pos_ctx.append(np.full(pos.size, c))
            pos_item.append(pos)
            pos_scale.append(np.full(pos.size, 1.0 / pos.size))
        sizes = np.array([len(n.items) for n in negatives], dtype=np.int64)
        return cls(
            contexts,
            np.concatenate(pos_ctx), np.concatenate(pos_item), np.concatenate(pos_scale),
            np.repeat(contexts, sizes),
            np.concatenate([n.items for n in negatives]).astype(np.int64),
            np.concatenate([n.weights for n in negatives]),
            np.concatenate([n.log_proposal for n in negatives]),
            np.concatenate([[0], np.cumsum(sizes)[:-1]]),
        )


def batch_loss(params: DiscriminatorParams, batch: Batch) -> float:
    """Sum of per-context losses (weights taken from the batch)."""
    g_pos = score(params, batch.pos_ctx, batch.pos_item)
    g_neg = score(params, batch.neg_ctx, batch.neg_item)
    return float(np.dot(batch.pos_scale, softplus(-np.asarray(g_pos)))
                 + np.dot(batch.neg_weight, softplus(np.asarray(g_neg))))


def segment_softmax(values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    """Softmax within each contiguous segment beginning at ``starts``."""
    seg = np.repeat(np.arange(len(starts)), np.diff(np.append(starts, len(values))))
    m = np.maximum.reduceat(values, starts)
    e = np.exp(values - m[seg])
    return e / np.add.reduceat(e, starts)[seg]


def _weights_from_scores(g_neg, batch: Batch, T: float) -> np.ndarray:
    return segment_softmax(softplus(g_neg) / T - batch.neg_log_proposal, batch.neg_starts)


def batch_loss_recomputed(params: DiscriminatorParams, batch: Batch, T: float) -> float:
    """Batch loss with the importance weights recomputed from ``params``."""
    g_pos = np.asarray(score(params, batch.pos_ctx, batch.pos_item))
    g_neg = np.asarray(score(params, batch.neg_ctx, batch.neg_item))
    w = _weights_from_scores(g_neg, batch, T)
    return float(np.dot(batch.pos_scale, softplus(-g_pos)) + np.dot(w, softplus(g_neg)))


@dataclass
class SparseGrad:
    """Row-sparse gradient: unique touched rows and their gradient values."""

    context_rows: np.ndarray
    context_grad: np.ndarray
    item_rows: np.ndarray
    item_grad: np.ndarray
    bias_grad: np.ndarray


def _accumulate(rows: np.ndarray, values: np.ndarray):
    """Sum ``values`` over duplicate ``rows``; returns sorted unique rows and sums."""
    order = np.argsort(rows, kind="stable")
    r = rows[order]
    starts = np.flatnonzero(np.concatenate(([True], r[1:] != r[:-1])))
    return r[starts], np.add.reduceat(values[order], starts, axis=0)


def batch_gradient(params: DiscriminatorParams, batch: Batch, l2_coeff: float = 0.0,
                   stop_gradient_through_weights: bool = True, T: float | None = None,
                   check_finite: bool = True) -> SparseGrad:
    """Analytic gradient of ``batch_loss + l2 * ||touched rows||^2``.

    With ``stop_gradient_through_weights=False`` the weights are recomputed
    as a softmax of ``f/T - log_proposal`` and differentiated through, which
    needs ``T`` and the batch's log proposals.
    """
    g_pos = np.asarray(score(params, batch.pos_ctx, batch.pos_item))
    g_neg = np.asarray(score(params, batch.neg_ctx, batch.neg_item))
    # d softplus(-g)/dg = -sigmoid(-g)
    s_pos = -batch.pos_scale * sigmoid(-g_pos)
    sig_neg = sigmoid(g_neg)
    if stop_gradient_through_weights:
        s_neg = batch.neg_weight * sig_neg
    else:
        if T is None or batch.neg_log_proposal is None or batch.neg_starts is None:
            raise ValueError("differentiating through weights needs T, log proposals and segments")
        f = softplus(g_neg)
        w = _weights_from_scores(g_neg, batch, T)
        seg = np.repeat(np.arange(len(batch.neg_starts)),
                        np.diff(np.append(batch.neg_starts, len(f))))
        mean_f = np.add.reduceat(w * f, batch.neg_starts)
        s_neg = (w + w * (f - mean_f[seg]) / T) * sig_neg

    ctx = np.concatenate([batch.pos_ctx, batch.neg_ctx])
    items = np.concatenate([batch.pos_item, batch.neg_item])
    s = np.concatenate([s_pos, s_neg])
    if check_finite and not np.all(np.isfinite(s)):
        bad = int(ctx[np.flatnonzero(~np.isfinite(s))[0]])
        raise FloatingPointError(f"non-finite gradient for context {bad}")

    u = params.context_emb[ctx]
    v = params.item_emb[items]
    c_rows, c_grad = _accumulate(ctx, s[:, None] * v)
    i_rows, i_grad = _accumulate(items, s[:, None] * u)
    _, b_grad = _accumulate(items, s)
    if l2_coeff:
        c_grad += 2.0 * l2_coeff * params.context_emb[c_rows]
        i_grad += 2.0 * l2_coeff * params.item_emb[i_rows]
        b_grad += 2.0 * l2_coeff * params.item_bias[i_rows]
    return SparseGrad(c_rows, c_grad, i_rows, i_grad, b_grad)


def l2_penalty(params: DiscriminatorParams, batch: Batch, l2_coeff: float) -> float:
    c_rows = np.unique(np.concatenate([batch.pos_ctx, batch.neg_ctx]))
    i_rows = np.unique(np.concatenate([batch.pos_item, batch.neg_item]))
    return l2_coeff * float(np.sum(params.context_emb[c_rows] ** 2)
                            + np.sum(params.item_emb[i_rows] ** 2)
                            + np.sum(params.item_bias[i_rows] ** 2))


@dataclass
class OptimizerState:
    """Lazy Adam state: moments are touched only on rows present in a batch."""

    first_moment: DiscriminatorParams
    second_moment: DiscriminatorParams
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_coeff: float = 0.03

    @classmethod
    def for_params(cls, params: DiscriminatorParams, **kwargs) -> OptimizerState:
        def zeros():
            return DiscriminatorParams(np.zeros_like(params.context_emb), np.zeros_like(params.item_emb),
                                       np.zeros_like(params.item_bias))
        return cls(zeros(), zeros(), **kwargs)


@njit(cache=True)
def _adam_kernel(param, m, v, rows, grad, lr, beta1, beta2, eps, c1, c2):
    # param, m, v, grad are 2-D; rows are unique
    for n in range(rows.size):
        r = rows[n]
        for j in range(param.shape[1]):
            g = grad[n, j]
            mj = beta1 * m[r, j] + (1.0 - beta1) * g
            vj = beta2 * v[r, j] + (1.0 - beta2) * g * g
            m[r, j] = mj
            v[r, j] = vj
            param[r, j] -= lr * (mj / c1) / (np.sqrt(vj / c2) + eps)


def _adam_rows(param, m, v, rows, grad, opt: OptimizerState, c1, c2):
    if param.ndim == 1:
        param, m, v, grad = param[:, None], m[:, None], v[:, None], grad[:, None]
    _adam_kernel(param, m, v, rows, grad, opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon, c1, c2)


def apply_gradient(params: DiscriminatorParams, opt: OptimizerState, grad: SparseGrad) -> None:
    opt.step += 1
    c1 = 1.0 - opt.beta1 ** opt.step
    c2 = 1.0 - opt.beta2 ** opt.step
    m, v = opt.first_moment, opt.second_moment
    _adam_rows(params.context_emb, m.context_emb, v.context_emb, grad.context_rows, grad.context_grad, opt, c1, c2)
    _adam_rows(params.item_emb, m.item_emb, v.item_emb, grad.item_rows, grad.item_grad, opt, c1, c2)
    _adam_rows(params.item_bias, m.item_bias, v.item_bias, grad.item_rows, grad.bias_grad, opt, c1, c2)


def grad_and_step(params: DiscriminatorParams, opt: OptimizerState, batch: Batch,
                  stop_gradient_through_weights: bool = True, T: float | None = None):
    """One lazy-Adam step on ``batch``; mutates and returns ``(params, opt)``."""
    grad = batch_gradient(params, batch, opt.l2_coeff, stop_gradient_through_weights, T)
    apply_gradient(params, opt, grad)
    return params, opt
