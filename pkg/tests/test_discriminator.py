import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdgar import discriminator as D


def _params(rng, N=3, M=6, d=2, scale=1.0):
    return D.DiscriminatorParams(rng.normal(0, scale, (N, d)), rng.normal(0, scale, (M, d)),
                                 rng.normal(0, scale, M))


# independent scalar re-implementation used as oracle
def naive_g(p, c, i):
    return sum(float(p.context_emb[c, k]) * float(p.item_emb[i, k]) for k in range(p.dim)) + float(p.item_bias[i])


def naive_log_sigmoid(x):
    return -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))


def naive_loss(p, c, positives, items, weights):
    pos = -sum(naive_log_sigmoid(naive_g(p, c, i)) for i in positives) / len(positives)
    neg = -sum(w * naive_log_sigmoid(-naive_g(p, c, j)) for j, w in zip(items, weights))
    return pos + neg


def test_score_zero():
    p = D.DiscriminatorParams(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros(4))
    assert D.score(p, 1, 2) == 0.0


def test_score_arithmetic():
    p = D.DiscriminatorParams(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), np.array([0.5]))
    assert D.score(p, 0, 0) == pytest.approx(11.5, abs=1e-12)


def test_score_locality(rng):
    p = _params(rng)
    before = D.score(p, 1, 2)
    p.context_emb[0] += 5
    p.item_emb[3] -= 2
    p.item_bias[4] = 9
    assert D.score(p, 1, 2) == before


def test_softplus_values():
    assert D.softplus(0.0) == pytest.approx(math.log(2), abs=1e-15)
    assert D.softplus(100.0) == pytest.approx(100.0, abs=1e-9)
    v = D.softplus(-100.0)
    assert v > 0
    assert v == pytest.approx(3.720075976020836e-44, rel=1e-12)


@given(st.lists(st.floats(-200, 200), min_size=2, max_size=30))
def test_softplus_monotone_and_positive(xs):
    xs = np.sort(np.array(xs))
    v = D.softplus(xs)
    assert np.all(v >= 0) and np.all(np.isfinite(v))
    assert np.all(np.diff(v) >= 0)


def test_softplus_f_uses_score():
    p = D.DiscriminatorParams(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), np.array([0.5]))
    assert D.softplus_f(p, 0, 0) == pytest.approx(math.log1p(math.exp(11.5)), rel=1e-14)


def test_importance_weights_uniform_symmetry():
    p = D.DiscriminatorParams(np.zeros((1, 2)), np.zeros((5, 2)), np.zeros(5))
    w = D.importance_weights(p, 0, [0, 1, 2, 3], np.full(4, -np.log(5)), T=0.7)
    np.testing.assert_allclose(w.weights, 0.25, atol=1e-15)


def test_importance_weights_two_items():
    # pick biases so f/T - log q equals {1, 2}
    T = 0.5
    targets = np.array([1.0, 2.0])
    log_q = np.array([-0.3, 0.4])
    f = (targets + log_q) * T
    bias = np.log(np.expm1(f))  # softplus^{-1}
    p = D.DiscriminatorParams(np.zeros((1, 1)), np.zeros((2, 1)), bias)
    w = D.importance_weights(p, 0, [0, 1], log_q, T)
    np.testing.assert_allclose(w.weights, [0.2689414213699951, 0.7310585786300049], atol=1e-12)


def test_importance_weights_uniform_proposal_is_softmax(rng):
    p = _params(rng, M=10)
    items = rng.integers(10, size=7)
    T = 0.8
    w = D.importance_weights(p, 1, items, np.full(7, -np.log(10)), T)
    f = np.array([math.log1p(math.exp(naive_g(p, 1, j))) for j in items])
    e = np.exp(f / T)
    np.testing.assert_allclose(w.weights, e / e.sum(), rtol=1e-12)


def test_importance_weights_empty():
    p = D.DiscriminatorParams(np.zeros((1, 1)), np.zeros((2, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        D.importance_weights(p, 0, [], [], 1.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.floats(1e-3, 1e3))
def test_weights_always_normalized(vals, T):
    vals = np.array(vals)
    bias = vals  # f = softplus(bias)
    p = D.DiscriminatorParams(np.zeros((1, 1)), np.zeros((len(vals), 1)), bias)
    lq = -np.abs(vals) / 7
    w = D.importance_weights(p, 0, np.arange(len(vals)), lq, T).weights
    assert np.all(w >= 0)
    assert abs(w.sum() - 1) < 1e-9


def test_loss_at_zero_scores():
    p = D.DiscriminatorParams(np.zeros((1, 2)), np.zeros((3, 2)), np.zeros(3))
    neg = D.WeightedNegatives(0, np.array([2]), np.array([0.0]), np.array([1.0]))
    assert D.loss_contribution(p, 0, [0], neg) == pytest.approx(2 * math.log(2), abs=1e-12)


def test_loss_perfect_separation():
    p = D.DiscriminatorParams(np.zeros((1, 1)), np.zeros((2, 1)), np.array([60.0, -60.0]))
    neg = D.WeightedNegatives(0, np.array([1, 1]), np.zeros(2), np.array([0.5, 0.5]))
    assert D.loss_contribution(p, 0, [0], neg) < 1e-25


def test_loss_matches_naive_evaluator():
    # g values {1, -1} for positives, {0.5, -0.5} for negatives via biases
    p = D.DiscriminatorParams(np.zeros((1, 1)), np.zeros((4, 1)), np.array([1.0, -1.0, 0.5, -0.5]))
    neg = D.WeightedNegatives(0, np.array([2, 3]), np.zeros(2), np.array([0.7, 0.3]))
    got = D.loss_contribution(p, 0, [0, 1], neg)
    assert got == pytest.approx(naive_loss(p, 0, [0, 1], [2, 3], [0.7, 0.3]), abs=1e-10)


@given(st.integers(0, 10_000))
@settings(max_examples=30)
def test_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    p = _params(rng, scale=3.0)
    items = rng.integers(6, size=4)
    neg = D.importance_weights(p, 0, items, np.log(rng.random(4)), 0.5)
    assert D.loss_contribution(p, 0, rng.choice(6, 2, replace=False), neg) >= 0


# ---------------------------------------------------------------------------
# gradients


def _random_batch(rng, N, M, T=0.7):
    p = _params(rng, N=N, M=M, d=rng.integers(1, 5), scale=0.8)
    contexts = np.arange(N)
    positives = [rng.choice(M, rng.integers(1, min(M, 4) + 1), replace=False) for _ in contexts]
    negs = []
    for c in contexts:
        items = rng.integers(M, size=rng.integers(1, 6))
        negs.append(D.importance_weights(p, c, items, np.log(rng.uniform(0.05, 1, items.size)), T))
    return p, D.Batch.from_contexts(contexts, positives, negs)


def _flat(p):
    return np.concatenate([p.context_emb.ravel(), p.item_emb.ravel(), p.item_bias])


def _unflat(p, x):
    n1, n2 = p.context_emb.size, p.item_emb.size
    return D.DiscriminatorParams(x[:n1].reshape(p.context_emb.shape), x[n1:n1 + n2].reshape(p.item_emb.shape),
                                 x[n1 + n2:].copy())


def _dense_grad(p, g: D.SparseGrad):
    out = D.DiscriminatorParams(np.zeros_like(p.context_emb), np.zeros_like(p.item_emb), np.zeros_like(p.item_bias))
    out.context_emb[g.context_rows] = g.context_grad
    out.item_emb[g.item_rows] = g.item_grad
    out.item_bias[g.item_rows] = g.bias_grad
    return _flat(out)


def _fd(fun, x, h=1e-5):
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def max_rel_err(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_gradient(seed, stop=True, l2=0.0):
    rng = np.random.default_rng(seed)
    T = 0.7
    p, batch = _random_batch(rng, N=rng.integers(1, 6), M=rng.integers(2, 11), T=T)
    analytic = _dense_grad(p, D.batch_gradient(p, batch, l2, stop, T))

    def loss(x):
        q = _unflat(p, x)
        base = D.batch_loss(q, batch) if stop else D.batch_loss_recomputed(q, batch, T)
        return base + D.l2_penalty(q, batch, l2)

    numeric = _fd(loss, _flat(p))
    return max_rel_err(analytic, numeric)


def test_single_positive_gradient():
    g0 = 0.3
    p = D.DiscriminatorParams(np.zeros((1, 1)), np.zeros((1, 1)), np.array([g0]))
    batch = D.Batch(np.array([0]), np.array([0]), np.array([0]), np.array([1.0]),
                    np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    grad = D.batch_gradient(p, batch)
    expected = -(1 - 1 / (1 + math.exp(-g0)))
    h = 1e-5
    fd = (math.log1p(math.exp(-(g0 + h))) - math.log1p(math.exp(-(g0 - h)))) / (2 * h)
    assert grad.bias_grad[0] == pytest.approx(expected, rel=1e-12)
    assert abs(grad.bias_grad[0] - fd) / abs(fd) < 1e-4


def test_three_context_gradient():
    assert check_gradient(3) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_gradient_random_instances(seed):
    assert check_gradient(seed) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_gradient_with_l2(seed):
    assert check_gradient(100 + seed, l2=0.03) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_gradient_through_weights(seed):
    assert check_gradient(200 + seed, stop=False) < 1e-4


def test_zero_learning_rate_keeps_params(rng):
    p, batch = _random_batch(rng, 3, 6)
    before = p.copy()
    opt = D.OptimizerState.for_params(p, learning_rate=0.0)
    D.grad_and_step(p, opt, batch)
    np.testing.assert_array_equal(p.context_emb, before.context_emb)
    np.testing.assert_array_equal(p.item_emb, before.item_emb)
    np.testing.assert_array_equal(p.item_bias, before.item_bias)
    assert opt.step == 1


def test_only_touched_rows_change(rng):
    p = _params(rng, N=5, M=10)
    before = p.copy()
    neg = D.importance_weights(p, 1, np.array([7]), np.zeros(1), 1.0)
    batch = D.Batch.from_contexts([1], [np.array([2])], [neg])
    opt = D.OptimizerState.for_params(p, learning_rate=0.01)
    D.grad_and_step(p, opt, batch)
    changed_ctx = np.flatnonzero(np.any(p.context_emb != before.context_emb, axis=1))
    changed_items = np.flatnonzero(np.any(p.item_emb != before.item_emb, axis=1))
    assert changed_ctx.tolist() == [1]
    assert changed_items.tolist() == [2, 7]
    assert np.flatnonzero(p.item_bias != before.item_bias).tolist() == [2, 7]


def test_adam_first_step_magnitude():
    # with bias correction the first step moves each touched coordinate by ~lr
    p = D.DiscriminatorParams(np.array([[0.5]]), np.array([[0.5]]), np.array([0.0]))
    batch = D.Batch(np.array([0]), np.array([0]), np.array([0]), np.array([1.0]),
                    np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    opt = D.OptimizerState.for_params(p, learning_rate=0.001, l2_coeff=0.0)
    D.grad_and_step(p, opt, batch)
    assert p.item_bias[0] == pytest.approx(0.001, rel=1e-4)
    assert p.context_emb[0, 0] == pytest.approx(0.501, rel=1e-4)


def test_non_finite_gradient_names_context():
    p = D.DiscriminatorParams(np.array([[np.nan], [0.0]]), np.zeros((2, 1)), np.zeros(2))
    batch = D.Batch(np.array([0]), np.array([0]), np.array([1]), np.array([1.0]),
                    np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    with pytest.raises(FloatingPointError, match="context 0"):
        D.batch_gradient(p, batch)


def test_batch_loss_equals_sum_of_contributions(rng):
    p = _params(rng, N=4, M=8)
    positives = [rng.choice(8, 2, replace=False) for _ in range(4)]
    negs = [D.importance_weights(p, c, rng.integers(8, size=3), np.zeros(3), 1.0) for c in range(4)]
    batch = D.Batch.from_contexts(np.arange(4), positives, negs)
    total = sum(D.loss_contribution(p, c, positives[c], negs[c]) for c in range(4))
    assert D.batch_loss(p, batch) == pytest.approx(total, rel=1e-12)


def _uniform_sample_loss(p, positives, items, T):
    total = 0.0
    for c, (pos, it) in enumerate(zip(positives, items)):
        w = D.importance_weights(p, c, it, np.full(it.size, -np.log(p.num_items)), T)
        total += D.loss_contribution(p, c, pos, w)
    return total


@pytest.mark.parametrize("seed", range(10))
def test_loss_decreasing_in_temperature(seed):
    rng = np.random.default_rng(seed)
    p = _params(rng, N=4, M=12, d=3)
    positives = [rng.choice(12, 2, replace=False) for _ in range(4)]
    items = [rng.integers(12, size=6) for _ in range(4)]
    vals = [_uniform_sample_loss(p, positives, items, T) for T in (0.1, 0.5, 1.0, 10.0)]
    assert vals[0] > vals[1] > vals[2] > vals[3]


def test_loss_constant_in_temperature_when_f_equal():
    p = D.DiscriminatorParams(np.zeros((1, 2)), np.zeros((5, 2)), np.full(5, 0.3))
    items = [np.array([0, 1, 2])]
    vals = [_uniform_sample_loss(p, [np.array([4])], items, T) for T in (0.1, 1.0, 10.0)]
    assert max(vals) - min(vals) < 1e-14
