"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (see the ``criterion`` fixture in
conftest); the lines are repeated in the terminal summary.
"""
import time

import numpy as np
import pytest

from sdgar import discriminator as D
from sdgar import generator as G
from sdgar import oracles as O
from sdgar.alias import AliasTable
from sdgar.cli import bench_sampler
from sdgar.experiments import compare_modes, find_citeulike, load_citeulike
from sdgar.generator import GeneratorParams, rebuild_tables
from sdgar.trainer import TrainConfig, train_epoch
from stats_helpers import passes_chi_square, sampled_loss
from test_discriminator import check_gradient

pytestmark = pytest.mark.acceptance


# 1 -------------------------------------------------------------------------

def test_criterion_1_theorems(criterion):
    t0 = time.perf_counter()
    worst_hard = worst_soft = -np.inf
    worst_eq = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        N, M = int(rng.integers(2, 9)), int(rng.integers(2, 21))
        inst = O.OracleInstance.random(rng, N=N, M=M)
        f = O.f_matrix(inst.disc)
        for c in range(N):
            alts = rng.dirichlet(np.ones(M), size=1000)
            best = f[c, O.exact_hard_optimum(inst.disc, c)]
            worst_hard = max(worst_hard, float(np.max(alts @ f[c]) - best))
            for T in (0.3, 1.0, 3.0):
                top = O.simplex_objective(O.exact_soft_optimum(inst.disc, c, T), f[c], T)
                vals = [O.simplex_objective(x, f[c], T) for x in alts]
                worst_soft = max(worst_soft, max(vals) - top)
        sizes = rng.integers(1, 100, size=N)
        q = np.vstack([O.optimal_proposal(inst.disc, c, inst.T) for c in range(N)])
        bound = O.variance_lower_bound(inst.disc, inst.T, sizes)
        worst_eq = max(worst_eq, abs(O.exact_variance(inst.disc, q, inst.dataset, inst.T, sizes) - bound))
    elapsed = time.perf_counter() - t0
    ok = worst_hard <= 1e-12 and worst_soft <= 1e-12 and worst_eq <= 1e-10 and elapsed < 60
    criterion(1, "theorems", ok, f"hard gap {worst_hard:.2e}, soft gap {worst_soft:.2e}, "
                                 f"variance bound gap {worst_eq:.1e}, {elapsed:.1f}s")
    assert ok


# 2 -------------------------------------------------------------------------

def test_criterion_2_estimator_consistency(criterion):
    t0 = time.perf_counter()
    S, seeds = 10_000, 30
    # fixed instance; embedding scale 0.5 keeps scores in the range of a trained model
    inst = O.OracleInstance.random(np.random.default_rng(1000), N=8, M=20, K=4, scale=0.5)
    N, M, K = 8, 20, 4
    ex = O.exact_mu_b_d(inst.disc, inst.gen, inst.dataset, inst.T)
    J = O.exact_objective(inst.disc, O.soft_optimum_matrix(inst.disc, inst.T), inst.dataset)
    tables = rebuild_tables(inst.gen)
    err = {k: [] for k in ("loss", "mu", "log_z", "b", "d")}
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        err["loss"].append(abs(sampled_loss(inst, S, rng) - J) / abs(J))
        mu, lz, b = np.empty(N), np.empty(N), np.empty((N, K))
        for c in range(N):
            draw = lambda: G.sample_items(inst.gen, tables, c, S, rng)  # noqa: E731
            mu[c] = G.estimate_mu(inst.disc, inst.gen, c, draw(), inst.T)
            b[c] = G.estimate_b(inst.disc, inst.gen, c, draw(), ex.mu[c], inst.T)
            lz[c] = G.estimate_log_z(inst.disc, inst.gen, c, draw(), inst.T)
        d = np.empty((K, M))
        for i in range(M):
            ctx = G.sample_contexts(inst.gen, tables, i, S, rng)
            d[:, i] = G.estimate_d(inst.disc, inst.gen, i, ctx, ex.mu, ex.log_z, inst.T)
        err["mu"].append(np.abs(mu - ex.mu) / np.abs(ex.mu))
        err["log_z"].append(np.abs(lz - ex.log_z))
        err["b"].append(np.abs(b - ex.b) / np.abs(ex.b))
        err["d"].append(np.abs(d - ex.d) / np.abs(ex.d))
    loss_med = float(np.median(err["loss"]))
    # per-coordinate error averaged over seeds, worst coordinate reported
    worst = {k: float(np.max(np.mean(np.array(err[k]), axis=0))) for k in ("mu", "log_z", "b", "d")}
    elapsed = time.perf_counter() - t0
    ok = (loss_med < 0.01 and worst["mu"] < 0.02 and worst["log_z"] < 0.02 and worst["b"] < 0.05
          and worst["d"] < 0.10 and elapsed < 120)
    criterion(2, "estimator consistency", ok,
              f"loss median rel {loss_med:.4f}, mu {worst['mu']:.4f}, log Z {worst['log_z']:.4f}, "
              f"b {worst['b']:.4f}, d {worst['d']:.4f}, {elapsed:.1f}s")
    assert ok


# 3 -------------------------------------------------------------------------

def test_criterion_3_temperature_monotonicity(criterion):
    t0 = time.perf_counter()
    temps = (0.1, 0.5, 1.0, 10.0)
    checked = violations = 0
    seed = 0
    while checked < 50:
        inst = O.OracleInstance.random(np.random.default_rng(seed))
        sample_seed = 10_000 + seed
        seed += 1
        if np.ptp(O.f_matrix(inst.disc)) == 0:
            continue
        # the same uniform sample for every temperature
        vals = [sampled_loss(inst, 20, np.random.default_rng(sample_seed), T=T, uniform=True) for T in temps]
        checked += 1
        violations += not all(a > b for a, b in zip(vals, vals[1:]))
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 10
    criterion(3, "loss decreasing in T", ok, f"{violations} of {checked} instances violate, {elapsed:.1f}s")
    assert ok


# 4 -------------------------------------------------------------------------

def test_criterion_4_gradient_check(criterion):
    t0 = time.perf_counter()
    errs = [check_gradient(seed, stop=True, l2=0.03 * (seed % 2)) for seed in range(20)]
    elapsed = time.perf_counter() - t0
    ok = max(errs) < 1e-4 and elapsed < 30
    criterion(4, "gradient check", ok, f"max rel err {max(errs):.2e} over 20 instances, {elapsed:.1f}s")
    assert ok


# 5 -------------------------------------------------------------------------

def _ns_per_draw(table, rng, n=1_000_000, repeats=5):
    table.draw_many(rng, 1000)
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        table.draw_many(rng, n)
        best = min(best, time.perf_counter() - t)
    return best / n * 1e9


def test_criterion_5_alias_sampler(criterion):
    rng = np.random.default_rng(5)
    fails = []
    for size in (2, 7, 50, 333, 1000):
        pmf = rng.dirichlet(np.full(size, 0.5))
        counts = np.bincount(AliasTable.build(pmf).draw_many(rng, 10**6), minlength=size)
        if not passes_chi_square(counts, pmf):
            fails.append(size)
    small = _ns_per_draw(AliasTable.build(rng.random(100)), rng)
    large = _ns_per_draw(AliasTable.build(rng.random(10**6)), rng)
    ratio = large / small
    ok = not fails and ratio <= 3.0
    criterion(5, "alias sampler", ok, f"chi-square failures {fails}, {small:.1f} ns vs {large:.1f} ns per draw "
                                      f"(ratio {ratio:.2f})")
    assert ok


# 6 -------------------------------------------------------------------------

def test_criterion_6_citeulike(criterion):
    path = find_citeulike()
    if path is None:
        criterion(6, "CiteULike end to end", False,
                  "dataset not available; place users.dat under $SDGAR_DATA_DIR/citeulike/")
        pytest.fail("CiteULike data not found; the end-to-end comparison could not run")
    t0 = time.perf_counter()
    split = load_citeulike(path)
    res = compare_modes(split, TrainConfig(dim=32, K=32), ("sd_gar", "self_adversarial", "uniform"))
    sd, sa, un = (res[m]["test_ndcg"] for m in ("sd_gar", "self_adversarial", "uniform"))
    elapsed = time.perf_counter() - t0
    ok = sd >= 0.12 and sd > sa > un
    criterion(6, "CiteULike end to end", ok,
              f"sd_gar {sd:.4f}, self_adversarial {sa:.4f}, uniform {un:.4f}, {elapsed / 60:.1f} min")
    assert ok


# 7 -------------------------------------------------------------------------

def _epoch_runner(M, N=2000, per_context=20):
    rng = np.random.default_rng(0)
    positives = tuple(np.sort(rng.choice(M, per_context, replace=False)) for _ in range(N))
    cfg = TrainConfig(K=32, dim=32)
    disc = D.DiscriminatorParams.init(N, M, cfg.dim, rng)
    gen = GeneratorParams.init(N, M, cfg.K, rng)
    tables = rebuild_tables(gen)
    opt = D.OptimizerState.for_params(disc)

    def run():
        t = time.perf_counter()
        train_epoch(disc, opt, gen, tables, cfg, positives, rng)
        return time.perf_counter() - t

    run()  # warm up
    return run


def _epoch_seconds_pair(m_small, m_large, repeats=7):
    """Best-of-``repeats`` epoch times, alternating sizes to share machine noise."""
    small, large = _epoch_runner(m_small), _epoch_runner(m_large)
    ts, tl = np.inf, np.inf
    for _ in range(repeats):
        ts = min(ts, small())
        tl = min(tl, large())
    return ts, tl


def _round_seconds(n, repeats=3):
    rng = np.random.default_rng(0)
    disc = D.DiscriminatorParams.init(n, n, 32, rng, 0.1)
    gen = GeneratorParams.init(n, n, 32, rng)
    tables = rebuild_tables(gen)
    G.generator_round(disc, gen, tables, 1.0, 1.0, 1.0, 64, rng)
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        G.generator_round(disc, gen, tables, 1.0, 1.0, 1.0, 64, rng)
        best = min(best, time.perf_counter() - t)
    return best


@pytest.mark.slow
def test_criterion_7_complexity(criterion):
    small, large = _epoch_seconds_pair(4000, 20000)
    epoch_change = abs(large - small) / small

    sizes = np.array([500, 1000, 2000, 4000, 8000])
    secs = np.array([_round_seconds(int(n)) for n in sizes])
    x, y = np.log(2 * sizes), np.log(secs)
    slope, _ = np.polyfit(x, y, 1)
    r2 = float(np.corrcoef(x, y)[0, 1] ** 2)

    rows = bench_sampler([1000, 100_000], draws=200_000, naive_draws=200, seed=0)
    naive_growth = rows[1]["naive_ns"] / rows[0]["naive_ns"]
    alias_growth = rows[1]["alias_ns"] / rows[0]["alias_ns"]

    ok = epoch_change < 0.25 and r2 > 0.95 and 0.5 < slope < 1.5 and naive_growth >= 10 and alias_growth <= 3
    criterion(7, "complexity", ok,
              f"epoch time change {epoch_change:.1%} for 5x M; generator round slope {slope:.2f} "
              f"R2 {r2:.4f}; naive sampler x{naive_growth:.1f}, alias x{alias_growth:.2f} from M=1e3 to 1e5")
    assert ok
