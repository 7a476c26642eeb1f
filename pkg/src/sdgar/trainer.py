"""Training loop: discriminator epochs with weighted negatives and a periodic
closed-form generator refit.

Sampler modes:

``sd_gar``
    negatives from the decomposable generator, self-normalized importance
    weights against ``exp(f/T)``.
``uniform``
    uniform negatives with equal weights (the large-temperature limit).
``self_adversarial``
    uniform negatives weighted by ``softmax(f/T)`` within the sample.
``dns``
    uniform negatives, all weight on the highest-scored draw.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import discriminator as D
from .dataset import DatasetSplit
from .evaluator import evaluate
from .generator import GeneratorParams, GeneratorTables, generator_round, q_item_prob, rebuild_tables, sample_items

log = logging.getLogger(__name__)

SAMPLER_MODES = ("sd_gar", "uniform", "self_adversarial", "dns")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field = field_name


@dataclass
class TrainConfig:
    T: float = 1.0
    lambda_x: float = 1.0
    lambda_y: float = 1.0
    l_g: int = 5
    neg_per_context: int = 5
    est_samples: int = 64
    K: int = 32
    dim: int = 32
    epochs: int = 30
    batch_size: int = 512
    sampler_mode: str = "sd_gar"
    seed: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_coeff: float = 0.03
    init_scale: float = 0.01
    eval_k: int = 50
    keep_best: bool = True
    reestimate_mu: bool = False
    stop_gradient_through_weights: bool = True

    def validate(self) -> TrainConfig:
        for name in ("T", "lambda_x", "lambda_y"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(name, f"{name} must be positive")
        for name in ("l_g", "neg_per_context", "est_samples", "K", "dim", "batch_size", "eval_k"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs", "epochs must be >= 0")
        if self.sampler_mode not in SAMPLER_MODES:
            raise ConfigError("sampler_mode", f"sampler_mode must be one of {', '.join(SAMPLER_MODES)}")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate", "learning_rate must be >= 0")
        if not self.l2_coeff >= 0:
            raise ConfigError("l2_coeff", "l2_coeff must be >= 0")
        return self

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    best_epoch: int | None = None

    def append(self, record: dict) -> None:
        if self.records and record["epoch"] <= self.records[-1]["epoch"]:
            raise ValueError("epoch indices must increase")
        self.records.append(record)

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records]

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# negatives


def make_negatives(mode: str, disc: D.DiscriminatorParams, gen: GeneratorParams | None,
                   tables: GeneratorTables | None, c: int, n: int, T: float,
                   rng: np.random.Generator) -> D.WeightedNegatives:
    if n < 1:
        raise ValueError("n must be >= 1")
    M = disc.num_items
    if mode == "sd_gar":
        items = sample_items(gen, tables, c, n, rng)
        log_q = np.log(q_item_prob(gen, np.full(n, c), items))
        return D.importance_weights(disc, c, items, log_q, T)
    items = rng.integers(M, size=n)
    log_q = np.full(n, -np.log(M))
    if mode == "uniform":
        return D.WeightedNegatives(c, items, log_q, np.full(n, 1.0 / n))
    if mode == "self_adversarial":
        return D.importance_weights(disc, c, items, log_q, T)
    if mode == "dns":
        f = np.atleast_1d(D.softplus_f(disc, np.full(n, c), items))
        w = np.zeros(n)
        w[int(np.argmax(f))] = 1.0
        return D.WeightedNegatives(c, items, log_q, w)
    raise ValueError(f"unknown sampler mode {mode!r}")


def _segment_argmax_onehot(values: np.ndarray, starts: np.ndarray) -> np.ndarray:
    seg = np.repeat(np.arange(len(starts)), np.diff(np.append(starts, len(values))))
    m = np.maximum.reduceat(values, starts)
    hit = np.flatnonzero(values == m[seg])
    _, first = np.unique(seg[hit], return_index=True)
    w = np.zeros_like(values)
    w[hit[first]] = 1.0
    return w


def batch_negatives(mode: str, disc, gen, tables, contexts: np.ndarray, counts: np.ndarray,
                    T: float, rng: np.random.Generator):
    """Negatives for several contexts at once: ``(ctx, items, log_q, weights, starts)``."""
    ctx = np.repeat(contexts, counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    if mode == "sd_gar":
        items = sample_items(gen, tables, ctx, None, rng)
        log_q = np.log(q_item_prob(gen, ctx, items))
    else:
        items = rng.integers(disc.num_items, size=ctx.size)
        log_q = np.full(ctx.size, -np.log(disc.num_items))
    if mode == "uniform":
        weights = np.repeat(1.0 / counts, counts)
    else:
        f = D.softplus(D.score(disc, ctx, items))
        if mode == "dns":
            weights = _segment_argmax_onehot(f, starts)
        else:
            weights = D.segment_softmax(f / T - log_q, starts)
    return ctx, items, log_q, weights, starts


# ---------------------------------------------------------------------------
# training


def _context_batches(order: np.ndarray, sizes: np.ndarray, batch_size: int):
    batch, total = [], 0
    for c in order:
        batch.append(c)
        total += sizes[c]
        if total >= batch_size:
            yield np.array(batch, dtype=np.int64)
            batch, total = [], 0
    if batch:
        yield np.array(batch, dtype=np.int64)


def train_epoch(disc, opt, gen, tables, config: TrainConfig, train_pos, rng) -> float:
    """One pass over contexts; returns the mean per-context loss (before each step)."""
    sizes = np.array([p.size for p in train_pos], dtype=np.int64)
    active = np.flatnonzero(sizes > 0)
    order = active[rng.permutation(active.size)]
    total = 0.0
    for contexts in _context_batches(order, sizes, config.batch_size):
        cnt = sizes[contexts]
        neg_ctx, neg_items, log_q, weights, starts = batch_negatives(
            config.sampler_mode, disc, gen, tables, contexts, cnt * config.neg_per_context, config.T, rng)
        batch = D.Batch(
            contexts=contexts,
            pos_ctx=np.repeat(contexts, cnt),
            pos_item=np.concatenate([train_pos[c] for c in contexts]),
            pos_scale=np.repeat(1.0 / cnt, cnt),
            neg_ctx=neg_ctx, neg_item=neg_items, neg_weight=weights,
            neg_log_proposal=log_q, neg_starts=starts,
        )
        loss = D.batch_loss(disc, batch)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss in batch with contexts {contexts[:5].tolist()}...")
        total += loss
        D.grad_and_step(disc, opt, batch, config.stop_gradient_through_weights, config.T)
    return total / max(active.size, 1)


def train(config: TrainConfig, split: DatasetSplit, log_path=None, threads: int = 1, callback=None):
    """Run the adversarial training loop; returns ``(disc, gen, TrainLog)``.

    With ``keep_best`` and a non-empty validation set, the returned
    discriminator is the one from the epoch with the best validation NDCG.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    N, M = split.train.num_contexts, split.train.num_items
    disc = D.DiscriminatorParams.init(N, M, config.dim, rng, config.init_scale)
    gen = GeneratorParams.init(N, M, config.K, rng)
    tables = rebuild_tables(gen) if config.sampler_mode == "sd_gar" else None
    opt = D.OptimizerState.for_params(
        disc, learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
        epsilon=config.epsilon, l2_coeff=config.l2_coeff)
    tlog = TrainLog()
    train_pos = split.train.positives
    has_valid = split.validation.num_interactions > 0
    best = (-np.inf, None, None)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        try:
            loss = train_epoch(disc, opt, gen, tables, config, train_pos, rng)
        except FloatingPointError as exc:
            raise FloatingPointError(f"epoch {epoch}: {exc}") from exc
        t1 = time.perf_counter()
        if config.sampler_mode == "sd_gar" and epoch % config.l_g == 0:
            gen, tables, est = generator_round(disc, gen, tables, config.T, config.lambda_x, config.lambda_y,
                                               config.est_samples, rng, reestimate_mu=config.reestimate_mu)
        t2 = time.perf_counter()
        valid_ndcg = None
        if has_valid:
            valid_ndcg = evaluate(disc, split, config.eval_k, mask_train=True, target="validation",
                                  threads=threads).mean_ndcg
        t3 = time.perf_counter()
        rec = {
            "epoch": epoch,
            "loss": loss,
            "valid_ndcg": valid_ndcg,
            "disc_seconds": t1 - t0,
            "gen_seconds": t2 - t1,
            "eval_seconds": t3 - t2,
        }
        tlog.append(rec)
        log.info("epoch %d loss %.5f valid_ndcg@%d %s", epoch, loss, config.eval_k, valid_ndcg)
        if callback is not None:
            callback(rec, disc, gen)
        if config.keep_best and valid_ndcg is not None and valid_ndcg > best[0]:
            best = (valid_ndcg, epoch, disc.copy())
        if log_path is not None:
            tlog.write_jsonl(log_path)

    if config.keep_best and best[2] is not None:
        tlog.best_epoch = best[1]
        disc = best[2]
    elif tlog.records:
        tlog.best_epoch = tlog.records[-1]["epoch"]
    if log_path is not None:
        tlog.write_jsonl(log_path)
    return disc, gen, tlog
