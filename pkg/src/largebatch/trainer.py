"""Synchronous data-parallel training over simulated in-process workers.

Each iteration every worker runs forward/backward on its own minibatch, the
gradients are averaged with one all-reduce, and a single optimizer update is
computed and broadcast so that all replicas stay bit-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model as mlp
from .collective import CommPrecision, CommStats, CostModel, all_reduce, ring_time
from .config import Config
from .data import Dataset, load_dataset_file, make_synthetic_dataset
from .lr_schedule import ClusterShape, LrSchedule, eta_base, goyal_schedule, slow_start_schedule
from .numeric_core import NonFiniteError, Rng
from .optimizer import BlendCoefficients, OptimizerHyper, ParamOptimizer, blend_at
from .syncbn import sync_statistics

log = logging.getLogger(__name__)

TRAIN_LOG_HEADER = ("iteration", "epoch", "lr", "alpha_sgd", "train_loss", "comm_seconds_model")
VAL_LOG_HEADER = ("epoch", "val_loss", "val_accuracy")
CHECKPOINT_VERSION = 1

# Rng stream ids under the run seed
_STREAM_INIT, _STREAM_DATA, _STREAM_SHARD, _STREAM_SAMPLE = 1, 2, 3, 4


class TrainingError(RuntimeError):
    pass


class ReplicaDivergenceError(TrainingError):
    pass


@dataclass
class WorkerReplica:
    worker_id: int
    params: dict
    bn_states: dict
    shard: np.ndarray
    rng: Rng


@dataclass
class RunLog:
    iterations: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "train_log.csv"), TRAIN_LOG_HEADER, self.iterations)
        _write_csv(os.path.join(out_dir, "val_log.csv"), VAL_LOG_HEADER, self.epochs)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# -- setup ------------------------------------------------------------------


def model_spec(cfg: Config) -> mlp.ModelSpec:
    return mlp.ModelSpec(cfg.layers, cfg.batchnorm, "relu", cfg.init_scale)


def build_dataset(cfg: Config) -> Dataset:
    rng = Rng(cfg.seed, _STREAM_DATA)
    if cfg.dataset.startswith("file:"):
        ds = load_dataset_file(cfg.dataset[len("file:"):], rng)
        if ds.input_dim != cfg.layers[0] or ds.classes != cfg.classes:
            raise ValueError(
                f"dataset is {ds.input_dim}-d with {ds.classes} classes; "
                f"model.layers expects {cfg.layers[0]} and {cfg.classes}"
            )
        return ds
    return make_synthetic_dataset(
        rng, cfg.classes, cfg.dataset_examples, cfg.layers[0], cfg.dataset_separation
    )


def make_shards(n_train, workers, seed) -> list:
    """Disjoint equal-size shards of a seeded permutation (remainder dropped)."""
    order = Rng(seed, _STREAM_SHARD).permutation(n_train)
    per = n_train // workers
    if per < 1:
        raise ValueError("fewer training examples than workers")
    return [order[w * per:(w + 1) * per] for w in range(workers)]


def make_replicas(cfg: Config, dataset: Dataset) -> list:
    spec = model_spec(cfg)
    params = mlp.init_params(spec, Rng(cfg.seed, _STREAM_INIT))
    shards = make_shards(len(dataset.train_y), cfg.workers, cfg.seed)
    return [
        WorkerReplica(
            worker_id=w,
            params=dict(params),
            bn_states=mlp.init_bn_states(spec),
            shard=shards[w],
            rng=Rng(cfg.seed, _STREAM_SAMPLE, w),
        )
        for w in range(cfg.workers)
    ]


def iterations_per_epoch(cfg: Config, shard_size: int) -> int:
    if cfg.iterations_per_epoch:
        return cfg.iterations_per_epoch
    ipe = shard_size // cfg.b_local
    if ipe < 1:
        raise ValueError("shard smaller than b_local")
    return ipe


class Sampler:
    """Per-worker epoch shuffles; iteration k of an epoch takes the k-th slice."""

    def __init__(self, replicas, b_local, ipe):
        self.replicas = replicas
        self.b_local = b_local
        self.ipe = ipe
        self._cache = {}

    def _order(self, replica, epoch):
        key = (replica.worker_id, epoch)
        if key not in self._cache:
            self._cache = {k: v for k, v in self._cache.items() if k[1] >= epoch}
            n = len(replica.shard)
            reps = math.ceil(self.ipe * self.b_local / n)
            rng = replica.rng.spawn(epoch)
            self._cache[key] = np.concatenate([replica.shard[rng.permutation(n)] for _ in range(reps)])
        return self._cache[key]

    def batches(self, iteration):
        epoch, k = divmod(iteration, self.ipe)
        sl = slice(k * self.b_local, (k + 1) * self.b_local)
        return [self._order(r, epoch)[sl] for r in self.replicas]


def make_schedule(cfg: Config, ipe: int) -> LrSchedule:
    base = eta_base(ClusterShape(cfg.workers, cfg.b_local)) * cfg.eta_base_scale
    build = slow_start_schedule if cfg.schedule == "slow_start" else goyal_schedule
    return build(base, cfg.epochs, ipe)


def make_hyper(cfg: Config) -> OptimizerHyper:
    hyper = OptimizerHyper(
        cfg.mu1, cfg.mu2, cfg.epsilon, cfg.eta_rmsprop, cfg.beta_center, cfg.beta_period
    )
    if cfg.scale_beta:
        hyper = hyper.scaled(cfg.epochs / 90)
    return hyper


def blend_for(kind: str, epoch: float, lr: float, hyper: OptimizerHyper) -> BlendCoefficients:
    if kind == "hybrid":
        return blend_at(epoch, lr, hyper)
    if kind == "sgd":
        return BlendCoefficients(1.0, 0.0, lr)
    if kind == "rmsprop":
        return BlendCoefficients(0.0, hyper.eta_rmsprop / lr, lr)
    raise ValueError(f"unknown optimizer {kind!r}")


# -- one iteration ----------------------------------------------------------


def forward_backward(replica: WorkerReplica, spec, x, y, eps_bn=1e-5):
    """Mean cross-entropy over the local minibatch and its gradients."""
    try:
        return mlp.loss_and_grads(spec, replica.params, replica.bn_states, x, y, eps_bn)
    except NonFiniteError as exc:
        raise NonFiniteError(f"worker {replica.worker_id}: {exc}") from None


def _flatten(grads, names):
    return np.concatenate([grads[n].ravel() for n in names])


def _unflatten(flat, like, names):
    out, off = {}, 0
    for n in names:
        size = like[n].size
        out[n] = flat[off:off + size].reshape(like[n].shape)
        off += size
    return out


def check_replicas(replicas):
    ref = replicas[0].params
    for r in replicas[1:]:
        for name, v in ref.items():
            if not np.array_equal(r.params[name], v):
                raise ReplicaDivergenceError(f"worker {r.worker_id} differs from worker 0 in {name}")


@dataclass
class TrainContext:
    spec: mlp.ModelSpec
    optimizer: ParamOptimizer
    schedule: LrSchedule | None
    hyper: OptimizerHyper
    optimizer_kind: str = "hybrid"
    precision: CommPrecision = CommPrecision.FULL64
    weight_decay: float = 0.0
    eps_bn: float = 1e-5
    cost_model: CostModel = field(default_factory=CostModel)
    ipe: int = 1
    comm_stats: CommStats = field(default_factory=CommStats)
    executor: ThreadPoolExecutor | None = None


def train_step(replicas, ctx: TrainContext, iteration: int, batches, dataset: Dataset):
    """Run one synchronous iteration; returns the train-log record."""
    check_replicas(replicas)
    epoch = iteration / ctx.ipe

    def work(args):
        r, idx = args
        return forward_backward(r, ctx.spec, dataset.train_x[idx], dataset.train_y[idx], ctx.eps_bn)

    jobs = list(zip(replicas, batches))
    results = list(ctx.executor.map(work, jobs)) if ctx.executor else [work(j) for j in jobs]

    names = list(replicas[0].params)
    avg = all_reduce(
        [_flatten(g, names) for _, g in results], "average", ctx.precision, ctx.comm_stats
    )
    grads = _unflatten(avg, replicas[0].params, names)
    loss = sum(l for l, _ in results) / len(results)
    if not math.isfinite(loss):
        raise NonFiniteError(f"non-finite train loss at iteration {iteration}")

    params = replicas[0].params
    if ctx.weight_decay:
        grads = {
            n: g + ctx.weight_decay * params[n] if n.endswith(".weight") else g
            for n, g in grads.items()
        }
    lr = ctx.schedule(epoch)
    blend = blend_for(ctx.optimizer_kind, epoch, lr, ctx.hyper)
    new_params = ctx.optimizer.apply(params, grads, blend)
    for r in replicas:
        r.params = dict(new_params)
    check_replicas(replicas)

    payload = avg.size * ctx.precision.bytes_per_element
    comm = ring_time(payload, len(replicas), ctx.cost_model)
    return (iteration, epoch, lr, blend.alpha_sgd, loss, comm)


def validate(replicas, spec, dataset: Dataset, precision=CommPrecision.FULL64,
             eps_bn=1e-5, pooled=False, stats=None):
    """Sync BN statistics across workers, then evaluate top-1 on the validation split."""
    for layer in replicas[0].bn_states:
        sync_statistics([r.bn_states[layer] for r in replicas], precision, pooled, stats)
    # replicas share parameters and synced statistics, so worker 0 speaks for all
    r = replicas[0]
    logits = mlp.predict(spec, r.params, r.bn_states, dataset.val_x, eps_bn)
    loss, _ = mlp.cross_entropy(logits, dataset.val_y)
    acc = float((logits.argmax(axis=1) == dataset.val_y).mean())
    return loss, acc


# -- checkpoints ------------------------------------------------------------


def _arr(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarr(d):
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def make_checkpoint(cfg: Config, iteration, replicas, optimizer: ParamOptimizer) -> dict:
    r = replicas[0]
    return {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "iteration": iteration,
        "params": {n: _arr(v) for n, v in r.params.items()},
        "optimizer": {
            n: {"m": _arr(st.m), "delta": _arr(st.delta), "t": st.t}
            for n, st in optimizer.states.items()
        },
        "bn": {
            str(i): {
                "synced_mean": None if st.synced_mean is None else _arr(st.synced_mean),
                "synced_var": None if st.synced_var is None else _arr(st.synced_var),
            }
            for i, st in r.bn_states.items()
        },
    }


def save_checkpoint(ckpt: dict, path):
    # json emits shortest round-trip float reprs
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ckpt, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        ckpt = json.load(fh)
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ckpt.get('version')}")
    ckpt["params"] = {n: _unarr(v) for n, v in ckpt["params"].items()}
    for st in ckpt["optimizer"].values():
        st["m"], st["delta"] = _unarr(st["m"]), _unarr(st["delta"])
    for st in ckpt["bn"].values():
        for k in ("synced_mean", "synced_var"):
            if st[k] is not None:
                st[k] = _unarr(st[k])
    return ckpt


# -- full run ---------------------------------------------------------------


@dataclass
class RunResult:
    log: RunLog
    checkpoint: dict
    config: Config
    completed: bool = True
    error: str | None = None


@dataclass
class Session:
    """Everything a run needs, built from a config."""

    config: Config
    dataset: Dataset
    replicas: list
    ctx: TrainContext
    sampler: Sampler

    def step(self, iteration, batches=None):
        if batches is None:
            batches = self.sampler.batches(iteration)
        return train_step(self.replicas, self.ctx, iteration, batches, self.dataset)

    def validate(self):
        return validate(
            self.replicas, self.ctx.spec, self.dataset, self.ctx.precision, self.ctx.eps_bn,
            self.config.bn_var_combine == "pooled", self.ctx.comm_stats,
        )


def prepare(cfg: Config, dataset: Dataset | None = None, executor=None) -> Session:
    dataset = dataset if dataset is not None else build_dataset(cfg)
    replicas = make_replicas(cfg, dataset)
    ipe = iterations_per_epoch(cfg, len(replicas[0].shard))
    hyper = make_hyper(cfg) if cfg.epochs else OptimizerHyper()
    ctx = TrainContext(
        spec=model_spec(cfg),
        optimizer=ParamOptimizer(hyper),
        schedule=make_schedule(cfg, ipe) if cfg.epochs else None,
        hyper=hyper,
        optimizer_kind=cfg.optimizer,
        precision=CommPrecision.parse(cfg.precision),
        weight_decay=cfg.weight_decay,
        eps_bn=cfg.eps_bn,
        cost_model=CostModel(cfg.comm_alpha, cfg.comm_beta, cfg.comm_gamma),
        ipe=ipe,
        executor=executor,
    )
    return Session(cfg, dataset, replicas, ctx, Sampler(replicas, cfg.b_local, ipe))


def run(cfg: Config, dataset: Dataset | None = None, raise_errors=True) -> RunResult:
    """Train for ``cfg.epochs`` epochs with validation after each epoch.

    Logs and the final checkpoint are written to ``cfg.out_dir`` when set; on
    error the partial logs are flushed before re-raising (or, with
    ``raise_errors=False``, returned with ``completed=False``).
    """
    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    sess = prepare(cfg, dataset, executor)
    result = RunResult(RunLog(), {}, cfg)
    iteration = 0
    try:
        for epoch in range(cfg.epochs):
            for _ in range(sess.ctx.ipe):
                result.log.iterations.append(sess.step(iteration))
                iteration += 1
            val_loss, val_acc = sess.validate()
            if not math.isfinite(val_loss):
                raise NonFiniteError(f"non-finite validation loss after epoch {epoch}")
            result.log.epochs.append((epoch, val_loss, val_acc))
            log.info("epoch %d val_loss %.4f val_acc %.4f", epoch, val_loss, val_acc)
    except (NonFiniteError, FloatingPointError, TrainingError) as exc:
        result.completed = False
        result.error = str(exc)
        if raise_errors:
            _finish(result, cfg, iteration, sess)
            raise
    finally:
        if executor:
            executor.shutdown()
    _finish(result, cfg, iteration, sess)
    return result


def _finish(result, cfg, iteration, sess):
    result.checkpoint = make_checkpoint(cfg, iteration, sess.replicas, sess.ctx.optimizer)
    if cfg.out_dir:
        result.log.write(cfg.out_dir)
        save_checkpoint(result.checkpoint, os.path.join(cfg.out_dir, "checkpoint.json"))


def final_accuracy(result: RunResult) -> float:
    return result.log.epochs[-1][2] if result.log.epochs else float("nan")


@dataclass
class WarmupComparison:
    seed: int
    recipe_finite: bool
    recipe_accuracy: float
    sgd_finite: bool
    sgd_accuracy: float

    @property
    def recipe_wins(self) -> bool:
        if not self.recipe_finite:
            return False
        return (not self.sgd_finite) or self.sgd_accuracy <= self.recipe_accuracy - 0.02


def warmup_comparison(base: Config, seed: int, eta_scale=8.0) -> WarmupComparison:
    """Full recipe vs momentum SGD with the Goyal schedule at an inflated eta_base."""
    from dataclasses import replace

    common = dict(seed=seed, eta_base_scale=base.eta_base_scale * eta_scale, out_dir="")
    recipe = run(replace(base, optimizer="hybrid", schedule="slow_start", **common), raise_errors=False)
    sgd = run(replace(base, optimizer="sgd", schedule="goyal", **common), raise_errors=False)
    return WarmupComparison(
        seed, recipe.completed, final_accuracy(recipe), sgd.completed, final_accuracy(sgd)
    )
