"""Distributed training loops run on a simulated :class:`~dho2.collectives.WorkerGroup`.

Three trainers share one worker harness:

``sgd``
    synchronous data-parallel training with the base optimizer alone.
``fosi``
    the hybrid step ``w += delta1 + delta2`` with the curvature estimate
    refreshed every ``refresh_interval`` iterations (the ablation without the
    ADMM-like rule).
``dho2``
    ``K`` outer rounds; each refreshes the curvature estimate, moves to
    ``w = w_a + pi / sigma``, runs ``P`` epochs of hybrid steps on the
    penalized gradient ``g + pi`` starting from ``w``, then updates ``pi``.

Parameters, multiplier and optimizer state are replicated: every rank applies
the same all-reduced gradient and ends each step with bit-identical vectors.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .accounting import AllocationTracker, CostModel
from .collectives import CommLedger, WorkerGroup, make_shards
from .dist_lanczos import extract_ese_distributed, lanczos_distributed
from .exceptions import DivergenceError, TrainingAborted
from .lanczos import empty_ese, lanczos_budget
from .linalg import dot
from .optimizer import (
    AdmmState,
    BaseOptimizerState,
    FosiConfig,
    admm_deltas,
    admm_dual_update,
    admm_w_update,
    fosi_deltas,
)

TRAINERS = ("sgd", "fosi", "dho2")

METRIC_COLUMNS = (
    "trainer",
    "outer_k",
    "inner_l",
    "epoch",
    "step",
    "train_loss",
    "train_acc",
    "residual_norm",
    "wallclock_ms",
    "ese_refresh_flag",
)


@dataclass
class TrainConfig:
    """Everything a trainer needs besides the problem and the worker group.

    ``epochs`` is the run length of ``sgd`` and ``fosi``; it defaults to
    ``K * P`` so all three trainers see the same number of epochs.
    ``sigma_zero_reduction`` runs ``dho2`` with the multiplier pinned to zero
    and no curvature shift, which turns it into the ``fosi`` trainer
    refreshing once per outer round. ``inner_tol`` optionally ends an inner
    loop early once ``||grad f(w_a) + pi||`` drops below it.
    """

    trainer: str = "dho2"
    K: int = 25
    P: int = 4
    epochs: int | None = None
    sigma: float = 5e-4
    base: str = "adamw"
    lr: float = 1e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    fosi: FosiConfig = field(default_factory=FosiConfig)
    batch_size: int | None = None
    seed: int = 0
    init_seed: int = 0
    loss_target: float | None = None
    stop_at_target: bool = False
    sigma_zero_reduction: bool = False
    inner_tol: float | None = None
    check: bool = True
    cost: CostModel = field(default_factory=CostModel)

    def __post_init__(self):
        if self.trainer not in TRAINERS:
            raise ValueError(f"unknown trainer {self.trainer!r}; expected one of {TRAINERS}")
        if self.K < 1 or self.P < 1:
            raise ValueError("K and P must be positive")
        if self.epochs is not None and self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.sigma <= 0 and not self.sigma_zero_reduction:
            raise ValueError("sigma must be positive")

    @property
    def total_epochs(self) -> int:
        return self.epochs if self.epochs is not None else self.K * self.P

    def make_base(self) -> BaseOptimizerState:
        return BaseOptimizerState(
            kind=self.base,
            lr=self.lr,
            weight_decay=self.weight_decay,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            momentum=self.momentum,
        )


@dataclass
class TrainResult:
    w: np.ndarray
    metrics: list
    ledger: CommLedger
    tracker: AllocationTracker
    refreshes: int
    wall_seconds: float
    lanczos_iters: int | None = None
    refresh_sizes: list = field(default_factory=list)

    def steps_to(self, target: float):
        """First cumulative step count whose end-of-epoch loss is at or below ``target``."""
        for rec in self.metrics:
            if rec["train_loss"] <= target:
                return rec["step"]
        return None


def initial_point(oracle, seed: int) -> np.ndarray:
    if hasattr(oracle, "init_params"):
        return oracle.init_params(seed)
    return np.random.default_rng(seed).standard_normal(oracle.n)


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


class _Worker:
    def __init__(self, comm, cfg: TrainConfig, oracle, dataset, tracker, t0):
        self.comm = comm
        self.cfg = cfg
        self.oracle = oracle
        self.dataset = dataset
        self.tracker = tracker
        self.t0 = t0
        self.n = oracle.n
        self.rank = comm.rank
        self.size = comm.size
        self.shard = make_shards(self.n, self.size)[self.rank]
        self.base = cfg.make_base()
        self.metrics: list[dict] = []
        self.step = 0
        self.flops = 0
        self.refreshes = 0
        self.refreshed_this_epoch = False
        self.lanczos_iters = None
        self.refresh_sizes: list[int] = []
        fc = cfg.fosi
        if dataset is not None:
            self.curvature_batch = dataset.subset(fc.curvature_batch)
            self.full_batch = dataset.batch()
        else:
            self.curvature_batch = self.full_batch = None

    # -- pieces --------------------------------------------------------------------
    def rounds(self, epoch):
        if self.dataset is None:
            return [None]
        return self.dataset.epoch_rounds(epoch, self.cfg.batch_size, self.size)

    def gradient(self, w, parts) -> np.ndarray:
        """Mean gradient over one round, all-reduced across workers."""
        if parts is None:
            g = self.oracle.grad(w, None)
            self.flops += self.oracle.cost("grad", 1)
        else:
            mine = parts[self.rank]
            total = sum(len(p) for p in parts)
            if len(mine):
                g = self.oracle.grad(w, self.dataset.batch(mine))
                # weight so the sum over workers / C is the mean over the round
                scale = len(mine) * self.size / total
                if scale != 1.0:
                    g = g * scale
            else:
                g = np.zeros(self.n)
            self.flops += self.oracle.cost("grad", len(mine))
        g = self.comm.all_reduce_sum(g, tag="grad")
        return g / self.size

    def refresh(self, w):
        fc = self.cfg.fosi
        m = fc.lanczos_iters or lanczos_budget(fc.k, fc.l, self.n)
        m = min(m, self.n)
        self.lanczos_iters = m
        hvp_batch = self.curvature_batch
        samples = len(hvp_batch) if hvp_batch is not None else 1
        oracle = self.oracle
        w_fixed = np.array(w, copy=True)

        def hvp(v):
            self.flops += oracle.cost("hvp", samples)
            return oracle.hvp(w_fixed, v, hvp_batch)

        seed = self.cfg.seed * 100003 + self.refreshes
        state = lanczos_distributed(
            self.comm, m, hvp, self.shard, seed=seed, reorth=fc.reorth, check=self.cfg.check, tracker=self.tracker
        )
        self.refresh_sizes.append(state.size)
        # an early breakdown can leave fewer Ritz pairs than requested; keep what exists
        k = min(fc.k, state.size)
        l = min(fc.l, state.size - k)
        ese = extract_ese_distributed(self.comm, state, k, l, check=self.cfg.check, tracker=self.tracker)
        self.refreshes += 1
        self.refreshed_this_epoch = True
        return ese

    def evaluate(self, w):
        batch = self.full_batch
        loss = self.oracle.value(w, batch)
        acc = self.oracle.accuracy(w, batch) if batch is not None else None
        self.flops += self.oracle.cost("value", len(batch) if batch is not None else 1)
        return loss, acc

    def record(self, w, epoch, outer_k=None, inner_l=None, residual=None) -> bool:
        loss, acc = self.evaluate(w)
        rec = {
            "trainer": self.cfg.trainer,
            "outer_k": outer_k,
            "inner_l": inner_l,
            "epoch": epoch,
            "step": self.step,
            "train_loss": loss,
            "train_acc": acc,
            "residual_norm": residual,
            "wallclock_ms": self.cfg.cost.ms(self.flops, self.comm.received, self.comm.calls),
            "ese_refresh_flag": int(self.refreshed_this_epoch),
            # real elapsed time; kept out of the CSV so reruns stay byte-identical
            "raw_ms": 1e3 * (time.perf_counter() - self.t0),
        }
        self.refreshed_this_epoch = False
        if not math.isfinite(loss):
            raise TrainingAborted(f"non-finite training loss at epoch {epoch}, step {self.step}", rec)
        self.metrics.append(rec)
        target = self.cfg.loss_target
        return self.cfg.stop_at_target and target is not None and loss <= target

    def track_moments(self):
        if self.tracker is not None:
            self.tracker.allocate(self.rank, "optimizer_moments", self.base.moment_slots)

    def verify_replicas(self, *arrays):
        if self.cfg.check:
            seen = self.comm.exchange(_digest(*arrays), tag="check")
            if len(set(seen)) != 1:
                raise DivergenceError("replicated parameters differ across ranks")

    # -- trainers ------------------------------------------------------------------
    def run_sgd(self, w):
        for epoch in range(self.cfg.total_epochs):
            for parts in self.rounds(epoch):
                g = self.gradient(w, parts)
                w = w + self.base.step(g, w)
                self.step += 1
            if self.record(w, epoch):
                break
        self.track_moments()
        return w

    def run_fosi(self, w):
        fc = self.cfg.fosi
        ese = empty_ese(self.n)
        for epoch in range(self.cfg.total_epochs):
            rounds = self.rounds(epoch)
            interval = fc.refresh_interval or len(rounds)
            for parts in rounds:
                if fc.enabled and self.step % interval == 0:
                    ese = self.refresh(w)
                g = self.gradient(w, parts)
                d1, d2 = fosi_deltas(g, ese, self.base, fc.alpha, w=w, eigval_floor=fc.eigval_floor)
                w = w + (d1 + d2)
                self.step += 1
            if self.record(w, epoch):
                break
        self.track_moments()
        return w

    def run_dho2(self, w0):
        cfg, fc = self.cfg, self.cfg.fosi
        reduction = cfg.sigma_zero_reduction
        sigma = 0.0 if reduction else cfg.sigma
        state = AdmmState.start(w0, 1.0 if reduction else sigma)
        epoch = 0
        stop = False
        for k in range(cfg.K):
            state.k_outer = k
            ese = self.refresh(state.w_a) if fc.enabled else empty_ese(self.n)
            if reduction:
                state.w = state.w_a.copy()
            else:
                admm_w_update(state)
            w_a = state.w.copy()
            for inner in range(cfg.P):
                g = None
                for parts in self.rounds(epoch):
                    g = self.gradient(w_a, parts)
                    d1, d2 = admm_deltas(g, state.pi, ese, self.base, fc.alpha, sigma, w=w_a, eigval_floor=fc.eigval_floor)
                    w_a = w_a + (d1 + d2)
                    self.step += 1
                d = w_a - state.w
                stop = self.record(w_a, epoch, k, inner, math.sqrt(dot(d, d)))
                epoch += 1
                if stop:
                    break
                if cfg.inner_tol is not None and g is not None:
                    r = g + state.pi
                    if math.sqrt(dot(r, r)) < cfg.inner_tol:
                        break
            state.w_a = w_a
            if not reduction:
                admm_dual_update(state)
            if stop:
                break
        self.track_moments()
        self.admm = state
        return state.w_a


def _train_worker(comm, cfg, oracle, dataset, w0, tracker, t0):
    worker = _Worker(comm, cfg, oracle, dataset, tracker, t0)
    run = {"sgd": worker.run_sgd, "fosi": worker.run_fosi, "dho2": worker.run_dho2}[cfg.trainer]
    w = run(np.array(w0, dtype=np.float64, copy=True))
    worker.verify_replicas(w)
    return w, worker.metrics, worker.refresh_sizes, worker.lanczos_iters


def train(config: TrainConfig, oracle, dataset=None, group: WorkerGroup | None = None, w0=None) -> TrainResult:
    """Run ``config.trainer`` on every worker of ``group`` and collect rank 0's view."""
    group = group or WorkerGroup(1)
    tracker = AllocationTracker()
    w0 = initial_point(oracle, config.init_seed) if w0 is None else np.asarray(w0, dtype=np.float64)
    t0 = time.perf_counter()
    results = group.run(_train_worker, config, oracle, dataset, w0, tracker, t0)
    wall = time.perf_counter() - t0
    w, metrics, sizes, m = results[0]
    return TrainResult(w, metrics, group.ledger, tracker, len(sizes), wall, m, refresh_sizes=sizes)


def _with_trainer(config: TrainConfig, name: str) -> TrainConfig:
    if config.trainer == name:
        return config
    from dataclasses import replace

    return replace(config, trainer=name)


def sgd_train(config, oracle, dataset=None, group=None, w0=None) -> TrainResult:
    return train(_with_trainer(config, "sgd"), oracle, dataset, group, w0)


def fosi_train(config, oracle, dataset=None, group=None, w0=None) -> TrainResult:
    return train(_with_trainer(config, "fosi"), oracle, dataset, group, w0)


def dho2_train(config, oracle, dataset=None, group=None, w0=None) -> TrainResult:
    return train(_with_trainer(config, "dho2"), oracle, dataset, group, w0)
