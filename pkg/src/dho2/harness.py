"""Experiment runner and the accounting reports built on its artifacts.

A run directory holds:

``metrics.csv``
    one row per epoch, columns :data:`dho2.trainers.METRIC_COLUMNS`.
    ``wallclock_ms`` is the cost-model time, so reruns are byte-identical.
``ledger.csv``
    one row per rank per completed collective.
``memory.csv``
    peak float slots and flop counters per rank and buffer.
``summary.json``
    final loss/accuracy, steps and time to the loss target (raw and
    modeled), refresh bookkeeping.
``config.ini``
    the resolved configuration.
``diagnostic.json``
    only when training aborted: the offending metrics record.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .accounting import AllocationTracker
from .collectives import CommLedger, WorkerGroup, make_shards
from .config import ExperimentConfig
from .dist_lanczos import run_distributed_lanczos
from .exceptions import TrainingAborted
from .oracle import (
    generate_synthetic_dataset,
    ill_conditioned_spectrum,
    load_csv_dataset,
    mlp_oracle,
    outlier_spectrum,
    quadratic_oracle,
)
from .trainers import METRIC_COLUMNS, TrainResult, initial_point, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ABORTED = 3


def build_problem(cfg: ExperimentConfig):
    """``(oracle, dataset)`` for the configured problem; ``dataset`` is None for quadratics."""
    p = cfg.problem
    if p.kind == "quadratic":
        if p.spectrum == "outlier":
            spectrum = outlier_spectrum(p.n, p.condition, p.outliers, p.bulk_condition, p.top)
        else:
            spectrum = ill_conditioned_spectrum(p.n, p.condition, p.top)
        return quadratic_oracle(spectrum, rotation_seed=p.rotation_seed), None
    if p.synthetic:
        data = generate_synthetic_dataset(p.dataset, p.samples, p.data_seed)
    else:
        data = load_csv_dataset(p.dataset, p.features, p.label, task=p.task, seed=p.data_seed)
    sizes = [data.feature_dim, *p.hidden, data.output_dim]
    return mlp_oracle(sizes, p.activation, data, loss=p.loss, l2=p.l2), data


def make_group(cfg: ExperimentConfig) -> WorkerGroup:
    return WorkerGroup(cfg.workers, backend=cfg.backend, schedule_seed=cfg.schedule_seed)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_metrics_csv(metrics, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for rec in metrics:
            writer.writerow([_cell(rec.get(c)) for c in METRIC_COLUMNS])


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_memory_csv(tracker: AllocationTracker, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("rank", "name", "peak_slots", "flops"))
        writer.writerows(tracker.rows())


def summarize(cfg: ExperimentConfig, oracle, result: TrainResult) -> dict:
    metrics = result.metrics
    last = metrics[-1] if metrics else {}
    target = cfg.train.loss_target
    hit = None
    if target is not None:
        hit = next((rec for rec in metrics if rec["train_loss"] <= target), None)
    fc = cfg.train.fosi
    return {
        "status": "ok",
        "trainer": cfg.trainer,
        "workers": cfg.workers,
        "n": oracle.n,
        "k": fc.k,
        "l": fc.l,
        "lanczos_iters": result.lanczos_iters,
        "refreshes": result.refreshes,
        "refresh_sizes": list(result.refresh_sizes),
        "epochs": len(metrics),
        "steps": last.get("step", 0),
        "final_loss": last.get("train_loss"),
        "final_acc": last.get("train_acc"),
        "final_residual": last.get("residual_norm"),
        "loss_target": target,
        "steps_to_target": hit["step"] if hit else None,
        "epoch_to_target": hit["epoch"] if hit else None,
        "time_to_target_modeled_ms": hit["wallclock_ms"] if hit else None,
        "time_to_target_raw_ms": hit["raw_ms"] if hit else None,
        "total_modeled_ms": last.get("wallclock_ms"),
        "total_raw_ms": 1e3 * result.wall_seconds,
    }


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


@dataclass
class RunOutcome:
    status: int
    summary: dict
    result: TrainResult | None = None
    out: Path | None = None
    diagnostic: dict = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig, out=None) -> RunOutcome:
    """Train as configured and write the artifacts to ``out`` (or ``cfg.out``; nothing when both are None)."""
    out = Path(out) if out is not None else cfg.out
    oracle, dataset = build_problem(cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.dump(out / "config.ini")
    try:
        result = train(cfg.train, oracle, dataset, make_group(cfg), w0=initial_point(oracle, cfg.init_seed))
    except TrainingAborted as exc:
        diagnostic = {"message": str(exc), "record": exc.record}
        summary = {"status": "aborted", "trainer": cfg.trainer, "workers": cfg.workers, "message": str(exc)}
        if out is not None:
            _write_json(diagnostic, out / "diagnostic.json")
            _write_json(summary, out / "summary.json")
        return RunOutcome(EXIT_ABORTED, summary, None, out, diagnostic)
    summary = summarize(cfg, oracle, result)
    if out is not None:
        write_metrics_csv(result.metrics, out / "metrics.csv")
        result.ledger.write_csv(out / "ledger.csv")
        write_memory_csv(result.tracker, out / "memory.csv")
        _write_json(summary, out / "summary.json")
    return RunOutcome(EXIT_OK, summary, result, out)


# -- memory -----------------------------------------------------------------------


@dataclass
class MemoryRow:
    workers: int
    rank: int
    rows: int
    d_slots: int
    expected: int

    @property
    def ok(self) -> bool:
        return self.d_slots == self.expected


@dataclass
class MemoryReport:
    n: int
    m: int
    rows: list

    def peak(self, workers: int) -> int:
        """Largest per-worker ``D_shard`` slot count at a given group size."""
        return max(r.d_slots for r in self.rows if r.workers == workers)

    @property
    def ok(self) -> bool:
        if not all(r.ok for r in self.rows):
            return False
        sizes = sorted({r.workers for r in self.rows})
        # more workers never means more slots, and stays within one shard row of n/C
        for a, b in zip(sizes, sizes[1:]):
            if self.peak(b) > self.peak(a):
                return False
        return all(self.peak(c) - (self.n / c) * (self.m + 1) < self.m + 1 for c in sizes)

    def table(self) -> str:
        lines = ["workers rank rows d_slots expected ok"]
        for r in self.rows:
            lines.append(f"{r.workers} {r.rank} {r.rows} {r.d_slots} {r.expected} {'yes' if r.ok else 'NO'}")
        return "\n".join(lines)


def memory_report(n: int, m: int, workers=(1, 2, 4, 8), seed: int = 0, backend: str = "threads") -> MemoryReport:
    """Run sharded Lanczos on a diagonal test operator for each group size and read the D slot peaks.

    The operator has distinct eigenvalues so no breakdown cuts the run short
    for ``m < n``.
    """
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    diag = np.linspace(1.0, 2.0, n)

    def hvp(v):
        return diag * v

    rows = []
    for c in workers:
        tracker = AllocationTracker()
        run_distributed_lanczos(WorkerGroup(c, backend=backend), m, hvp, n, seed=seed, check=False, tracker=tracker)
        for shard in make_shards(n, c):
            rows.append(MemoryRow(c, shard.rank, shard.size, tracker.peak("D_shard", shard.rank), shard.size * (m + 1)))
    return MemoryReport(n, m, rows)


def expected_d_slots(n: int, m: int, workers: int) -> list[int]:
    return [s.size * (m + 1) for s in make_shards(n, workers)]


def run_memory_table(run_dir) -> list[dict]:
    """Measured ``D_shard`` peaks of a finished run next to the sharding formula."""
    run_dir = Path(run_dir)
    summary = json.loads((run_dir / "summary.json").read_text())
    peaks = {}
    with open(run_dir / "memory.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["name"] == "D_shard":
                peaks[int(row["rank"])] = int(row["peak_slots"])
    m = summary.get("lanczos_iters")
    if m is None:
        return []
    expected = expected_d_slots(summary["n"], m, summary["workers"])
    return [
        {"rank": r, "d_slots": peaks.get(r, 0), "expected": e, "ok": peaks.get(r, 0) == e}
        for r, e in enumerate(expected)
    ]


# -- communication ----------------------------------------------------------------


@dataclass
class CommCheck:
    item: str
    expected: int
    observed: int

    @property
    def ok(self) -> bool:
        return self.expected == self.observed


def _events(ledger: CommLedger, op, tag, rank=0):
    return [ev for ev in ledger.events if ev.op == op and ev.tag == tag and ev.rank == rank]


def comm_report(ledger: CommLedger, summary: dict) -> list[CommCheck]:
    """Compare the ledger with the per-refresh and per-step operation counts.

    Per refresh with ``s`` completed Lanczos iterations: ``s`` gathers of
    ``n`` floats, ``s`` coefficient reductions of ``m + 1`` floats, ``s``
    norm reductions of 1 float and one assembly of ``n (k + l)`` floats.
    Second Gram-Schmidt passes are tagged separately and reported as
    extra. Each optimizer step adds one gradient reduction of ``n`` floats.
    """
    n = summary["n"]
    m = summary.get("lanczos_iters") or 0
    sizes = summary.get("refresh_sizes", [])
    iters = sum(sizes)
    gathers = _events(ledger, "all_gather", "lanczos")
    reduces = _events(ledger, "all_reduce", "lanczos")
    coef = [ev for ev in reduces if ev.floats == m + 1]
    norms = [ev for ev in reduces if ev.floats == 1]
    ese = _events(ledger, "all_gather", "ese")
    grads = _events(ledger, "all_reduce", "grad")
    kl = [min(summary["k"], s) + min(summary["l"], s - min(summary["k"], s)) for s in sizes]
    checks = [
        CommCheck("refreshes", len(sizes), len(ese)),
        CommCheck("lanczos all_gather events", iters, len(gathers)),
        CommCheck("lanczos all_gather floats", iters * n, sum(ev.floats for ev in gathers)),
        CommCheck("lanczos all_reduce events", 2 * iters, len(reduces)),
        CommCheck(f"coefficient all_reduce ({m + 1} floats)", iters, len(coef)),
        CommCheck("norm all_reduce (1 float)", iters, len(norms)),
        CommCheck("ese assembly floats", n * sum(kl), sum(ev.floats for ev in ese)),
        CommCheck("gradient all_reduce events", summary.get("steps", 0), len(grads)),
        CommCheck("gradient all_reduce floats", summary.get("steps", 0) * n, sum(ev.floats for ev in grads)),
    ]
    return checks


def reorth_passes(ledger: CommLedger) -> int:
    """Second Gram-Schmidt passes (each costs one coefficient and one norm reduction)."""
    return len(_events(ledger, "all_reduce", "reorth")) // 2


def ledger_conserved(ledger: CommLedger) -> bool:
    events = ledger.events
    return sum(ev.sent for ev in events) == sum(ev.received for ev in events)


def load_run(run_dir):
    """``(ledger, summary)`` from a run directory."""
    run_dir = Path(run_dir)
    ledger_path = run_dir / "ledger.csv"
    if not ledger_path.is_file():
        raise FileNotFoundError(f"no ledger in {run_dir}")
    summary = json.loads((run_dir / "summary.json").read_text())
    return CommLedger.read_csv(ledger_path), summary


def format_checks(checks) -> str:
    width = max(len(c.item) for c in checks)
    lines = [f"{'item':<{width}}  expected  observed  ok"]
    for c in checks:
        lines.append(f"{c.item:<{width}}  {c.expected:>8}  {c.observed:>8}  {'yes' if c.ok else 'NO'}")
    return "\n".join(lines)

