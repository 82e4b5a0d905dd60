"""In-process simulation of a group of workers talking through collectives.

A :class:`WorkerGroup` runs one Python callable per rank. Ranks only interact
through the collective methods of the :class:`Communicator` they receive; each
collective is a barrier that completes once every rank has entered it.

Two backends execute the ranks:

``"threads"``
    one OS thread per rank, rendezvous on a condition variable. With a
    ``schedule_seed`` every rank sleeps a random jitter before each collective,
    which shuffles the real interleaving.
``"cooperative"``
    one thread per rank but only one is ever allowed to run. A scheduler hands
    control to the next runnable rank whenever the current one blocks in a
    collective or finishes (round-robin, or seeded random order).

Results never depend on the backend or the schedule: reductions accumulate in
ascending rank order and every completed round is written to the
:class:`CommLedger` by the rank that completes it, in rank order.
"""

from __future__ import annotations

import csv
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .exceptions import DeadlockError, DimensionError
from .linalg import sum_expansions

logger = logging.getLogger(__name__)

BACKENDS = ("threads", "cooperative")


@dataclass(frozen=True)
class Shard:
    """Contiguous row range ``start:stop`` of a length-``n`` vector owned by ``rank``."""

    rank: int
    start: int
    stop: int
    n: int

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def s(self) -> int:
        return self.start

    @property
    def e(self) -> int:
        # inclusive end, -1 + start for an empty shard
        return self.stop - 1

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


def make_shards(n: int, size: int) -> list[Shard]:
    """Split ``0..n-1`` into ``size`` shards of ``ceil(n/size)`` rows; the last rank takes the rest.

    When ``size`` does not divide ``n`` well the trailing ranks can end up
    with empty shards.
    """
    if n < 1 or size < 1:
        raise ValueError(f"need n >= 1 and size >= 1, got n={n}, size={size}")
    q = -(-n // size)
    shards = []
    for r in range(size):
        start = min(r * q, n)
        stop = n if r == size - 1 else min((r + 1) * q, n)
        shards.append(Shard(r, start, stop, n))
    return shards


def split(v, shards: list[Shard]) -> list[np.ndarray]:
    v = np.asarray(v, dtype=np.float64)
    return [v[s.slice].copy() for s in shards]


@dataclass(frozen=True)
class LedgerEvent:
    event_index: int
    op: str
    floats: int
    rank: int
    sent: int
    received: int
    tag: str


LEDGER_COLUMNS = ("event_index", "op", "floats", "rank", "sent", "received", "tag")


class CommLedger:
    """Append-only record of completed collective rounds, one row per rank."""

    def __init__(self):
        self._events: list[LedgerEvent] = []
        self._lock = threading.Lock()

    def extend(self, events):
        with self._lock:
            self._events.extend(events)

    def next_base(self) -> int:
        # event indices keep increasing across successive group runs
        with self._lock:
            if self._events:
                return self._events[-1].event_index + 1
            return 0

    @property
    def events(self) -> list[LedgerEvent]:
        with self._lock:
            return list(self._events)

    def __len__(self):
        return len(self._events)

    def count(self, op: str | None = None, tag: str | None = None, rank: int | None = 0) -> int:
        return sum(
            1
            for ev in self.events
            if (op is None or ev.op == op)
            and (tag is None or ev.tag == tag)
            and (rank is None or ev.rank == rank)
        )

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LEDGER_COLUMNS)
            for ev in self.events:
                writer.writerow([getattr(ev, c) for c in LEDGER_COLUMNS])

    @classmethod
    def read_csv(cls, path) -> "CommLedger":
        ledger = cls()
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        ledger.extend(
            LedgerEvent(
                int(r["event_index"]),
                r["op"],
                int(r["floats"]),
                int(r["rank"]),
                int(r["sent"]),
                int(r["received"]),
                r["tag"],
            )
            for r in rows
        )
        return ledger


class _PeerFailure(RuntimeError):
    pass


@dataclass
class _Round:
    op: str
    tag: str
    payloads: list
    arrived: int = 0
    done: bool = False
    result: Any = None
    error: BaseException | None = None
    ops_seen: set = field(default_factory=set)
    volumes: list = field(default_factory=list)


class WorkerGroup:
    """A fixed set of ``size`` simulated workers.

    Parameters
    ----------
    size : int
        Number of workers ``C``.
    backend : {"threads", "cooperative"}
    schedule_seed : int or None
        Randomizes the interleaving of ranks. ``None`` gives the plain
        round-robin order (cooperative) or no jitter (threads).
    timeout : float
        Seconds a thread-backend rank waits in a collective before raising
        :class:`DeadlockError`.
    ledger : CommLedger, optional
        Shared ledger; a fresh one is created when omitted.
    """

    def __init__(self, size: int, backend: str = "threads", schedule_seed=None, timeout: float = 30.0, ledger=None):
        if size < 1:
            raise ValueError(f"group size must be positive, got {size}")
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
        self.size = size
        self.backend = backend
        self.schedule_seed = schedule_seed
        self.timeout = timeout
        self.ledger = ledger if ledger is not None else CommLedger()

    def run(self, fn: Callable, *args, **kwargs) -> list:
        """Call ``fn(comm, *args, **kwargs)`` on every rank and return the per-rank results."""
        session = _Session(self)
        return session.run(fn, args, kwargs)


class _Session:
    def __init__(self, group: WorkerGroup):
        self.group = group
        self.size = group.size
        self.cond = threading.Condition()
        self.rounds: dict[int, _Round] = {}
        self.next_round = [0] * self.size
        self.base = group.ledger.next_base()
        self.failed: BaseException | None = None
        self.cooperative = group.backend == "cooperative"
        seed = group.schedule_seed
        self.sched_rng = random.Random(seed) if seed is not None else None
        self.jitter = [
            random.Random(seed * 7919 + r) if (seed is not None and not self.cooperative) else None
            for r in range(self.size)
        ]
        # cooperative scheduling state
        self.current = 0
        self.finished = [False] * self.size
        self.waiting_on: list[int | None] = [None] * self.size

    # -- lifecycle -----------------------------------------------------------------
    def run(self, fn, args, kwargs):
        results = [None] * self.size
        errors: list[BaseException | None] = [None] * self.size

        def body(rank):
            comm = Communicator(self, rank)
            try:
                if self.cooperative:
                    self._wait_turn(rank)
                results[rank] = fn(comm, *args, **kwargs)
            except BaseException as exc:  # noqa: BLE001 - re-raised in the caller
                errors[rank] = exc
                with self.cond:
                    if self.failed is None and not isinstance(exc, _PeerFailure):
                        self.failed = exc
                    self.cond.notify_all()
            finally:
                if self.cooperative:
                    with self.cond:
                        self.finished[rank] = True
                        self._schedule_next(rank)

        if self.size == 1 and not self.cooperative:
            body(0)
        else:
            threads = [threading.Thread(target=body, args=(r,), daemon=True) for r in range(self.size)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        if self.failed is not None:
            raise self.failed
        for exc in errors:
            if exc is not None:
                raise exc
        return results

    # -- cooperative scheduler -----------------------------------------------------
    def _runnable(self, rank):
        if self.finished[rank]:
            return False
        r = self.waiting_on[rank]
        return r is None or self.rounds[r].done

    def _schedule_next(self, rank):
        # caller holds self.cond
        candidates = [r for r in range(self.size) if self._runnable(r)]
        if not candidates:
            if not all(self.finished) and self.failed is None:
                stuck = [r for r in range(self.size) if not self.finished[r]]
                self.failed = DeadlockError(f"ranks {stuck} are blocked in a collective that can never complete")
            self.current = None
        elif self.sched_rng is not None:
            self.current = self.sched_rng.choice(candidates)
        else:
            later = [r for r in candidates if r > rank]
            self.current = later[0] if later else candidates[0]
        self.cond.notify_all()

    def _wait_turn(self, rank):
        with self.cond:
            while self.current != rank:
                if self.failed is not None:
                    raise _PeerFailure("another rank failed")
                self.cond.wait()

    # -- rendezvous ----------------------------------------------------------------
    def collective(self, rank, op, tag, payload, combine, volume):
        jitter = self.jitter[rank]
        if jitter is not None:
            time.sleep(jitter.random() * 5e-4)
        with self.cond:
            if self.failed is not None:
                raise _PeerFailure("another rank failed")
            idx = self.next_round[rank]
            self.next_round[rank] += 1
            rnd = self.rounds.get(idx)
            if rnd is None:
                rnd = self.rounds[idx] = _Round(op, tag, [None] * self.size)
            rnd.ops_seen.add(op)
            rnd.payloads[rank] = payload
            rnd.arrived += 1
            if rnd.arrived == self.size:
                self._complete(idx, rnd, combine, volume)
                self.cond.notify_all()
            if self.cooperative:
                self.waiting_on[rank] = idx
                self._schedule_next(rank)
                while self.current != rank:
                    if self.failed is not None:
                        raise _PeerFailure("another rank failed")
                    self.cond.wait()
                self.waiting_on[rank] = None
            else:
                deadline = time.monotonic() + self.group.timeout
                while not rnd.done:
                    if self.failed is not None:
                        raise _PeerFailure("another rank failed")
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        exc = DeadlockError(
                            f"rank {rank} timed out in {op} round {idx}: {rnd.arrived}/{self.size} ranks arrived"
                        )
                        self.failed = exc
                        self.cond.notify_all()
                        raise exc
                    self.cond.wait(remaining)
            if rnd.error is not None:
                raise rnd.error
            result, vol = rnd.result, rnd.volumes[rank]
        return _copy(result), vol

    def _complete(self, idx, rnd, combine, volume):
        if len(rnd.ops_seen) > 1:
            rnd.error = RuntimeError(f"ranks entered different collectives in round {idx}: {sorted(rnd.ops_seen)}")
        else:
            try:
                rnd.result = combine(rnd.payloads)
                events = []
                for r in range(self.size):
                    floats, sent, received = volume(rnd.payloads, r)
                    rnd.volumes.append((floats, sent, received))
                    events.append(LedgerEvent(self.base + idx, rnd.op, floats, r, sent, received, rnd.tag))
                self.group.ledger.extend(events)
            except BaseException as exc:  # noqa: BLE001 - delivered to every rank
                rnd.error = exc
        rnd.payloads = [None] * self.size
        rnd.done = True


def _copy(value):
    if isinstance(value, np.ndarray):
        return value.copy(order="K")
    if isinstance(value, list):
        return list(value)
    return value


def _length(x) -> int:
    return int(np.asarray(x).size)


class Communicator:
    """Per-rank handle on a running :class:`WorkerGroup`."""

    def __init__(self, session: _Session, rank: int):
        self._session = session
        self.rank = rank
        self.size = session.size
        # running totals for this rank: collective calls, floats sent, floats received
        self.calls = 0
        self.sent = 0
        self.received = 0

    def _call(self, op, tag, payload, combine, volume):
        result, (_, sent, received) = self._session.collective(self.rank, op, tag, payload, combine, volume)
        self.calls += 1
        self.sent += sent
        self.received += received
        return result

    def all_gather(self, local, shard: Shard | None = None, tag: str = "") -> np.ndarray:
        """Concatenate every rank's ``local`` vector in rank order.

        2-D payloads are stacked along rows, which is how row shards of a tall
        matrix are reassembled.
        """
        local = np.asarray(local, dtype=np.float64)
        if shard is not None and local.shape[0] != shard.size:
            raise DimensionError(f"rank {self.rank}: shard holds {shard.size} rows, got {local.shape[0]}")
        size = self.size

        def combine(payloads):
            tails = {p.shape[1:] for p in payloads}
            if len(tails) != 1:
                raise DimensionError(f"all_gather payloads disagree on trailing shape: {sorted(tails)}")
            return np.concatenate(payloads, axis=0)

        def volume(payloads, r):
            total = sum(_length(p) for p in payloads)
            mine = _length(payloads[r])
            return total, mine * (size - 1), total - mine

        return self._call("all_gather", tag, local, combine, volume)

    def all_reduce_sum(self, local, tag: str = "") -> np.ndarray:
        """Elementwise sum over ranks, accumulated in ascending rank order."""
        local = np.asarray(local, dtype=np.float64)
        size = self.size

        def combine(payloads):
            shapes = {p.shape for p in payloads}
            if len(shapes) != 1:
                raise DimensionError(f"all_reduce payload shapes differ across ranks: {sorted(shapes)}")
            acc = payloads[0].copy()
            for p in payloads[1:]:
                acc = acc + p
            return acc

        def volume(payloads, r):
            n = _length(payloads[r])
            return n, n * (size - 1), n * (size - 1)

        return self._call("all_reduce", tag, local, combine, volume)

    def all_reduce_exact(self, expansions, tag: str = "") -> np.ndarray:
        """Correctly rounded sum over ranks of per-entry floating-point expansions.

        ``expansions`` has one row per reduced entry; each row is a list of
        non-overlapping partial sums (zero padded). The ledger counts one
        float per row, the logical payload of the reduction.
        """
        local = np.asarray(expansions, dtype=np.float64)
        if local.ndim != 2:
            raise DimensionError(f"expansions must be 2-D, got shape {local.shape}")
        size = self.size

        def combine(payloads):
            rows = {p.shape[0] for p in payloads}
            if len(rows) != 1:
                raise DimensionError(f"all_reduce payload lengths differ across ranks: {sorted(rows)}")
            return sum_expansions(payloads)

        def volume(payloads, r):
            n = payloads[r].shape[0]
            return n, n * (size - 1), n * (size - 1)

        return self._call("all_reduce", tag, local, combine, volume)

    def broadcast(self, payload, root: int = 0, tag: str = ""):
        """Every rank receives a copy of ``root``'s payload (vector or matrix)."""
        if not 0 <= root < self.size:
            raise ValueError(f"broadcast root {root} outside 0..{self.size - 1}")
        if self.rank == root:
            payload = np.asarray(payload, dtype=np.float64)
        size = self.size

        def combine(payloads):
            return payloads[root]

        def volume(payloads, r):
            n = _length(payloads[root])
            if r == root:
                return n, n * (size - 1), 0
            return n, 0, n

        return self._call("broadcast", tag, payload if self.rank == root else None, combine, volume)

    def exchange(self, obj, tag: str = "check") -> list:
        """Gather one small Python object (a hash, a flag) from every rank."""
        size = self.size

        def combine(payloads):
            return list(payloads)

        def volume(payloads, r):
            return 1, size - 1, size - 1

        return self._call("check", tag, obj, combine, volume)
