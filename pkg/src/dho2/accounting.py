"""Exact float-slot and flop bookkeeping for the simulated workers."""

from __future__ import annotations

import threading
from collections import defaultdict
from dataclasses import dataclass


class AllocationTracker:
    """Counts float slots per named buffer, per rank.

    Buffers are registered when a worker allocates them and released when it
    drops them; ``peak`` keeps the high-water mark of each name. Counts are
    exact integers taken from the actual array shapes, not estimates.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._live = defaultdict(int)
        self._peak = defaultdict(int)
        self._peak_total = defaultdict(int)
        self._flops = defaultdict(int)

    def allocate(self, rank: int, name: str, floats: int):
        with self._lock:
            self._live[rank, name] += int(floats)
            self._peak[rank, name] = max(self._peak[rank, name], self._live[rank, name])
            total = sum(v for (r, _), v in self._live.items() if r == rank)
            self._peak_total[rank] = max(self._peak_total[rank], total)

    def release(self, rank: int, name: str):
        with self._lock:
            self._live[rank, name] = 0

    def add_flops(self, rank: int, name: str, flops: int):
        with self._lock:
            self._flops[rank, name] += int(flops)

    def peak(self, name: str, rank: int | None = None) -> int:
        """Peak slots of ``name`` on ``rank``, or the max over ranks."""
        with self._lock:
            if rank is not None:
                return self._peak.get((rank, name), 0)
            return max((v for (r, k), v in self._peak.items() if k == name), default=0)

    def peak_total(self, rank: int) -> int:
        with self._lock:
            return self._peak_total.get(rank, 0)

    def flops(self, name: str, rank: int | None = None) -> int:
        with self._lock:
            if rank is not None:
                return self._flops.get((rank, name), 0)
            return max((v for (r, k), v in self._flops.items() if k == name), default=0)

    def ranks(self) -> list[int]:
        with self._lock:
            return sorted({r for r, _ in self._peak})

    def names(self) -> list[str]:
        with self._lock:
            return sorted({k for _, k in self._peak} | {k for _, k in self._flops})

    def rows(self):
        """One ``(rank, name, peak_slots, flops)`` tuple per tracked buffer, sorted."""
        with self._lock:
            keys = sorted(set(self._peak) | set(self._flops))
            return [(r, k, self._peak.get((r, k), 0), self._flops.get((r, k), 0)) for r, k in keys]


@dataclass(frozen=True)
class CostModel:
    """Deterministic time model for one simulated worker.

    Compute time is ``flops / flop_rate``; communication time charges every
    received float 8 bytes over ``bandwidth`` plus ``latency`` per collective
    call. Used wherever a wall-clock figure must be reproducible.
    """

    flop_rate: float = 1e10
    bandwidth: float = 1.25e9
    latency: float = 5e-6

    def ms(self, flops: int, floats_received: int, calls: int) -> float:
        seconds = flops / self.flop_rate + 8.0 * floats_received / self.bandwidth + calls * self.latency
        return 1e3 * seconds
