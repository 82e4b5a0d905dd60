"""Lanczos with the basis sharded by rows across a worker group.

Each worker keeps only ``D[s_c:e_c, :]``. Per iteration it gathers the
current basis vector, applies the (replicated) Hessian-vector product to the
full vector, and orthogonalizes its own slice using reduced projection
coefficients and a reduced squared norm. ``B`` ends up identical on every
rank. Reductions are exact, so the run matches :func:`lanczos_single` bit for
bit for any number of workers.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .accounting import AllocationTracker
from .collectives import Communicator, Shard, WorkerGroup, make_shards
from .exceptions import DivergenceError
from .lanczos import (
    BREAKDOWN_TOL,
    REORTH_RATIO,
    EseResult,
    _check_finite,
    normalize_signs,
    ritz_vectors,
    select_extremes,
    starting_vector,
)
from .linalg import TridiagMatrix, combine_columns, dot, dot_expansion, gram_expansions, norm, tridiag_eig, zeros_tall


@dataclass
class ShardedLanczosState:
    D_shard: np.ndarray
    B: TridiagMatrix
    shard: Shard
    size: int
    m: int
    breakdown: bool = False


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()


def _cross_check(comm: Communicator, digest: str, what: str):
    seen = comm.exchange(digest, tag="check")
    if len(set(seen)) != 1:
        bad = [r for r, d in enumerate(seen) if d != seen[0]]
        raise DivergenceError(f"{what} differs across ranks (ranks {bad} disagree with rank 0)")


def lanczos_distributed(
    comm: Communicator,
    m: int,
    hvp,
    shard: Shard,
    seed: int = 0,
    reorth: bool = True,
    check: bool = True,
    tracker: AllocationTracker | None = None,
) -> ShardedLanczosState:
    """One worker's part of the sharded Lanczos run; call from every rank with identical arguments."""
    n, rank = shard.n, comm.rank
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    if check:
        _cross_check(comm, _digest(np.array([seed, m, n], dtype=np.float64)), "Lanczos seed/size")
    rows = shard.size
    D = zeros_tall(rows, m + 1)
    diag = np.zeros(m + 1)
    off = np.zeros(m)
    if tracker is not None:
        tracker.allocate(rank, "D_shard", D.size)
        tracker.allocate(rank, "B", diag.size + off.size)
    D[:, 0] = starting_vector(n, seed)[shard.slice]
    size, broke = m, False
    for i in range(m):
        v = comm.all_gather(D[:, i], shard, tag="lanczos")
        h = np.asarray(hvp(v), dtype=np.float64)
        _check_finite(h, i)
        if tracker is not None and i == 0:
            tracker.allocate(rank, "v_full", n)
            tracker.allocate(rank, "h_full", n)
            tracker.allocate(rank, "h_shard", rows)
        hnorm = norm(h)
        diag[i] = dot(h, v)
        hs = h[shard.slice].copy()
        for attempt in range(2 if reorth else 1):
            tag = "lanczos" if attempt == 0 else "reorth"
            partial = np.zeros((m + 1, 1))
            if rows:
                exp = gram_expansions(D, hs, i + 1)
                partial = np.zeros((m + 1, exp.shape[1]))
                partial[: i + 1] = exp
            coef = comm.all_reduce_exact(partial, tag=tag)
            hs = hs - combine_columns(D, coef, i + 1)
            sq = comm.all_reduce_exact([dot_expansion(hs, hs) or [0.0]], tag=tag)[0]
            beta = math.sqrt(sq)
            if tracker is not None:
                tracker.add_flops(rank, "gram_schmidt", 4 * rows * (i + 1) + 2 * rows)
            if beta >= REORTH_RATIO * hnorm:
                break
        if beta <= BREAKDOWN_TOL * hnorm:
            size, broke = i + 1, True
        else:
            off[i] = beta
            D[:, i + 1] = hs / beta
        if check:
            _cross_check(comm, _digest(diag[: i + 1], off[: i + 1]), f"B after iteration {i}")
        if broke:
            break
    if tracker is not None:
        for name in ("v_full", "h_full", "h_shard"):
            tracker.release(rank, name)
    if broke:
        return ShardedLanczosState(
            np.asfortranarray(D[:, :size]), TridiagMatrix(diag[:size], off[: size - 1]), shard, size, m, True
        )
    return ShardedLanczosState(D, TridiagMatrix(diag, off), shard, size, m, False)


def extract_ese_distributed(
    comm: Communicator,
    state: ShardedLanczosState,
    k: int,
    l: int,
    check: bool = True,
    tracker: AllocationTracker | None = None,
) -> EseResult:
    """Eigendecompose the replicated ``B`` locally and assemble the full Ritz vectors on every rank."""
    if check:
        _cross_check(comm, _digest(state.B.diag, state.B.offdiag), "tridiagonal matrix B")
    if k + l > state.size:
        raise ValueError(f"k + l = {k + l} exceeds the {state.size} completed Lanczos steps")
    u, U = tridiag_eig(state.B.leading(state.size))
    sel = select_extremes(u, k, l)
    partial = ritz_vectors(state.D_shard, U, state.size, sel)
    full = comm.all_gather(partial, state.shard, tag="ese")
    if tracker is not None:
        tracker.release(comm.rank, "D_shard")
        tracker.release(comm.rank, "B")
        tracker.release(comm.rank, "V_hat")
        tracker.allocate(comm.rank, "V_hat", full.size)
    return EseResult(u[sel].copy(), normalize_signs(full), k, l)


def _worker(comm, m, hvp, shards, k, l, seed, reorth, check, tracker):
    state = lanczos_distributed(comm, m, hvp, shards[comm.rank], seed, reorth, check, tracker)
    ese = extract_ese_distributed(comm, state, k, l, check, tracker) if k + l else None
    return state, ese


def run_distributed_lanczos(
    group: WorkerGroup,
    m: int,
    hvp,
    n: int,
    k: int = 0,
    l: int = 0,
    seed: int = 0,
    reorth: bool = True,
    check: bool = True,
    tracker: AllocationTracker | None = None,
):
    """Drive a whole group; returns per-rank ``(ShardedLanczosState, EseResult or None)`` pairs."""
    shards = make_shards(n, group.size)
    return group.run(_worker, m, hvp, shards, k, l, seed, reorth, check, tracker)


def gather_basis(states: list[ShardedLanczosState]) -> np.ndarray:
    """Reassemble the global ``D`` from every rank's shard (test and report helper)."""
    return np.asfortranarray(np.vstack([s.D_shard for s in sorted(states, key=lambda s: s.shard.rank)]))
