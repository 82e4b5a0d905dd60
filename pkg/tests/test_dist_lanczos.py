import numpy as np
import pytest

from dho2.accounting import AllocationTracker
from dho2.collectives import BACKENDS, WorkerGroup, make_shards
from dho2.dist_lanczos import gather_basis, lanczos_distributed, run_distributed_lanczos
from dho2.exceptions import DivergenceError
from dho2.lanczos import extract_ese, lanczos_single

from conftest import random_symmetric


def _single(H, m, k, l, seed=0):
    run = lanczos_single(m, lambda v: H @ v, H.shape[0], seed=seed)
    return run, extract_ese(run, k, l)


@pytest.mark.parametrize("C", [1, 2, 3, 4, 5])
def test_bitwise_equal_to_single_device(C):
    H, _ = random_symmetric(47, seed=C)
    ref, ref_ese = _single(H, 16, 3, 1)
    out = run_distributed_lanczos(WorkerGroup(C), 16, lambda v: H @ v, 47, k=3, l=1)
    for state, ese in out:
        assert state.B.tobytes() == ref.B.tobytes()
        assert np.array_equal(ese.eigvals, ref_ese.eigvals)
        assert np.array_equal(ese.eigvecs, ref_ese.eigvecs)
    assert np.array_equal(gather_basis([s for s, _ in out]), ref.D)


def test_diag_one_to_eight_on_two_workers():
    lam = np.arange(1.0, 9.0)
    out = run_distributed_lanczos(WorkerGroup(2), 8, lambda v: lam * v, 8, k=2, l=2)
    _, ese = out[0]
    assert np.allclose(ese.eigvals, [8, 7, 1, 2], atol=1e-12)
    assert np.allclose(np.abs(ese.eigvecs[[7, 6, 0, 1], range(4)]), 1.0, atol=1e-10)


def test_basis_is_orthonormal_with_uneven_shards():
    H, _ = random_symmetric(50, seed=4)
    out = run_distributed_lanczos(WorkerGroup(5, backend="cooperative"), 20, lambda v: H @ v, 50)
    D = gather_basis([s for s, _ in out])
    assert np.allclose(D.T @ D, np.eye(21), atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_breakdown_is_shared(backend):
    out = run_distributed_lanczos(WorkerGroup(3, backend=backend), 6, lambda v: v.copy(), 12, k=1)
    assert all(s.breakdown and s.size == 1 for s, _ in out)
    assert out[0][1].eigvals.tolist() == [pytest.approx(1.0)]


def test_seed_mismatch_is_detected():
    shards = make_shards(10, 2)

    def fn(comm):
        return lanczos_distributed(comm, 4, lambda v: 2 * v, shards[comm.rank], seed=comm.rank)

    with pytest.raises(DivergenceError, match="seed"):
        WorkerGroup(2).run(fn)


def test_divergent_operator_is_detected():
    H, _ = random_symmetric(12, seed=0)
    shards = make_shards(12, 3)

    def fn(comm):
        bump = 1e-9 * comm.rank
        return lanczos_distributed(comm, 5, lambda v: H @ v + bump * v, shards[comm.rank])

    with pytest.raises(DivergenceError):
        WorkerGroup(3).run(fn)


@pytest.mark.parametrize("C", [1, 2, 3, 4, 8])
def test_d_shard_slots(C):
    n, m = 101, 10
    tracker = AllocationTracker()
    H, _ = random_symmetric(n, seed=1)
    run_distributed_lanczos(WorkerGroup(C), m, lambda v: H @ v, n, tracker=tracker)
    expected = [s.size * (m + 1) for s in make_shards(n, C)]
    assert [tracker.peak("D_shard", r) for r in range(C)] == expected
    assert tracker.peak("D_shard") == -(-n // C) * (m + 1)


def test_ledger_per_iteration():
    n, m, C = 30, 7, 3
    group = WorkerGroup(C)
    H = np.diag(np.linspace(1, 2, n))
    run_distributed_lanczos(group, m, lambda v: H @ v, n, k=2, check=False)
    led = group.ledger
    assert led.count("all_gather", "lanczos") == m
    assert led.count("all_reduce", "lanczos") == 2 * m
    assert led.count("all_gather", "ese") == 1
    assert [ev.floats for ev in led.events if ev.op == "all_gather" and ev.tag == "ese" and ev.rank == 0] == [2 * n]
