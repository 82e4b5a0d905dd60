import numpy as np
import pytest

from dho2.collectives import WorkerGroup
from dho2.exceptions import TrainingAborted
from dho2.optimizer import FosiConfig
from dho2.oracle import QuadraticOracle, generate_synthetic_dataset, mlp_oracle, outlier_spectrum
from dho2.trainers import METRIC_COLUMNS, TrainConfig, dho2_train, fosi_train, initial_point, sgd_train, train


@pytest.fixture(scope="module")
def mlp():
    data = generate_synthetic_dataset("two-gaussians", 96, seed=2)
    return mlp_oracle([2, 6, 2], "tanh", data), data


def _cfg(**kw):
    base = dict(K=3, P=2, sigma=1e-3, base="adam", lr=0.05, weight_decay=0.0, batch_size=8,
                fosi=FosiConfig(k=3, l=1, alpha=0.5, curvature_batch=48))
    base.update(kw)
    return TrainConfig(**base)


def test_metric_records(mlp):
    oracle, data = mlp
    res = dho2_train(_cfg(), oracle, data, WorkerGroup(2))
    assert len(res.metrics) == 6
    rec = res.metrics[0]
    assert set(METRIC_COLUMNS) <= set(rec)
    assert [r["outer_k"] for r in res.metrics] == [0, 0, 1, 1, 2, 2]
    assert [r["ese_refresh_flag"] for r in res.metrics] == [1, 0] * 3
    assert res.refreshes == 3 and res.metrics[-1]["step"] == 6 * 6
    assert all(r["residual_norm"] >= 0 for r in res.metrics)


@pytest.mark.parametrize("trainer", ["sgd", "fosi", "dho2"])
def test_worker_count_does_not_change_replicas(mlp, trainer):
    oracle, data = mlp
    res = train(_cfg(trainer=trainer), oracle, data, WorkerGroup(3))
    again = train(_cfg(trainer=trainer), oracle, data, WorkerGroup(3, backend="cooperative", schedule_seed=4))
    assert np.array_equal(res.w, again.w)
    assert [r["train_loss"] for r in res.metrics] == [r["train_loss"] for r in again.metrics]


def test_single_worker_distributed_equals_plain_group(mlp):
    oracle, data = mlp
    a = train(_cfg(), oracle, data, WorkerGroup(1))
    b = train(_cfg(), oracle, data, WorkerGroup(1, backend="cooperative"))
    assert np.array_equal(a.w, b.w)


def test_disabled_curvature_fosi_is_sgd(mlp):
    oracle, data = mlp
    cfg = _cfg(base="sgd", lr=0.1, fosi=FosiConfig(k=0, l=0))
    a = fosi_train(cfg, oracle, data, WorkerGroup(2))
    b = sgd_train(cfg, oracle, data, WorkerGroup(2))
    assert np.array_equal(a.w, b.w)
    assert [r["train_loss"] for r in a.metrics] == [r["train_loss"] for r in b.metrics]
    assert a.refreshes == 0


def test_sigma_zero_reduction_is_fosi(mlp):
    oracle, data = mlp
    P, rounds = 2, 6  # 96 samples, batch 8 on 2 workers
    fc = FosiConfig(k=3, l=1, alpha=0.5, curvature_batch=48, refresh_interval=P * rounds)
    red = dho2_train(_cfg(P=P, fosi=fc, sigma_zero_reduction=True), oracle, data, WorkerGroup(2))
    fos = fosi_train(_cfg(P=P, fosi=fc, epochs=3 * P), oracle, data, WorkerGroup(2))
    assert np.array_equal(red.w, fos.w)
    assert [r["train_loss"] for r in red.metrics] == [r["train_loss"] for r in fos.metrics]


def test_newton_on_full_spectrum_quadratic():
    q = QuadraticOracle(np.geomspace(0.1, 10, 10), rotation_seed=2)
    cfg = TrainConfig(trainer="fosi", epochs=1, base="sgd", lr=0.01, weight_decay=0.0,
                      fosi=FosiConfig(k=10, alpha=1.0, lanczos_iters=10))
    res = train(cfg, q, None, WorkerGroup(2), w0=np.ones(10))
    assert np.max(np.abs(res.w)) <= 1e-8


def test_dho2_beats_adam_on_quadratic():
    q = QuadraticOracle(outlier_spectrum(100, 1e4), rotation_seed=7)
    w0 = initial_point(q, 0)
    common = dict(K=300, P=4, weight_decay=0.0, loss_target=1e-6, stop_at_target=True)
    adam = train(TrainConfig(trainer="sgd", base="adam", lr=0.3, **common), q, None, WorkerGroup(2), w0)
    dho2 = train(TrainConfig(trainer="dho2", base="sgd", lr=100.0, sigma=1e-3,
                             fosi=FosiConfig(k=8, alpha=1.0), **common), q, None, WorkerGroup(2), w0)
    a, d = adam.steps_to(1e-6), dho2.steps_to(1e-6)
    assert a is not None and d is not None
    assert d <= a / 3


def test_mlp_accuracy_head_to_head():
    data = generate_synthetic_dataset("two-gaussians", 512, seed=0)
    oracle = mlp_oracle([2, 8, 2], "tanh", data)
    fc = FosiConfig(k=8, alpha=0.3, refresh_interval=4)
    common = dict(K=25, P=4, sigma=1e-3, base="adam", lr=0.1, weight_decay=0.0, fosi=fc)
    w0 = initial_point(oracle, 0)
    d = train(TrainConfig(trainer="dho2", **common), oracle, data, WorkerGroup(4), w0)
    f = train(TrainConfig(trainer="fosi", **common), oracle, data, WorkerGroup(4), w0)
    assert d.metrics[-1]["train_acc"] >= f.metrics[-1]["train_acc"] - 0.005


def test_nonfinite_loss_aborts():
    q = QuadraticOracle([1.0, 2.0])
    cfg = TrainConfig(trainer="sgd", epochs=2000, base="sgd", lr=5.0, weight_decay=0.0)
    with pytest.raises(TrainingAborted) as err:
        train(cfg, q, None, WorkerGroup(2), w0=np.ones(2))
    assert err.value.record["epoch"] > 0


def test_stop_at_target(mlp):
    oracle, data = mlp
    res = train(_cfg(trainer="sgd", loss_target=10.0, stop_at_target=True), oracle, data)
    assert len(res.metrics) == 1 and res.steps_to(10.0) == res.metrics[0]["step"]


def test_breakdown_clamps_ritz_pairs():
    q = QuadraticOracle(np.ones(20))
    cfg = TrainConfig(K=2, P=1, sigma=1e-2, base="sgd", lr=0.1, weight_decay=0.0, fosi=FosiConfig(k=4, alpha=1.0))
    res = train(cfg, q, None, WorkerGroup(2), w0=np.ones(20))
    assert res.refresh_sizes == [1, 1]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(trainer="lbfgs")
    with pytest.raises(ValueError):
        TrainConfig(K=0)
    with pytest.raises(ValueError):
        TrainConfig(sigma=0.0)
    assert TrainConfig(sigma=0.0, sigma_zero_reduction=True).total_epochs == 100
