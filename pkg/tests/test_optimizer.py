import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dho2.exceptions import NumericError
from dho2.lanczos import EseResult, extract_ese, lanczos_single
from dho2.optimizer import (
    SIGMA_PRESETS,
    AdmmState,
    BaseOptimizerState,
    FosiConfig,
    admm_deltas,
    admm_dual_update,
    admm_w_update,
    augmented_lagrangian,
    base_step,
    floor_eigvals,
    fosi_deltas,
    split_gradient,
)
from dho2.oracle import QuadraticOracle

E1 = EseResult(np.array([4.0]), np.asfortranarray([[1.0], [0.0]]), 1, 0)


def random_ese(n, r, seed):
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((n, r)))
    vals = rng.uniform(0.5, 5.0, r) * rng.choice([-1, 1], r)
    return EseResult(vals, np.asfortranarray(V), r, 0)


def test_sgd_example():
    s = BaseOptimizerState("sgd", lr=0.1)
    assert np.allclose(base_step(s, [1.0, -2.0]), [-0.1, 0.2], rtol=0, atol=1e-17)


def test_adam_first_step_by_hand():
    g = np.array([0.3, -2.0, 1e-3])
    s = BaseOptimizerState("adam", lr=0.01)
    m = 0.1 * g
    v = 0.001 * g * g
    expected = -0.01 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    assert np.allclose(s.step(g), expected, rtol=1e-15, atol=0)
    # magnitude is lr per component up to eps
    assert np.allclose(np.abs(expected), 0.01, rtol=1e-4)


def test_adam_second_step_by_hand():
    g1, g2 = np.array([1.0, -1.0]), np.array([0.5, 2.0])
    s = BaseOptimizerState("adam", lr=0.1, beta1=0.8, beta2=0.9, eps=0.0)
    s.step(g1)
    m = 0.8 * 0.2 * g1 + 0.2 * g2
    v = 0.9 * 0.1 * g1**2 + 0.1 * g2**2
    expected = -0.1 * (m / (1 - 0.64)) / np.sqrt(v / (1 - 0.81))
    assert np.allclose(s.step(g2), expected, rtol=1e-14)


def test_zero_gradient_steps():
    w = np.array([2.0, -4.0])
    for kind in ("sgd", "momentum"):
        assert not BaseOptimizerState(kind, lr=0.1).step(np.zeros(2)).any()
    s = BaseOptimizerState("adamw", lr=0.1, weight_decay=0.5)
    assert np.allclose(s.step(np.zeros(2), w), -0.1 * 0.5 * w, rtol=0, atol=1e-16)


def test_momentum_accumulates():
    s = BaseOptimizerState("momentum", lr=1.0, momentum=0.5)
    s.step([1.0])
    assert s.step([1.0]).tolist() == [-1.5]
    assert s.moment_slots == 1


def test_coupled_weight_decay_for_sgd():
    s = BaseOptimizerState("sgd", lr=1.0, weight_decay=0.1)
    assert np.allclose(s.step([0.0], [3.0]), [-0.3])


def test_base_validation():
    with pytest.raises(ValueError):
        BaseOptimizerState("lion")
    with pytest.raises(ValueError):
        BaseOptimizerState("sgd", lr=0)
    with pytest.raises(NumericError):
        BaseOptimizerState("sgd").step([np.inf])


def test_fosi_analytic_example():
    d1, d2 = fosi_deltas([4.0, 1.0], E1, None, 1.0)
    assert d1.tolist() == [-1.0, 0.0] and d2.tolist() == [0.0, 0.0]


def test_admm_analytic_example():
    d1, _ = admm_deltas([4.0, 1.0], [0.0, 0.0], E1, None, 1.0, 1.0)
    assert np.allclose(d1, [-0.8, 0.0], rtol=0, atol=1e-16)


def test_gradient_orthogonal_to_subspace():
    base = BaseOptimizerState("sgd", lr=0.5)
    g = np.array([0.0, 3.0])
    d1, d2 = fosi_deltas(g, E1, base, 1.0)
    assert not d1.any()
    assert d2.tolist() == [0.0, -1.5]
    g1, g2 = split_gradient(g, E1.eigvecs)
    assert not g1.any() and np.array_equal(g2, g)


def test_eigval_floor():
    assert floor_eigvals([1e-9, -1e-9, 3.0], 1e-6).tolist() == [1e-6, -1e-6, 3.0]
    ese = EseResult(np.array([1e-12]), np.asfortranarray([[1.0], [0.0]]), 1, 0)
    d1, _ = fosi_deltas([1.0, 0.0], ese, None, 1.0, eigval_floor=1e-3)
    assert d1.tolist() == [-1000.0, 0.0]


@pytest.mark.parametrize("rotation_seed", [0, 3, 8])
def test_newton_exactness(rotation_seed):
    n = 12
    q = QuadraticOracle(np.geomspace(1e-2, 10, n), rotation_seed)
    run = lanczos_single(n, lambda v: q.hvp(None, v), n, seed=1)
    ese = extract_ese(run, run.size, 0)
    w0 = np.random.default_rng(2).standard_normal(n)
    d1, d2 = fosi_deltas(q.grad(w0), ese, BaseOptimizerState("sgd", lr=0.1), 1.0)
    assert np.max(np.abs(w0 + d1 + d2)) <= 1e-8


@given(st.integers(3, 40), st.integers(0, 10_000), st.sampled_from(["sgd", "momentum", "adam", "adamw"]))
def test_deltas_are_orthogonal(n, seed, kind):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, n))
    ese = random_ese(n, r, seed)
    g, pi, w = rng.standard_normal((3, n))
    base = BaseOptimizerState(kind, lr=0.1, weight_decay=0.01)
    g1, g2 = split_gradient(g, ese.eigvecs)
    assert abs(g1 @ g2) <= 1e-8 * np.linalg.norm(g1) * np.linalg.norm(g2) + 1e-300
    for d1, d2 in (fosi_deltas(g, ese, base, 0.7, w), admm_deltas(g, pi, ese, base, 0.7, 0.3, w)):
        assert abs(d1 @ d2) <= 1e-8 * np.linalg.norm(d1) * np.linalg.norm(d2) + 1e-300


def test_admm_with_zero_multiplier_reduces_to_fosi():
    rng = np.random.default_rng(5)
    ese = random_ese(20, 4, 5)
    g = rng.standard_normal(20)
    a = fosi_deltas(g, ese, BaseOptimizerState("adam", lr=0.1), 0.5)
    b = admm_deltas(g, np.zeros(20), ese, BaseOptimizerState("adam", lr=0.1), 0.5, 0.0)
    for x, y in zip(a, b):
        assert np.max(np.abs(x - y)) <= 1e-12


def test_fosi_without_curvature_is_base():
    g = np.array([0.1, -0.2, 0.3])
    empty = EseResult(np.zeros(0), np.zeros((3, 0), order="F"), 0, 0)
    d1, d2 = fosi_deltas(g, empty, BaseOptimizerState("adam", lr=0.1), 1.0)
    assert not d1.any()
    assert np.array_equal(d2, BaseOptimizerState("adam", lr=0.1).step(g))


def test_admm_delta_validation():
    with pytest.raises(ValueError):
        admm_deltas([1.0, 0.0], [0.0], E1, None, 1.0, 1.0)
    with pytest.raises(ValueError):
        admm_deltas([1.0, 0.0], [0.0, 0.0], E1, None, 1.0, -1.0)
    with pytest.raises(ValueError):
        fosi_deltas([1.0, 0.0, 0.0], E1, None, 1.0)


def test_w_update_examples():
    s = AdmmState(np.zeros(3), np.zeros(3), 0.5 * np.ones(3), 0.5)
    assert admm_w_update(s).tolist() == [1.0, 1.0, 1.0]
    s = AdmmState.start([1.0, 2.0], 3.0)
    assert admm_w_update(s).tolist() == [1.0, 2.0]


def test_w_update_is_stationary():
    rng = np.random.default_rng(9)
    w_a, pi = rng.standard_normal((2, 6))
    s = AdmmState(np.zeros(6), w_a, pi, 0.7)
    w = admm_w_update(s)
    L = lambda x: augmented_lagrangian(1.23, x, w_a, pi, 0.7)
    h = 1e-6
    grad = np.array([(L(w + h * e) - L(w - h * e)) / (2 * h) for e in np.eye(6)])
    assert np.max(np.abs(grad)) <= 1e-7
    assert np.allclose(-pi - 0.7 * (w_a - w), 0.0, atol=1e-12)


def test_dual_update_examples():
    s = AdmmState(np.ones(2), np.ones(2), [0.5, -0.5], 1.0)
    assert admm_dual_update(s).tolist() == [0.5, -0.5]
    s = AdmmState(np.zeros(2), np.ones(2), np.zeros(2), 2.0)
    assert admm_dual_update(s).tolist() == [2.0, 2.0]
    assert s.residual == pytest.approx(np.sqrt(2))


def test_admm_state_validation():
    with pytest.raises(ValueError):
        AdmmState.start([1.0], 0.0)
    with pytest.raises(ValueError):
        AdmmState(np.zeros(2), np.zeros(3), np.zeros(2), 1.0)


def test_fosi_config_validation():
    assert not FosiConfig(k=0, l=0).enabled
    for bad in (dict(k=-1), dict(alpha=0), dict(refresh_interval=0), dict(eigval_floor=-1)):
        with pytest.raises(ValueError):
            FosiConfig(**bad)


def test_sigma_presets():
    assert SIGMA_PRESETS == {"resnet101": 5e-4, "vgg16": 5e-6, "resnet152": 5e-7}
