from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dho2.exceptions import DimensionError, NumericError
from dho2.linalg import (
    TridiagMatrix,
    combine_columns,
    dot,
    dot_expansion,
    gram_dots,
    gram_expansions,
    norm,
    project_out,
    sum_expansions,
    tridiag_eig,
    zeros_tall,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def exact_dot(a, b):
    # rational arithmetic, rounded once at the end
    return float(sum((Fraction(x) * Fraction(y) for x, y in zip(a.tolist(), b.tolist())), Fraction(0)))


@st.composite
def vector_pair(draw, max_n=60):
    n = draw(st.integers(1, max_n))
    a = draw(arrays(np.float64, n, elements=finite))
    b = draw(arrays(np.float64, n, elements=finite))
    return a, b


@given(vector_pair())
def test_dot_is_correctly_rounded(pair):
    a, b = pair
    assert dot(a, b) == exact_dot(a, b)


def test_dot_survives_cancellation():
    a = np.array([1e16, 1.0, -1e16])
    b = np.ones(3)
    assert dot(a, b) == 1.0


@given(vector_pair(), st.lists(st.integers(0, 60), max_size=4))
def test_sharded_expansions_sum_to_the_same_bits(pair, cuts):
    a, b = pair
    bounds = sorted({0, a.size, *[c % (a.size + 1) for c in cuts]})
    parts = [np.array([dot_expansion(a[s:e], b[s:e]) or [0.0]]) for s, e in zip(bounds, bounds[1:])]
    width = max(p.shape[1] for p in parts)
    padded = [np.pad(p, ((0, 0), (0, width - p.shape[1]))) for p in parts]
    assert sum_expansions(padded)[0] == dot(a, b)


def test_gram_dots_match_columnwise_dot(rng):
    D = np.asfortranarray(rng.standard_normal((37, 6)))
    h = rng.standard_normal(37)
    got = gram_dots(D, h, 4)
    assert got.shape == (4,)
    for j in range(4):
        assert got[j] == dot(D[:, j], h)


def test_gram_expansions_partition_invariance(rng):
    D = np.asfortranarray(rng.standard_normal((50, 5)))
    h = rng.standard_normal(50)
    parts = [gram_expansions(D[s:e], h[s:e]) for s, e in [(0, 17), (17, 18), (18, 50)]]
    assert np.array_equal(sum_expansions(parts), gram_dots(D, h))


def test_norm_matches_exact():
    x = np.array([3.0, 4.0])
    assert norm(x) == 5.0


def test_combine_columns_row_slices_commute(rng):
    D = np.asfortranarray(rng.standard_normal((40, 7)))
    c = rng.standard_normal(7)
    full = combine_columns(D, c)
    assert np.array_equal(full[10:25], combine_columns(D[10:25], c))
    assert np.allclose(full, D @ c, rtol=0, atol=1e-12)


def test_project_out_removes_span(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((30, 4)))
    Q = np.asfortranarray(Q)
    h = rng.standard_normal(30)
    r = project_out(h, Q, 3)
    assert np.max(np.abs(Q[:, :3].T @ r)) < 1e-13
    assert np.array_equal(project_out(h, Q, 0), h)


def test_project_out_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        project_out(np.ones(3), np.ones((4, 2)), 1)
    with pytest.raises(DimensionError):
        project_out(np.ones(4), np.ones((4, 2)), 3)


def test_zeros_tall_is_fortran():
    Z = zeros_tall(5, 3)
    assert Z.flags.f_contiguous and Z.shape == (5, 3) and not Z.any()


def test_tridiag_validation():
    with pytest.raises(DimensionError):
        TridiagMatrix(np.ones(3), np.ones(3))
    with pytest.raises(DimensionError):
        TridiagMatrix(np.ones(0), np.ones(0))
    B = TridiagMatrix([1.0, 2.0, 3.0], [0.5, 0.25])
    assert B.leading(2).to_dense().tolist() == [[1.0, 0.5], [0.5, 2.0]]
    with pytest.raises(DimensionError):
        B.leading(4)


@given(st.integers(1, 25), st.integers(0, 10_000))
def test_tridiag_eig_against_dense_solver(n, seed):
    rng = np.random.default_rng(seed)
    B = TridiagMatrix(rng.standard_normal(n), rng.standard_normal(n - 1))
    u, U = tridiag_eig(B)
    A = B.to_dense()
    assert np.allclose(u, np.linalg.eigvalsh(A), atol=1e-12 * max(1.0, np.abs(u).max()))
    assert np.all(np.diff(u) >= 0)
    assert np.allclose(U.T @ U, np.eye(n), atol=1e-12)
    assert np.allclose(A @ U, U * u, atol=1e-11)


def test_tridiag_eig_rejects_nan():
    with pytest.raises(NumericError):
        tridiag_eig(TridiagMatrix([1.0, np.nan], [0.0]))
