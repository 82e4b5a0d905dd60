"""Lanczos tridiagonalization and extreme-spectrum extraction on one device.

The iteration keeps every basis vector and orthogonalizes each new Krylov
vector against all of them (classical Gram-Schmidt, repeated once when the
projection cancels more than ``1 - 1/sqrt(2)`` of the norm). The distributed
variant in :mod:`dho2.dist_lanczos` performs the same arithmetic on row
shards and reproduces these results bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import NumericError
from .linalg import TridiagMatrix, combine_columns, dot, gram_dots, norm, tridiag_eig, zeros_tall

BREAKDOWN_TOL = 1e-10
REORTH_RATIO = 1.0 / math.sqrt(2.0)


def lanczos_budget(k: int, l: int, n: int) -> int:
    """Iteration count ``min(n, max(4(k+l), ceil(2 ln n)))``."""
    if k < 0 or l < 0 or k + l < 1:
        raise ValueError(f"need k, l >= 0 and k + l >= 1, got k={k}, l={l}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if k + l > n:
        raise ValueError(f"cannot extract k + l = {k + l} eigenpairs from an n = {n} operator")
    return min(n, max(4 * (k + l), math.ceil(2.0 * math.log(n))))


def starting_vector(n: int, seed: int) -> np.ndarray:
    """Seeded standard-normal vector scaled to unit length."""
    v = np.random.default_rng(seed).standard_normal(n)
    return v / norm(v)


@dataclass
class LanczosResult:
    """Basis ``D`` and tridiagonal ``B`` after ``size`` completed iterations.

    Without breakdown ``D`` has ``m + 1`` columns and ``B`` dimension
    ``m + 1``; the trailing column and the last coupling are kept but only
    the leading ``size x size`` block of ``B`` is eigendecomposed. On
    breakdown both are truncated to ``size``.
    """

    D: np.ndarray
    B: TridiagMatrix
    size: int
    m: int
    breakdown: bool = False

    @property
    def basis(self) -> np.ndarray:
        return self.D[:, : self.size]


@dataclass
class EseResult:
    """Extreme-spectrum estimate: ``k`` largest then ``l`` smallest Ritz pairs."""

    eigvals: np.ndarray
    eigvecs: np.ndarray
    k: int
    l: int

    @property
    def n(self) -> int:
        return self.eigvecs.shape[0]

    @property
    def rank(self) -> int:
        return self.eigvals.size


def _check_finite(h, i):
    if not np.all(np.isfinite(h)):
        raise NumericError(f"Hessian-vector product returned non-finite values at Lanczos step {i}")


def lanczos_single(m: int, hvp: Callable[[np.ndarray], np.ndarray], n: int, seed: int = 0, reorth: bool = True) -> LanczosResult:
    """Run ``m`` Lanczos steps of the symmetric operator ``hvp`` on ``R^n``.

    Stops early, truncating the output, when the new residual norm falls
    below ``1e-10`` times ``||hvp(v_i)||`` (an invariant subspace was found).
    ``reorth=False`` disables the second Gram-Schmidt pass.
    """
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    D = zeros_tall(n, m + 1)
    diag = np.zeros(m + 1)
    off = np.zeros(m)
    D[:, 0] = starting_vector(n, seed)
    size, broke = m, False
    for i in range(m):
        v = D[:, i]
        h = np.asarray(hvp(v), dtype=np.float64)
        _check_finite(h, i)
        hnorm = norm(h)
        diag[i] = dot(h, v)
        for _ in range(2 if reorth else 1):
            coef = gram_dots(D, h, i + 1)
            h = h - combine_columns(D, coef, i + 1)
            beta = norm(h)
            if beta >= REORTH_RATIO * hnorm:
                break
        if beta <= BREAKDOWN_TOL * hnorm:
            size, broke = i + 1, True
            break
        off[i] = beta
        D[:, i + 1] = h / beta
    if broke:
        return LanczosResult(np.asfortranarray(D[:, :size]), TridiagMatrix(diag[:size], off[: size - 1]), size, m, True)
    return LanczosResult(D, TridiagMatrix(diag, off), size, m, False)


def select_extremes(u: np.ndarray, k: int, l: int) -> list[int]:
    """Indices into ascending ``u``: the ``k`` largest (descending), then the ``l`` smallest."""
    size = u.size
    if k < 0 or l < 0 or k + l > size:
        raise ValueError(f"cannot select k={k} largest and l={l} smallest out of {size} Ritz values")
    return list(range(size - 1, size - 1 - k, -1)) + list(range(l))


def normalize_signs(V: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Flip columns so the first component above ``rel_tol * max|col|`` is nonnegative."""
    V = np.array(V, dtype=np.float64, order="F")
    for c in range(V.shape[1]):
        col = V[:, c]
        scale = np.max(np.abs(col)) if col.size else 0.0
        if scale == 0.0:
            continue
        first = np.flatnonzero(np.abs(col) > rel_tol * scale)[0]
        if col[first] < 0:
            V[:, c] = -col
    return V


def ritz_vectors(D: np.ndarray, U: np.ndarray, size: int, sel) -> np.ndarray:
    Z = zeros_tall(D.shape[0], len(sel))
    for c, j in enumerate(sel):
        Z[:, c] = combine_columns(D, U[:, j], size)
    return Z


def extract_ese(run: LanczosResult, k: int, l: int) -> EseResult:
    """Ritz pairs for the ``k`` largest and ``l`` smallest eigenvalues of the leading block."""
    if k + l > run.size:
        raise ValueError(f"k + l = {k + l} exceeds the {run.size} completed Lanczos steps")
    u, U = tridiag_eig(run.B.leading(run.size))
    sel = select_extremes(u, k, l)
    V = normalize_signs(ritz_vectors(run.D, U, run.size, sel))
    return EseResult(u[sel].copy(), V, k, l)


def empty_ese(n: int) -> EseResult:
    return EseResult(np.zeros(0), zeros_tall(n, 0), 0, 0)
