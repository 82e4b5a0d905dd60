"""Small dense linear algebra kernels shared by every other module.

Vectors are 1-D ``float64`` arrays. Tall matrices (``n`` rows, a handful of
columns) are 2-D ``float64`` arrays in Fortran order so column access is a
contiguous slice.

Reductions are *correctly rounded*: a dot product is evaluated as the exact
sum of error-free products, rounded once. The result therefore does not depend
on how the operands are split across workers, which is what lets a sharded
computation reproduce the single-device one bit for bit. Partial sums that have
to travel between workers are carried as short non-overlapping expansions (see
:func:`dot_expansion`) and combined with :func:`sum_expansions`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .exceptions import DimensionError, NumericError

_SPLITTER = 134217729.0  # 2**27 + 1, Dekker split constant for binary64
_MAX_TERMS = 40


def as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def zeros_tall(rows: int, cols: int) -> np.ndarray:
    return np.zeros((rows, cols), dtype=np.float64, order="F")


def _two_product(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # p + e == a * b exactly (barring overflow / gradual underflow);
    # overflow yields inf/nan terms, which callers treat as non-finite results
    with np.errstate(over="ignore", invalid="ignore"):
        p = a * b
        ca = _SPLITTER * a
        a_hi = ca - (ca - a)
        a_lo = a - a_hi
        cb = _SPLITTER * b
        b_hi = cb - (cb - b)
        b_lo = b - b_hi
        e = ((a_hi * b_hi - p) + a_hi * b_lo + a_lo * b_hi) + a_lo * b_lo
    return p, e


def _product_terms(a: np.ndarray, b: np.ndarray) -> list[float]:
    p, e = _two_product(a, b)
    return np.concatenate((p, e)).tolist()


def _expand(terms: list[float]) -> list[float]:
    out: list[float] = []
    s = math.fsum(terms)
    while s != 0.0 and len(out) < _MAX_TERMS:
        out.append(s)
        s = math.fsum(terms + [-t for t in out])
    return out


def dot(a, b) -> float:
    """Correctly rounded inner product of two equal-length vectors."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return math.fsum(_product_terms(a, b))


def dot_expansion(a, b) -> list[float]:
    """Exact value of ``a . b`` as a list of non-overlapping floats.

    The first entry is the correctly rounded dot product; the rest carry the
    rounding residue, so ``math.fsum`` over the concatenated expansions of any
    partition of the index range equals :func:`dot` on the whole vectors.
    """
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return _expand(_product_terms(a, b))


def _column_terms(D: np.ndarray, h, cols: int | None) -> list[list[float]]:
    h = as_vector(h)
    if D.ndim != 2 or D.shape[0] != h.shape[0]:
        raise DimensionError(f"row mismatch: {D.shape} vs {h.shape[0]}")
    cols = D.shape[1] if cols is None else cols
    p, e = _two_product(D[:, :cols], h[:, None])
    return np.concatenate((p, e), axis=0).T.tolist()


def gram_dots(D: np.ndarray, h, cols: int | None = None) -> np.ndarray:
    """Correctly rounded ``D[:, :cols]^T h``; entry ``j`` equals ``dot(D[:, j], h)``."""
    return np.array([math.fsum(t) for t in _column_terms(D, h, cols)], dtype=np.float64)


def gram_expansions(D: np.ndarray, h: np.ndarray, cols: int | None = None) -> np.ndarray:
    """Expansions of ``D[:, j] . h`` for the first ``cols`` columns, padded to a 2-D array."""
    rows = [_expand(t) for t in _column_terms(D, h, cols)]
    cols = len(rows)
    width = max((len(r) for r in rows), default=0)
    out = np.zeros((cols, max(width, 1)), dtype=np.float64)
    for j, r in enumerate(rows):
        out[j, : len(r)] = r
    return out


def sum_expansions(parts) -> np.ndarray:
    """Row-wise correctly rounded sum of several padded expansion arrays."""
    parts = [np.asarray(p, dtype=np.float64) for p in parts]
    stacked = np.concatenate(parts, axis=1)
    return np.array([math.fsum(row) for row in stacked.tolist()], dtype=np.float64)


def norm(x) -> float:
    return math.sqrt(dot(x, x))


def combine_columns(D: np.ndarray, coef: np.ndarray, cols: int | None = None) -> np.ndarray:
    """``D[:, :cols] @ coef`` accumulated column by column.

    Each output row sees the same sequence of roundings no matter how many
    rows ``D`` has, so a row slice of the result equals the result on a row
    slice of ``D``.
    """
    cols = len(coef) if cols is None else cols
    out = np.zeros(D.shape[0], dtype=np.float64)
    for j in range(cols):
        out += D[:, j] * coef[j]
    return out


def project_out(h, D: np.ndarray, active_cols: int) -> np.ndarray:
    """Remove from ``h`` its components along the first ``active_cols`` columns of ``D``."""
    h = as_vector(h)
    if D.ndim != 2 or D.shape[0] != h.shape[0]:
        raise DimensionError(f"cannot project a length-{h.shape[0]} vector on {D.shape}")
    if not 0 <= active_cols <= D.shape[1]:
        raise DimensionError(f"active_cols={active_cols} exceeds {D.shape[1]} columns")
    if active_cols == 0:
        return h.copy()
    coef = gram_dots(D, h, active_cols)
    return h - combine_columns(D, coef, active_cols)


@dataclass(frozen=True)
class TridiagMatrix:
    """Symmetric tridiagonal matrix stored as its diagonal and one off-diagonal."""

    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.diag, dtype=np.float64)
        e = np.asarray(self.offdiag, dtype=np.float64)
        if d.ndim != 1 or d.size < 1:
            raise DimensionError("diagonal must be a non-empty vector")
        if e.shape != (d.size - 1,):
            raise DimensionError(f"off-diagonal needs length {d.size - 1}, got {e.shape}")
        object.__setattr__(self, "diag", d)
        object.__setattr__(self, "offdiag", e)

    @property
    def dim(self) -> int:
        return self.diag.size

    def leading(self, size: int) -> "TridiagMatrix":
        if not 1 <= size <= self.dim:
            raise DimensionError(f"leading block {size} outside 1..{self.dim}")
        return TridiagMatrix(self.diag[:size].copy(), self.offdiag[: size - 1].copy())

    def to_dense(self) -> np.ndarray:
        out = np.diag(self.diag)
        if self.dim > 1:
            idx = np.arange(self.dim - 1)
            out[idx + 1, idx] = self.offdiag
            out[idx, idx + 1] = self.offdiag
        return out

    def tobytes(self) -> bytes:
        return self.diag.tobytes() + self.offdiag.tobytes()


def tridiag_eig(B: TridiagMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of ``B``."""
    if not (np.all(np.isfinite(B.diag)) and np.all(np.isfinite(B.offdiag))):
        raise NumericError("tridiagonal matrix has non-finite entries")
    if B.dim == 1:
        return B.diag.copy(), np.ones((1, 1), order="F")
    u, U = eigh_tridiagonal(B.diag, B.offdiag)
    return u, np.asfortranarray(U)
