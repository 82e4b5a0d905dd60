"""Update rules: base first-order optimizers, the hybrid-order deltas and the ADMM pieces.

The hybrid step splits a gradient ``g`` into its component inside the span
of the estimated extreme eigenvectors ``V`` and the orthogonal remainder.
The first part takes a scaled Newton step with the Ritz values; the second
goes through the base optimizer and is projected back onto the complement so
both deltas stay orthogonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericError
from .lanczos import EseResult
from .linalg import as_vector, combine_columns, dot, gram_dots, project_out

BASE_KINDS = ("sgd", "momentum", "adam", "adamw")

# sigma presets per model from the reference experiments
SIGMA_PRESETS = {"resnet101": 5e-4, "vgg16": 5e-6, "resnet152": 5e-7}


@dataclass
class BaseOptimizerState:
    """Per-worker state of a first-order optimizer returning descent vectors.

    ``weight_decay`` is decoupled for ``adamw`` and added to the gradient
    (plain L2) for the other kinds.
    """

    kind: str = "adamw"
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    step_count: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in BASE_KINDS:
            raise ValueError(f"unknown base optimizer {self.kind!r}; expected one of {BASE_KINDS}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    @property
    def moment_slots(self) -> int:
        return sum(a.size for a in (self.m, self.v) if a is not None)

    def step(self, g, w=None) -> np.ndarray:
        """Return the descent vector for gradient ``g`` and advance the state."""
        g = as_vector(g)
        if not np.all(np.isfinite(g)):
            raise NumericError("gradient has non-finite entries")
        decay = self.weight_decay and w is not None
        if decay and self.kind != "adamw":
            g = g + self.weight_decay * as_vector(w)
        self.step_count += 1
        if self.kind == "sgd":
            return -self.lr * g
        if self.m is None:
            self.m = np.zeros_like(g)
            if self.kind != "momentum":
                self.v = np.zeros_like(g)
        if self.kind == "momentum":
            self.m = self.momentum * self.m + g
            return -self.lr * self.m
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * (g * g)
        m_hat = self.m / (1.0 - self.beta1**self.step_count)
        v_hat = self.v / (1.0 - self.beta2**self.step_count)
        out = -self.lr * (m_hat / (np.sqrt(v_hat) + self.eps))
        if decay and self.kind == "adamw":
            out = out - self.lr * self.weight_decay * as_vector(w)
        return out


def base_step(state: BaseOptimizerState, g, w=None) -> np.ndarray:
    return state.step(g, w)


@dataclass
class FosiConfig:
    """Curvature settings of the hybrid step.

    ``refresh_interval`` counts optimizer iterations between curvature
    refreshes; ``None`` means once per epoch. ``lanczos_iters=None`` uses
    :func:`dho2.lanczos.lanczos_budget`.
    """

    k: int = 8
    l: int = 0
    alpha: float = 0.1
    refresh_interval: int | None = None
    curvature_batch: int = 512
    eigval_floor: float = 1e-6
    lanczos_iters: int | None = None
    reorth: bool = True

    def __post_init__(self):
        if self.k < 0 or self.l < 0:
            raise ValueError("k and l must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.refresh_interval is not None and self.refresh_interval < 1:
            raise ValueError("refresh_interval must be at least 1")
        if self.eigval_floor < 0:
            raise ValueError("eigval_floor must be nonnegative")

    @property
    def enabled(self) -> bool:
        return self.k + self.l > 0


def floor_eigvals(a, floor: float) -> np.ndarray:
    """Keep the sign, but never let a magnitude drop below ``floor``."""
    a = np.asarray(a, dtype=np.float64)
    sign = np.where(a < 0, -1.0, 1.0)
    return sign * np.maximum(np.abs(a), floor)


def split_gradient(g, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(g1, g2)`` with ``g1 = V V^T g`` and ``g2 = g - g1``."""
    g = as_vector(g)
    coef = gram_dots(V, g)
    g1 = combine_columns(V, coef, V.shape[1])
    return g1, g - g1


def _hybrid_deltas(g, ese: EseResult, base, alpha, shift, w, floor):
    V = ese.eigvecs
    coef = gram_dots(V, g)
    denom = floor_eigvals(ese.eigvals, floor)
    if shift:
        denom = floor_eigvals(denom + shift, floor)
    delta1 = -alpha * combine_columns(V, coef / denom, V.shape[1])
    rest = g - combine_columns(V, coef, V.shape[1])
    if base is None:
        return delta1, np.zeros_like(g)
    return delta1, project_out(base.step(rest, w), V, V.shape[1])


def fosi_deltas(g, ese: EseResult, base: BaseOptimizerState | None, alpha: float, w=None, eigval_floor: float = 1e-6):
    """Newton delta in the extreme subspace and projected base-optimizer delta outside it.

    ``base=None`` switches the first-order half off (its delta is zero).
    """
    g = as_vector(g)
    if g.shape[0] != ese.n:
        raise ValueError(f"gradient length {g.shape[0]} does not match eigenvectors of length {ese.n}")
    return _hybrid_deltas(g, ese, base, alpha, 0.0, w, eigval_floor)


def admm_deltas(g, pi, ese: EseResult, base, alpha: float, sigma: float, w=None, eigval_floor: float = 1e-6):
    """Hybrid deltas for the penalized subproblem: gradient ``g + pi``, curvature shifted by ``sigma``.

    ``sigma == 0`` is accepted so the rule can be compared with
    :func:`fosi_deltas`.
    """
    g = as_vector(g)
    pi = as_vector(pi)
    if g.shape != pi.shape or g.shape[0] != ese.n:
        raise ValueError("gradient, multiplier and eigenvectors must share one length")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return _hybrid_deltas(g + pi, ese, base, alpha, sigma, w, eigval_floor)


@dataclass
class AdmmState:
    w: np.ndarray
    w_a: np.ndarray
    pi: np.ndarray
    sigma: float
    k_outer: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        self.w = as_vector(self.w).copy()
        self.w_a = as_vector(self.w_a).copy()
        self.pi = as_vector(self.pi).copy()
        if not (self.w.shape == self.w_a.shape == self.pi.shape):
            raise ValueError("w, w_a and pi must have the same length")

    @classmethod
    def start(cls, w0, sigma: float) -> "AdmmState":
        w0 = as_vector(w0)
        return cls(w0, w0, np.zeros_like(w0), sigma)

    @property
    def residual(self) -> float:
        d = self.w_a - self.w
        return float(np.sqrt(dot(d, d)))


def admm_w_update(state: AdmmState) -> np.ndarray:
    """Minimize the augmented Lagrangian over ``w``: ``w = w_a + pi / sigma``."""
    state.w = state.w_a + state.pi / state.sigma
    return state.w


def admm_dual_update(state: AdmmState) -> np.ndarray:
    """Dual ascent on the multiplier: ``pi += sigma (w_a - w)``."""
    state.pi = state.pi + state.sigma * (state.w_a - state.w)
    return state.pi


def augmented_lagrangian(f_value: float, w, w_a, pi, sigma: float) -> float:
    """``f(w_a) + <w_a - w, pi> + sigma/2 ||w_a - w||^2`` given ``f_value = f(w_a)``."""
    d = as_vector(w_a) - as_vector(w)
    return f_value + dot(d, pi) + 0.5 * sigma * dot(d, d)
