"""Objective oracles (value, gradient, Hessian-vector product) and toy datasets.

Parameter layout for the MLP is fixed: layer by layer, each layer's weight
matrix (shape ``(fan_in, fan_out)``, row-major) followed by its bias. Every
``n``-vector in the package (gradients, Lanczos columns, shards) indexes into
this flat layout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DatasetParseError, DimensionError
from .linalg import as_vector, dot

DATASET_KINDS = ("two-gaussians", "concentric-rings", "linear-regression")


@dataclass(frozen=True)
class Batch:
    X: np.ndarray
    Y: np.ndarray

    def __len__(self):
        return self.X.shape[0]


@dataclass
class Dataset:
    """Samples plus the bookkeeping needed to shard them across workers.

    ``y`` holds integer class ids for classification and a ``(N, d)`` float
    matrix for regression. ``classes`` keeps the original label strings in
    id order when the data came from a file.
    """

    X: np.ndarray
    y: np.ndarray
    task: str = "classification"
    seed: int = 0
    classes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise DimensionError(f"feature matrix must be 2-D with at least one row, got {self.X.shape}")
        if self.task == "classification":
            self.y = np.asarray(self.y, dtype=np.int64)
        elif self.task == "regression":
            y = np.asarray(self.y, dtype=np.float64)
            self.y = y.reshape(-1, 1) if y.ndim == 1 else y
        else:
            raise ValueError(f"unknown task {self.task!r}")
        if self.y.shape[0] != self.X.shape[0]:
            raise DimensionError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} labels")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features must be finite")

    def __len__(self):
        return self.X.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        if self.task != "classification":
            return 0
        return max(len(self.classes), int(self.y.max()) + 1)

    @property
    def output_dim(self) -> int:
        return self.n_classes if self.task == "classification" else self.y.shape[1]

    def batch(self, idx=None) -> Batch:
        if idx is None:
            return Batch(self.X, self.y)
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(self.X[idx], self.y[idx])

    def subset(self, limit: int) -> Batch:
        """First ``limit`` samples of a seeded permutation (the curvature batch)."""
        if limit >= len(self):
            return self.batch()
        order = np.random.default_rng(self.seed).permutation(len(self))
        return self.batch(np.sort(order[:limit]))

    def epoch_rounds(self, epoch: int, batch_size: int | None, n_workers: int):
        """Per-round, per-worker index arrays for one epoch.

        The epoch's seeded permutation is cut into rounds of
        ``batch_size * n_workers`` samples and each round is split into
        ``n_workers`` contiguous pieces, so the workers partition the data.
        ``batch_size=None`` gives a single full-data round.
        """
        n = len(self)
        if batch_size is None:
            order = np.arange(n)
            return [np.array_split(order, n_workers)]
        order = np.random.default_rng([self.seed, epoch]).permutation(n)
        step = batch_size * n_workers
        return [np.array_split(order[s : s + step], n_workers) for s in range(0, n, step)]


def generate_synthetic_dataset(kind: str, n_samples: int, seed: int) -> Dataset:
    """Reproducible toy data: two Gaussian blobs, two rings, or a noisy linear map."""
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(seed)
    if kind == "linear-regression":
        coef = rng.standard_normal(5)
        X = rng.standard_normal((n_samples, 5))
        y = X @ coef + 0.1 * rng.standard_normal(n_samples)
        return Dataset(X, y.reshape(-1, 1), task="regression", seed=seed)

    # alternate labels then shuffle: class counts differ by at most one
    y = rng.permutation(np.arange(n_samples) % 2)
    if kind == "two-gaussians":
        centers = np.array([[-1.0, -1.0], [1.0, 1.0]])
        X = centers[y] + 0.75 * rng.standard_normal((n_samples, 2))
    else:
        radius = np.where(y == 0, 1.0, 2.5) + 0.15 * rng.standard_normal(n_samples)
        theta = rng.uniform(0.0, 2.0 * np.pi, n_samples)
        X = np.column_stack((radius * np.cos(theta), radius * np.sin(theta)))
    return Dataset(X, y, task="classification", seed=seed, classes=("0", "1"))


def load_csv_dataset(path, feature_cols, label_col, task: str = "classification", seed: int = 0) -> Dataset:
    """Read a headed CSV file.

    Class labels are numbered ``0..K-1`` in order of first appearance.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError(f"{path}: empty file", row=1) from None
        header = [h.strip() for h in header]
        missing = [c for c in [*feature_cols, label_col] if c not in header]
        if missing:
            raise DatasetParseError(f"{path}: columns not in header: {missing}", row=1)
        fidx = [header.index(c) for c in feature_cols]
        lidx = header.index(label_col)
        features, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            values = []
            for c, j in zip(feature_cols, fidx):
                cell = row[j].strip() if j < len(row) else ""
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DatasetParseError(
                        f"{path}:{line_no}: non-numeric value {cell!r} in column {c!r}", row=line_no, col=c
                    ) from None
            features.append(values)
            labels.append(row[lidx].strip() if lidx < len(row) else "")
    if not features:
        raise DatasetParseError(f"{path}: no data rows", row=2)
    X = np.array(features, dtype=np.float64)
    if task == "regression":
        try:
            y = np.array([float(v) for v in labels], dtype=np.float64)
        except ValueError as exc:
            raise DatasetParseError(f"{path}: non-numeric regression target ({exc})", col=label_col) from None
        return Dataset(X, y, task="regression", seed=seed)
    ids: dict[str, int] = {}
    y = np.array([ids.setdefault(v, len(ids)) for v in labels], dtype=np.int64)
    return Dataset(X, y, task="classification", seed=seed, classes=tuple(ids))


def write_csv_dataset(dataset: Dataset, path, feature_names=None, label_name: str = "label"):
    names = list(feature_names or [f"x{j}" for j in range(dataset.feature_dim)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*names, label_name])
        for x, y in zip(dataset.X, dataset.y):
            label = repr(float(y[0])) if dataset.task == "regression" else (
                dataset.classes[y] if dataset.classes else str(int(y))
            )
            writer.writerow([repr(float(v)) for v in x] + [label])
    return names


class Oracle:
    """Implicit objective: ``value``, ``grad`` and ``hvp`` at a point, on a batch."""

    n: int

    def value(self, w, batch=None) -> float:
        raise NotImplementedError

    def grad(self, w, batch=None) -> np.ndarray:
        raise NotImplementedError

    def hvp(self, w, v, batch=None) -> np.ndarray:
        raise NotImplementedError

    def accuracy(self, w, batch=None):
        return None

    def cost(self, kind: str, samples: int) -> int:
        """Rough flop count of one ``value``/``grad``/``hvp`` call on ``samples`` samples."""
        return {"value": 2, "grad": 6, "hvp": 12}[kind] * self.n * max(samples, 1)

    def hvp_operator(self, w, batch=None):
        """Freeze ``(w, batch)`` and return ``v -> H v``."""
        w = as_vector(w).copy()
        return lambda v: self.hvp(w, v, batch)

    def _check(self, w):
        w = as_vector(w)
        if w.shape[0] != self.n:
            raise DimensionError(f"parameter vector has length {w.shape[0]}, oracle expects {self.n}")
        return w


def random_rotation(n: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix; the identity for ``seed == 0``."""
    if seed == 0:
        return np.eye(n)
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class QuadraticOracle(Oracle):
    """``f(w) = 0.5 w^T H w`` with ``H = Q^T diag(spectrum) Q``; batches are ignored."""

    def __init__(self, spectrum, rotation_seed: int = 0):
        spectrum = np.asarray(spectrum, dtype=np.float64)
        if spectrum.ndim != 1 or spectrum.size == 0:
            raise ValueError("spectrum must be a non-empty vector")
        if np.any(spectrum == 0):
            raise ValueError("spectrum entries must be nonzero")
        self.spectrum = spectrum
        self.rotation_seed = rotation_seed
        self.n = spectrum.size
        Q = random_rotation(self.n, rotation_seed)
        H = Q.T @ (spectrum[:, None] * Q)
        self.H = 0.5 * (H + H.T)

    def value(self, w, batch=None) -> float:
        w = self._check(w)
        return 0.5 * dot(w, self.H @ w)

    def grad(self, w, batch=None) -> np.ndarray:
        return self.H @ self._check(w)

    def hvp(self, w, v, batch=None) -> np.ndarray:
        return self.H @ self._check(v)

    def cost(self, kind: str, samples: int) -> int:
        return 2 * self.n * self.n


def quadratic_oracle(spectrum, rotation_seed: int = 0) -> QuadraticOracle:
    return QuadraticOracle(spectrum, rotation_seed)


def ill_conditioned_spectrum(n: int, condition: float, top: float = 1.0) -> np.ndarray:
    """Log-spaced positive spectrum from ``top / condition`` up to ``top``."""
    return np.geomspace(top / condition, top, n)


def outlier_spectrum(n: int, condition: float, outliers: int = 8, bulk_condition: float = 100.0, top: float = 1.0) -> np.ndarray:
    """A few large eigenvalues above a log-spaced bulk, ascending.

    The ``outliers`` largest values span ``[top / 10, top]``; the remaining
    ``n - outliers`` span ``[top / condition, top * bulk_condition / condition]``.
    This is the shape of typical network Hessians, where a handful of
    directions carry most of the curvature.
    """
    if not 0 <= outliers < n:
        raise ValueError(f"need 0 <= outliers < n, got {outliers} of {n}")
    lo = top / condition
    if lo * bulk_condition > top / 10:
        raise ValueError("bulk would overlap the outliers; lower bulk_condition or raise condition")
    bulk = np.geomspace(lo, lo * bulk_condition, n - outliers)
    return np.concatenate([bulk, np.geomspace(top / 10, top, outliers)]) if outliers else bulk


_ACTIVATIONS = ("tanh", "relu")


def _act(name, z):
    # returns phi(z), phi'(z), phi''(z)
    if name == "tanh":
        t = np.tanh(z)
        d1 = 1.0 - t * t
        return t, d1, -2.0 * t * d1
    a = np.maximum(z, 0.0)
    d1 = (z > 0).astype(np.float64)
    return a, d1, np.zeros_like(z)


class MLPOracle(Oracle):
    """Fully connected network with softmax cross-entropy or squared-error loss.

    Gradients come from reverse-mode backpropagation; Hessian-vector products
    from Pearlmutter's R-operator (a forward pass of directional derivatives
    followed by the differentiated backward pass), on the same batch.
    """

    def __init__(self, layer_sizes, activation: str = "tanh", loss: str = "cross-entropy", l2: float = 0.0):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {activation!r}")
        if loss not in ("cross-entropy", "mse"):
            raise ValueError(f"loss must be 'cross-entropy' or 'mse', got {loss!r}")
        self.sizes = sizes
        self.activation = activation
        self.loss = loss
        self.l2 = l2
        self._shapes = [(a, b) for a, b in zip(sizes[:-1], sizes[1:])]
        self.n = sum(a * b + b for a, b in self._shapes)

    # -- layout ----------------------------------------------------------------------
    def unflatten(self, w):
        out, pos = [], 0
        for a, b in self._shapes:
            W = w[pos : pos + a * b].reshape(a, b)
            pos += a * b
            out.append((W, w[pos : pos + b]))
            pos += b
        return out

    def flatten(self, layers) -> np.ndarray:
        return np.concatenate([np.concatenate((W.ravel(), b)) for W, b in layers])

    def init_params(self, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        layers = []
        for a, b in self._shapes:
            limit = np.sqrt(6.0 / (a + b))
            layers.append((rng.uniform(-limit, limit, (a, b)), np.zeros(b)))
        return self.flatten(layers)

    # -- forward / backward ----------------------------------------------------------
    def _forward(self, layers, X):
        acts, pre, d1s, d2s = [X], [], [], []
        a = X
        last = len(layers) - 1
        for l, (W, b) in enumerate(layers):
            z = a @ W + b
            pre.append(z)
            if l < last:
                a, d1, d2 = _act(self.activation, z)
                d1s.append(d1)
                d2s.append(d2)
            else:
                a = z
            acts.append(a)
        return acts, pre, d1s, d2s

    def _targets(self, batch, out_dim):
        Y = np.asarray(batch.Y)
        if self.loss == "cross-entropy":
            if Y.ndim == 2:
                return Y.astype(np.float64)
            return np.eye(out_dim)[Y.astype(np.int64)]
        return Y.reshape(Y.shape[0], -1).astype(np.float64)

    def _head(self, z, T):
        B = z.shape[0]
        if self.loss == "cross-entropy":
            shifted = z - z.max(axis=1, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            p = np.exp(logp)
            return -np.sum(T * logp) / B, (p - T) / B, p
        r = z - T
        return 0.5 * np.sum(r * r) / B, r / B, None

    def _check_batch(self, batch):
        if batch is None:
            raise ValueError("the MLP oracle needs a batch")
        if batch.X.shape[1] != self.sizes[0]:
            raise DimensionError(f"batch has {batch.X.shape[1]} features, network expects {self.sizes[0]}")

    def value(self, w, batch=None) -> float:
        w = self._check(w)
        self._check_batch(batch)
        acts, _, _, _ = self._forward(self.unflatten(w), batch.X)
        loss, _, _ = self._head(acts[-1], self._targets(batch, self.sizes[-1]))
        return loss + 0.5 * self.l2 * dot(w, w)

    def grad(self, w, batch=None) -> np.ndarray:
        w = self._check(w)
        self._check_batch(batch)
        layers = self.unflatten(w)
        acts, _, d1s, _ = self._forward(layers, batch.X)
        _, delta, _ = self._head(acts[-1], self._targets(batch, self.sizes[-1]))
        grads = [None] * len(layers)
        for l in range(len(layers) - 1, -1, -1):
            W, _ = layers[l]
            grads[l] = (acts[l].T @ delta, delta.sum(axis=0))
            if l > 0:
                delta = (delta @ W.T) * d1s[l - 1]
        g = self.flatten(grads)
        return g + self.l2 * w if self.l2 else g

    def hvp(self, w, v, batch=None) -> np.ndarray:
        w = self._check(w)
        v = self._check(v)
        self._check_batch(batch)
        layers = self.unflatten(w)
        dirs = self.unflatten(v)
        acts, pre, d1s, d2s = self._forward(layers, batch.X)
        # R-forward: directional derivatives of pre-activations and activations
        r_acts = [np.zeros_like(batch.X, dtype=np.float64)]
        r_pre = []
        last = len(layers) - 1
        for l, ((W, _), (VW, Vb)) in enumerate(zip(layers, dirs)):
            rz = r_acts[l] @ W + acts[l] @ VW + Vb
            r_pre.append(rz)
            r_acts.append(d1s[l] * rz if l < last else rz)
        T = self._targets(batch, self.sizes[-1])
        _, delta, p = self._head(acts[-1], T)
        B = batch.X.shape[0]
        if self.loss == "cross-entropy":
            rz = r_pre[-1]
            r_delta = p * (rz - np.sum(p * rz, axis=1, keepdims=True)) / B
        else:
            r_delta = r_pre[-1] / B
        out = [None] * len(layers)
        for l in range(last, -1, -1):
            W, _ = layers[l]
            VW, _ = dirs[l]
            out[l] = (r_acts[l].T @ delta + acts[l].T @ r_delta, r_delta.sum(axis=0))
            if l > 0:
                back = delta @ W.T
                r_back = r_delta @ W.T + delta @ VW.T
                delta, r_delta = back * d1s[l - 1], r_back * d1s[l - 1] + back * d2s[l - 1] * r_pre[l - 1]
        hv = self.flatten(out)
        return hv + self.l2 * v if self.l2 else hv

    def predict(self, w, X) -> np.ndarray:
        acts, _, _, _ = self._forward(self.unflatten(self._check(w)), np.asarray(X, dtype=np.float64))
        return acts[-1]

    def accuracy(self, w, batch=None):
        if self.loss != "cross-entropy":
            return None
        self._check_batch(batch)
        Y = np.asarray(batch.Y)
        labels = Y.argmax(axis=1) if Y.ndim == 2 else Y
        return float(np.mean(self.predict(w, batch.X).argmax(axis=1) == labels))


def mlp_oracle(layer_sizes, activation: str, dataset: Dataset | None = None, loss: str | None = None, l2: float = 0.0):
    """Build an :class:`MLPOracle`, checking its end layers against ``dataset``."""
    if loss is None:
        loss = "mse" if dataset is not None and dataset.task == "regression" else "cross-entropy"
    if dataset is not None:
        if layer_sizes[0] != dataset.feature_dim:
            raise ValueError(f"input layer has {layer_sizes[0]} units but data has {dataset.feature_dim} features")
        if layer_sizes[-1] != dataset.output_dim:
            raise ValueError(f"output layer has {layer_sizes[-1]} units but targets need {dataset.output_dim}")
    return MLPOracle(layer_sizes, activation, loss, l2)
