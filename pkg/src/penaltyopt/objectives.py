"""Finite-sum objectives and dataset ingestion."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import expit

from .sets import Ball, Box, ConstraintSet, Halfspace


class ObjectiveError(ValueError):
    pass


class FiniteSumObjective:
    """``f(x) = (1/n) sum_i f_i(x)``.

    Subclasses set ``n``, ``dim``, ``L`` (smoothness of ``f``), ``L_max``
    (largest component smoothness), ``mu`` and optionally ``x0_star`` (the
    unconstrained minimizer, when known in closed form).
    """

    n: int = 1
    dim: int = 0
    L: float = math.inf
    L_max: float = math.inf
    mu: float = 0.0
    convex: bool = True
    x0_star: np.ndarray | None = None

    def value(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def component_grad(self, i: int, x) -> np.ndarray:
        raise NotImplementedError

    def value_grad(self, x):
        return self.value(x), self.grad(x)

    def kernel_spec(self):
        """``(kind, M, v, reg)`` for the compiled core, or ``None``."""
        return None

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ObjectiveError(f"expected a point of shape ({self.dim},), got {x.shape}")
        return x


class QuadraticObjective(FiniteSumObjective):
    """``f(x) = x'Qx/2 - c'x`` as a single component."""

    def __init__(self, Q, c):
        Q = np.array(Q, dtype=np.float64, ndmin=2)
        c = np.array(c, dtype=np.float64, ndmin=1)
        if Q.shape[0] != Q.shape[1] or Q.shape[0] != c.shape[0]:
            raise ObjectiveError("Q must be square and match c")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
            raise ObjectiveError("Q must be symmetric")
        Q = 0.5 * (Q + Q.T)
        try:
            np.linalg.cholesky(Q)
        except np.linalg.LinAlgError as exc:
            raise ObjectiveError("Q must be positive definite") from exc
        w = np.linalg.eigvalsh(Q)
        self.Q = np.ascontiguousarray(Q)
        self.c = c
        self.n = 1
        self.dim = c.shape[0]
        self.L = self.L_max = float(w[-1])
        self.mu = float(w[0])
        self.x0_star = np.linalg.solve(Q, c)

    def value(self, x):
        x = self._check(x)
        return float(0.5 * x @ (self.Q @ x) - self.c @ x)

    def grad(self, x):
        x = self._check(x)
        return self.Q @ x - self.c

    def component_grad(self, i, x):
        if i != 0:
            raise IndexError(f"component {i} out of range for n=1")
        return self.grad(x)

    def hess(self, x):
        return self.Q

    def hess_vec(self, x, v):
        return self.Q @ v

    def kernel_spec(self):
        return 0, self.Q, np.ascontiguousarray(self.c), 0.0


def quadratic(Q, c) -> QuadraticObjective:
    return QuadraticObjective(Q, c)


def random_quadratic(d: int = 10, mu: float = 1.0, L: float = 10.0, seed: int = 0, c_scale: float = 3.0):
    """Quadratic with a random eigenbasis and eigenvalues spread evenly on ``[mu, L]``."""
    if not 0 < mu <= L:
        raise ObjectiveError("need 0 < mu <= L")
    rng = np.random.default_rng(seed)
    U, _ = np.linalg.qr(rng.standard_normal((d, d)))
    Q = U @ np.diag(np.linspace(mu, L, d)) @ U.T
    Q = 0.5 * (Q + Q.T)
    return QuadraticObjective(Q, c_scale * rng.standard_normal(d))


# ---------------------------------------------------------------------------
# Logistic regression


@dataclass
class Dataset:
    features: np.ndarray | sparse.csr_matrix
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.float64)
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ObjectiveError("labels must be -1 or +1")
        if self.features.shape[0] != labels.shape[0]:
            raise ObjectiveError("features and labels disagree on n")
        self.labels = labels

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subsample(self, n: int, seed: int = 0) -> "Dataset":
        if n >= self.n:
            return self
        idx = np.sort(np.random.default_rng(seed).choice(self.n, size=n, replace=False))
        meta = dict(self.meta, subsample=n, subsample_seed=seed)
        return Dataset(self.features[idx], self.labels[idx], meta)


def _power_iteration(A, n_iter: int = 1000, tol: float = 1e-9, seed: int = 0) -> float:
    """Largest eigenvalue of ``A'A``."""
    d = A.shape[1]
    v = np.random.default_rng(seed).standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iter):
        w = A.T @ (A @ v)
        new = float(np.linalg.norm(w))
        if new == 0.0:
            return 0.0
        v = w / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return lam


class LogisticObjective(FiniteSumObjective):
    """``f_i(x) = log(1 + exp(-y_i a_i.x)) + reg/2 ||x||^2``."""

    def __init__(self, dataset: Dataset, reg: float):
        if reg < 0:
            raise ObjectiveError("reg must be nonnegative")
        A = dataset.features
        self.A = A.tocsr() if sparse.issparse(A) else np.ascontiguousarray(A, dtype=np.float64)
        self.y = dataset.labels
        self.reg = float(reg)
        self.n, self.dim = A.shape
        # small margin absorbs the power-iteration underestimate
        lam_max = _power_iteration(self.A)
        self.L = (lam_max * (1.0 + 1e-6)) / (4.0 * self.n) + self.reg
        row_sq = (
            np.asarray(self.A.multiply(self.A).sum(axis=1)).ravel()
            if sparse.issparse(self.A)
            else np.einsum("ij,ij->i", self.A, self.A)
        )
        self.L_max = float(row_sq.max()) / 4.0 + self.reg
        self.mu = self.reg
        self._dense = None

    def _margins(self, x):
        return self.y * (self.A @ x)

    def value(self, x):
        x = self._check(x)
        return float(np.mean(np.logaddexp(0.0, -self._margins(x))) + 0.5 * self.reg * x @ x)

    def grad(self, x):
        x = self._check(x)
        coef = -self.y * expit(-self._margins(x))
        return np.asarray(self.A.T @ coef).ravel() / self.n + self.reg * x

    def value_grad(self, x):
        x = self._check(x)
        z = self._margins(x)
        val = float(np.mean(np.logaddexp(0.0, -z)) + 0.5 * self.reg * x @ x)
        coef = -self.y * expit(-z)
        return val, np.asarray(self.A.T @ coef).ravel() / self.n + self.reg * x

    def component_grad(self, i, x):
        x = self._check(x)
        if not 0 <= i < self.n:
            raise IndexError(f"component {i} out of range for n={self.n}")
        a = self.A[i]
        if sparse.issparse(a):
            a = a.toarray().ravel()
        yi = self.y[i]
        return -yi * expit(-yi * float(a @ x)) * a + self.reg * x

    def hess_vec(self, x, v):
        z = self._margins(x)
        s = expit(z) * expit(-z)
        return np.asarray(self.A.T @ (s * (self.A @ v))).ravel() / self.n + self.reg * v

    def hess(self, x):
        x = self._check(x)
        z = self._margins(x)
        s = expit(z) * expit(-z)
        A = self.dense_features()
        return (A.T * s) @ A / self.n + self.reg * np.eye(self.dim)

    def dense_features(self) -> np.ndarray:
        if self._dense is None:
            A = self.A.toarray() if sparse.issparse(self.A) else self.A
            self._dense = np.ascontiguousarray(A, dtype=np.float64)
        return self._dense

    def kernel_spec(self):
        if self.n * self.dim > 50_000_000:
            return None
        return 1, self.dense_features(), np.ascontiguousarray(self.y), self.reg


def logreg(dataset: Dataset, reg: float) -> LogisticObjective:
    return LogisticObjective(dataset, reg)


# ---------------------------------------------------------------------------
# Small instances with known structure


@dataclass
class Instance:
    objective: FiniteSumObjective
    sets: list[ConstraintSet]
    meta: dict = field(default_factory=dict)


def one_d_counterexample(L: float = 1.0) -> Instance:
    """``f = (L/2) x^2`` over ``[1, 2]``: projection of every penalized
    minimizer lands exactly on the constrained solution."""
    f = QuadraticObjective([[L]], [0.0])
    return Instance(
        f,
        [Box([1.0], [2.0])],
        {"x_star": np.array([1.0]), "f_star": 0.5 * L, "grad_at_xstar": np.array([L])},
    )


class ProductSquareObjective(FiniteSumObjective):
    """``f(x, y) = x^2 y^2`` (nonconvex, single component)."""

    def __init__(self, radius: float = 3.0):
        self.n = 1
        self.dim = 2
        self.convex = False
        self.mu = 0.0
        # Hessian norm bound on the box [-radius, radius]^2
        self.L = self.L_max = 6.0 * radius * radius
        self.x0_star = np.zeros(2)

    def value(self, x):
        x = self._check(x)
        return float((x[0] * x[1]) ** 2)

    def grad(self, x):
        x = self._check(x)
        return np.array([2.0 * x[0] * x[1] ** 2, 2.0 * x[1] * x[0] ** 2])

    def component_grad(self, i, x):
        if i != 0:
            raise IndexError(f"component {i} out of range for n=1")
        return self.grad(x)

    def hess(self, x):
        a, b = x
        return np.array([[2.0 * b * b, 4.0 * a * b], [4.0 * a * b, 2.0 * a * a]])

    def hess_vec(self, x, v):
        return self.hess(x) @ v


def nonconvex_2d() -> Instance:
    sets = [Halfspace([1.0, 4.0], 7.0), Ball([1.5, 1.0], math.sqrt(1.0 / 3.0))]
    return Instance(ProductSquareObjective(), sets, {})


# ---------------------------------------------------------------------------
# LIBSVM text format


class LibsvmError(ValueError):
    pass


def load_libsvm(path, n_features: int | None = None, scale: bool = False) -> Dataset:
    """Read ``label idx:val ...`` lines (1-based indices)."""
    rows, cols, vals, labels = [], [], [], []
    max_idx = 0
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
            except ValueError:
                raise LibsvmError(f"{path}:{lineno}: bad label {parts[0]!r}") from None
            if len(parts) == 1:
                raise LibsvmError(f"{path}:{lineno}: row has no features")
            r = len(labels) - 1
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    k = int(idx)
                    v = float(val)
                except ValueError:
                    raise LibsvmError(f"{path}:{lineno}: bad feature {tok!r}") from None
                if not sep or k < 1:
                    raise LibsvmError(f"{path}:{lineno}: bad feature {tok!r}")
                rows.append(r)
                cols.append(k - 1)
                vals.append(v)
                max_idx = max(max_idx, k)
    if not labels:
        raise LibsvmError(f"{path}: no data rows")
    d = n_features if n_features is not None else max_idx
    if max_idx > d:
        raise LibsvmError(f"{path}: feature index {max_idx} exceeds n_features={d}")
    X = sparse.csr_matrix((vals, (rows, cols)), shape=(len(labels), d))
    X.sum_duplicates()
    y = np.asarray(labels)
    alphabet = set(np.unique(y).tolist())
    if alphabet <= {0.0, 1.0}:
        y = 2.0 * y - 1.0
    elif not alphabet <= {-1.0, 1.0}:
        raise LibsvmError(f"{path}: labels must be binary, got {sorted(alphabet)}")
    meta = {"source": str(path), "n": len(labels), "d": d, "scaled": bool(scale)}
    if scale:
        X = max_abs_scale(X)
    return Dataset(X, y, meta)


def max_abs_scale(X):
    """Scale each column to unit max-abs (columns of zeros untouched)."""
    col_max = np.asarray(abs(X).max(axis=0).todense()).ravel() if sparse.issparse(X) else np.abs(X).max(axis=0)
    col_max[col_max == 0] = 1.0
    if sparse.issparse(X):
        return (X @ sparse.diags(1.0 / col_max)).tocsr()
    return X / col_max


def write_libsvm(dataset: Dataset, path) -> None:
    X = sparse.csr_matrix(dataset.features)
    with open(path, "w") as fh:
        for r in range(X.shape[0]):
            start, end = X.indptr[r], X.indptr[r + 1]
            feats = " ".join(
                f"{c + 1}:{format(v, '.17g')}" for c, v in zip(X.indices[start:end], X.data[start:end])
            )
            label = "+1" if dataset.labels[r] > 0 else "-1"
            fh.write(f"{label} {feats}".rstrip() + "\n")


def write_metadata(dataset: Dataset, path) -> Path:
    """JSON sidecar describing dimensions and preprocessing."""
    out = Path(str(path) + ".meta.json")
    meta = dict(dataset.meta, n=dataset.n, d=dataset.d)
    out.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def synthetic_binary_dataset(n: int = 1605, d: int = 123, density: float = 0.11, seed: int = 0) -> Dataset:
    """Sparse 0/1 features with labels from a planted linear model.

    Roughly mimics the shape of A1a (n=1605, d=123, ~14 active features per row).
    """
    rng = np.random.default_rng(seed)
    X = (rng.random((n, d)) < density).astype(np.float64)
    X[np.arange(n), rng.integers(d, size=n)] = 1.0  # no empty rows
    w = rng.standard_normal(d)
    margin = X @ w - np.median(X @ w)
    p = expit(margin)
    y = np.where(rng.random(n) < p, 1.0, -1.0)
    meta = {"source": "synthetic", "seed": seed, "density": density, "scaled": False}
    return Dataset(sparse.csr_matrix(X), y, meta)
