"""PCA on a covariance estimate followed by ridge or RBF kernel-ridge predictors.

These play the role of the linear and kernel SVM arms; ridge solvers are
used instead of margin-based ones so that every fit is a direct solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist

from .data import Dataset
from .exceptions import DimensionError, NumericError, ParameterError, StateError
from .metrics import EvalReport, group_bias_report
from .spectral import eigendecompose


@dataclass
class PcaProjector:
    components: np.ndarray  # N x m, descending eigenvalue order
    eigenvalues: np.ndarray
    source: str = "sample"

    @property
    def m(self) -> int:
        return self.components.shape[1]


def fit_pca(C, m: int) -> PcaProjector:
    """Top-``m`` eigenvectors of ``C`` with the fixed sign convention."""
    mat = np.asarray(getattr(C, "C", C))
    N = mat.shape[0]
    if not 1 <= m <= N:
        raise ParameterError(f"m must lie in 1..{N}, got {m}")
    sd = eigendecompose(mat)
    order = np.arange(N - 1, N - 1 - m, -1)
    return PcaProjector(sd.eigenvectors[:, order], sd.eigenvalues[order],
                        getattr(C, "kind", "sample"))


def project(p: PcaProjector, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != p.components.shape[0]:
        raise DimensionError(f"X has {X.shape[-1]} columns, projector expects {p.components.shape[0]}")
    return X @ p.components


def median_bandwidth(A, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance (on a seeded subsample of at most ``max_points``)."""
    A = np.asarray(A, dtype=np.float64)
    if len(A) > max_points:
        A = A[np.sort(np.random.default_rng(seed).choice(len(A), max_points, replace=False))]
    d = pdist(A)
    med = float(np.median(d)) if len(d) else 1.0
    return med if med > 0 else 1.0


def rbf_kernel(A, B, bandwidth: float) -> np.ndarray:
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * bandwidth**2))


class DownstreamPredictor:
    """Ridge (``kind='linear'``) or RBF kernel ridge (``kind='rbf'``).

    Linear: solves ``(A^T A + ridge I) w = A^T y`` on ``[A, 1]``.
    RBF: kernel ridge on ``y - mean(y)`` with the mean added back.
    Classification is one-vs-rest regression on class indicators; for two
    classes this is thresholding the class-1 score at 0.5.
    """

    def __init__(self, kind="linear", ridge=1e-3, bandwidth="median", task="regression",
                 max_support=3000, seed=0):
        if kind not in ("linear", "rbf"):
            raise ParameterError(f"unknown downstream kind {kind!r}")
        if ridge <= 0:
            raise ParameterError("ridge must be positive")
        if bandwidth != "median" and not float(bandwidth) > 0:
            raise ParameterError("bandwidth must be positive or 'median'")
        self.kind = kind
        self.ridge = ridge
        self.bandwidth = bandwidth
        self.task = task
        self.max_support = max_support
        self.seed = seed
        self.fitted = False

    def _targets(self, y):
        if self.task == "classification":
            y = np.asarray(y, dtype=np.int64)
            self.n_classes_ = max(int(y.max()) + 1, 2)
            if self.n_classes_ == 2:
                return (y == 1).astype(np.float64)[:, None]
            return np.eye(self.n_classes_)[y]
        return np.asarray(y, dtype=np.float64)[:, None]

    def fit(self, A, y) -> "DownstreamPredictor":
        A = np.asarray(A, dtype=np.float64)
        Y = self._targets(y)
        if self.kind == "linear":
            Aa = np.hstack([A, np.ones((len(A), 1))])
            M = Aa.T @ Aa + self.ridge * np.eye(Aa.shape[1])
            self.coef_ = _solve_spd(M, Aa.T @ Y)
        else:
            if len(A) > self.max_support:
                idx = np.random.default_rng(self.seed).choice(len(A), self.max_support, replace=False)
                idx = np.sort(idx)
                A, Y = A[idx], Y[idx]
            bw = self.bandwidth
            self.bandwidth_ = median_bandwidth(A, seed=self.seed) if bw == "median" else float(bw)
            self.offset_ = Y.mean(axis=0)
            K = rbf_kernel(A, A, self.bandwidth_)
            self.dual_coef_ = _solve_spd(K + self.ridge * np.eye(len(A)), Y - self.offset_)
            self.support_ = A
        self.fitted = True
        return self

    def decision_function(self, A) -> np.ndarray:
        if not self.fitted:
            raise StateError("predictor is not fitted")
        A = np.asarray(A, dtype=np.float64)
        if self.kind == "linear":
            return np.hstack([A, np.ones((len(A), 1))]) @ self.coef_
        return rbf_kernel(A, self.support_, self.bandwidth_) @ self.dual_coef_ + self.offset_

    def predict(self, A) -> np.ndarray:
        s = self.decision_function(A)
        if self.task == "classification":
            if s.shape[1] == 1:
                return (s[:, 0] > 0.5).astype(np.int64)
            return np.argmax(s, axis=1)
        return s[:, 0]


def _solve_spd(M, B):
    try:
        return linalg.solve(M, B, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"ridge system could not be solved: {exc}") from exc


def fit_predict_downstream(train_proj, y_train, test_proj, kind="linear", ridge=1e-3,
                           task="regression", bandwidth="median", **kw) -> np.ndarray:
    est = DownstreamPredictor(kind, ridge, bandwidth, task, **kw).fit(train_proj, y_train)
    return est.predict(test_proj)


class PcaPipeline:
    """PCA projector plus downstream predictor, fitted once.

    ``predict(X, C)`` re-derives the projector from a replacement covariance
    while keeping the downstream predictor frozen.
    """

    def __init__(self, m: int, kind="linear", ridge=1e-3, bandwidth="median", task="regression",
                 **kw):
        self.m = m
        self.downstream = DownstreamPredictor(kind, ridge, bandwidth, task, **kw)

    def fit(self, ds: Dataset, C) -> "PcaPipeline":
        self.projector = fit_pca(C, self.m)
        self.downstream.fit(project(self.projector, ds.X), ds.y)
        return self

    def predict(self, X, C=None) -> np.ndarray:
        p = self.projector if C is None else fit_pca(C, self.m)
        return self.downstream.predict(project(p, X))


def evaluate_baseline(ds_train: Dataset, ds_test: Dataset, C, m: int, kind="linear",
                      ridge=1e-3, error_kind=None, **kw) -> EvalReport:
    pipe = PcaPipeline(m, kind, ridge, task=ds_train.task, **kw).fit(ds_train, C)
    return group_bias_report(ds_test, pipe.predict(ds_test.X), ds_test.task, error_kind)
