"""Sample, balanced and group-debiased covariance estimators.

All estimators use the biased 1/T normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, GroupIndicator, group_indicator
from .exceptions import DimensionError, EmptyDataError, GroupError, ParameterError

KINDS = ("sample", "balanced", "debiased")


@dataclass
class CovarianceEstimate:
    C: np.ndarray
    kind: str = "sample"
    params: dict = field(default_factory=dict)
    sample_count: int = 0

    def __post_init__(self):
        self.C = np.asarray(self.C, dtype=np.float64)
        if self.C.ndim != 2 or self.C.shape[0] != self.C.shape[1]:
            raise DimensionError(f"covariance must be square, got {self.C.shape}")

    @property
    def N(self) -> int:
        return self.C.shape[0]

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.C)[0])

    @property
    def indefinite(self) -> bool:
        return self.params.get("indefinite", False)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.C, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, kind="sample", **params) -> "CovarianceEstimate":
        C = np.loadtxt(path, delimiter=",", ndmin=2)
        return cls(C, kind=kind, params=params)


def _as_matrix(C) -> np.ndarray:
    return C.C if isinstance(C, CovarianceEstimate) else np.asarray(C, dtype=np.float64)


def clip_negative_eigenvalues(C: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(C)
    out = (V * np.maximum(lam, 0.0)) @ V.T
    return (out + out.T) / 2


def sample_covariance(X):
    """Column mean and ``(X - 1 mu^T)^T (X - 1 mu^T) / T``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"X must be 2-D, got shape {X.shape}")
    T = X.shape[0]
    if T == 0:
        raise EmptyDataError("sample_covariance needs at least one row")
    mu = X.mean(axis=0)
    Xc = X - mu
    C = Xc.T @ Xc / T
    C = (C + C.T) / 2
    return mu, CovarianceEstimate(C, "sample", {}, T)


def balancing_weights(Tg: int, Th: int, alpha: float) -> tuple[float, float]:
    """Coefficients ``(alpha_g, alpha_h)`` of the balanced estimate."""
    T = Tg + Th
    return alpha * Tg / T + alpha - 1.0, alpha * Th / T + 1.0 - alpha


def balanced_covariance(Cg, Ch, Tg: int, Th: int, alpha: float, clip_negative: bool = False):
    """``alpha_g * Cg + alpha_h * Ch``; ``Ch`` belongs to the disadvantaged group.

    For small ``alpha`` the result can be indefinite. It is returned as-is
    (flagged in ``params['indefinite']``) unless ``clip_negative`` is set.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    Cg, Ch = _as_matrix(Cg), _as_matrix(Ch)
    if Cg.shape != Ch.shape:
        raise DimensionError(f"group covariances differ in shape: {Cg.shape} vs {Ch.shape}")
    ag, ah = balancing_weights(Tg, Th, alpha)
    C = ag * Cg + ah * Ch
    C = (C + C.T) / 2
    indefinite = bool(np.linalg.eigvalsh(C)[0] < -1e-8)
    if clip_negative and indefinite:
        C = clip_negative_eigenvalues(C)
    params = {"alpha": alpha, "alpha_g": ag, "alpha_h": ah, "indefinite": indefinite,
              "clipped": bool(clip_negative and indefinite)}
    return CovarianceEstimate(C, "balanced", params, Tg + Th)


def debiased_covariance(X, Z, beta: float):
    """``X^T (I + beta Z Z^T)^{-1} X / T`` without forming the T x T inverse.

    Because ``Z^T Z = diag(T_g)``,
    ``(I + beta Z Z^T)^{-1} = I - Z diag(beta / (1 + beta T_g)) Z^T``.
    ``X`` is re-centered on its column mean first. ``Z`` may be a
    :class:`GroupIndicator`, a T x G matrix, or a vector of 1-based labels.
    """
    if beta < 0:
        raise ParameterError(f"beta must be >= 0, got {beta}")
    X = np.asarray(X, dtype=np.float64)
    T = X.shape[0]
    if T == 0:
        raise EmptyDataError("debiased_covariance needs at least one row")
    if isinstance(Z, GroupIndicator):
        Zm = Z.Z
    else:
        Zm = np.asarray(Z)
        if Zm.ndim == 1:
            Zm = group_indicator(Zm).Z
    if Zm.shape[0] != T:
        raise DimensionError(f"Z has {Zm.shape[0]} rows, X has {T}")
    Xc = X - X.mean(axis=0)
    sizes = Zm.sum(axis=0)
    d = beta / (1.0 + beta * sizes)
    S = Zm.T @ Xc  # per-group column sums, G x N
    C = (Xc.T @ Xc - S.T @ (d[:, None] * S)) / T
    C = (C + C.T) / 2
    return CovarianceEstimate(C, "debiased", {"beta": beta}, T)


def group_covariances(ds: Dataset):
    """``[(mean_g, estimate_g, T_g) for g in 1..G]`` about each group's own mean."""
    out = []
    for g in range(1, ds.G + 1):
        Xg = ds.X[ds.z == g]
        if len(Xg) == 0:
            raise GroupError(f"group {g} is empty")
        mu, est = sample_covariance(Xg)
        out.append((mu, est, len(Xg)))
    return out


def balanced_from_dataset(ds: Dataset, alpha: float, disadvantaged: int = 1,
                          clip_negative: bool = False) -> CovarianceEstimate:
    """Balanced estimate for a two-group dataset."""
    if ds.G != 2:
        raise GroupError(f"balanced covariance is defined for two groups, got G={ds.G}")
    if disadvantaged not in (1, 2):
        raise ParameterError("disadvantaged group must be 1 or 2")
    per = group_covariances(ds)
    h = disadvantaged - 1
    g = 1 - h
    return balanced_covariance(per[g][1], per[h][1], per[g][2], per[h][2], alpha,
                               clip_negative=clip_negative)


def estimate(ds: Dataset, kind: str, alpha: float = 0.5, beta: float = 1.0,
             disadvantaged: int = 1, clip_negative: bool = False) -> CovarianceEstimate:
    """Dispatch on estimator kind."""
    if kind == "sample":
        return sample_covariance(ds.X)[1]
    if kind == "balanced":
        return balanced_from_dataset(ds, alpha, disadvantaged, clip_negative)
    if kind == "debiased":
        return debiased_covariance(ds.X, ds.indicator(), beta)
    raise ParameterError(f"unknown covariance kind {kind!r}")
