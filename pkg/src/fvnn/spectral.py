"""Spectral tools for covariance filters and their stability.

A covariance filter of order K is ``H(C) = sum_k h_k C^k``; its frequency
response is the scalar polynomial ``h(lam) = sum_k h_k lam^k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import DimensionError, ParameterError, ShapeError, SymmetryError


@dataclass
class SpectralDecomposition:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def _matrix(C) -> np.ndarray:
    return np.asarray(getattr(C, "C", C), dtype=np.float64)


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def eigendecompose(C, tol: float = 1e-10) -> SpectralDecomposition:
    C = _matrix(C)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DimensionError(f"expected a square matrix, got {C.shape}")
    if np.max(np.abs(C - C.T), initial=0.0) > tol * max(1.0, np.abs(C).max(initial=0.0)):
        raise SymmetryError("matrix is not symmetric")
    lam, V = np.linalg.eigh((C + C.T) / 2)
    return SpectralDecomposition(lam, fix_signs(V))


def frequency_response(h, lam) -> np.ndarray:
    """Evaluate ``sum_k h[k] lam**k`` by Horner's rule."""
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    lam = np.asarray(lam, dtype=np.float64)
    out = np.zeros_like(lam)
    for c in h[::-1]:
        out = out * lam + c
    return out


def apply_filter(h, C, X) -> np.ndarray:
    """``H(C) X`` through repeated products with ``C``; never forms ``C^k``.

    ``X`` is an N-vector or an N x F matrix.
    """
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    C = _matrix(C)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != C.shape[0]:
        raise ShapeError(f"signal has {X.shape[0]} rows, covariance is {C.shape[0]} x {C.shape[0]}")
    out = h[0] * X
    v = X
    for c in h[1:]:
        v = C @ v
        out = out + c * v
    return out


def filter_matrix(h, C) -> np.ndarray:
    """Dense ``H(C)``; used for norms of filter differences."""
    C = _matrix(C)
    return apply_filter(h, C, np.eye(C.shape[0]))


def lipschitz_constant(h, lam) -> float:
    """Smallest P with |h(a) - h(b)| <= P |a - b| over all eigenvalue pairs."""
    lam = np.unique(np.asarray(lam, dtype=np.float64).reshape(-1))
    if len(lam) < 2:
        raise ParameterError("Lipschitz constant undefined: need two distinct eigenvalues")
    r = frequency_response(h, lam)
    dl = lam[:, None] - lam[None, :]
    dr = r[:, None] - r[None, :]
    off = ~np.eye(len(lam), dtype=bool)
    return float(np.max(np.abs(dr[off]) / np.abs(dl[off])))


def spectral_norm(A, rtol: float = 1e-6, maxiter: int = 10_000, seed: int = 0) -> float:
    """Largest singular value of ``A`` by power iteration on ``A^T A``."""
    A = np.asarray(A, dtype=np.float64)
    if not np.any(A):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(maxiter):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = math.sqrt(nw)
        if abs(new - sigma) <= rtol * new:
            return new
        sigma = new
    return sigma


def filter_distance(h, C1, C2, rtol: float = 1e-6) -> float:
    """Operator 2-norm of ``H(C1) - H(C2)``."""
    C1, C2 = _matrix(C1), _matrix(C2)
    if C1.shape != C2.shape:
        raise DimensionError(f"shape mismatch: {C1.shape} vs {C2.shape}")
    return spectral_norm(filter_matrix(h, C1) - filter_matrix(h, C2), rtol=rtol)


def stability_bound(P: float, N: int, error_norm: float) -> float:
    """First-order bound ``P sqrt(N + 2 N^2) ||E||`` (quadratic term dropped)."""
    return P * math.sqrt(N + 2 * N * N) * error_norm


def quadratic_slack(h, error_norm: float, lam_max: float) -> float:
    """``2 ||E||^2 sum_k |h_k| k lam_max^k``, the allowance for dropped terms."""
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    k = np.arange(len(h))
    return float(2 * error_norm**2 * np.sum(np.abs(h) * k * lam_max**k))


@dataclass
class SweepResult:
    rows: list[dict]  # T, trial, filter_distance, error_norm, bound, slack
    table: list[dict]  # per T means
    slope: float

    def to_csv(self, path) -> None:
        write_sweep_csv(path, self.rows)


SWEEP_COLUMNS = ("T", "trial", "filter_distance", "error_norm", "bound")


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(r[c]) for c in SWEEP_COLUMNS) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def stability_sweep(h, C_true, sampler: Callable, T_grid: Sequence[int], trials: int = 20,
                    seed: int = 0) -> SweepResult:
    """Measure ``||H(C_true) - H(C_hat)||`` as the sample count grows.

    ``sampler(T, rng)`` returns a covariance estimate (matrix or
    :class:`~fvnn.covariance.CovarianceEstimate`) built from T samples.
    Trial ``i`` at grid point ``j`` uses the generator seeded by
    ``(seed, j, i)``, so rows do not depend on evaluation order.
    """
    T_grid = [int(t) for t in T_grid]
    if any(b <= a for a, b in zip(T_grid, T_grid[1:])):
        raise ParameterError("T_grid must be strictly ascending")
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    C_true = _matrix(C_true)
    N = C_true.shape[0]
    H_true = filter_matrix(h, C_true)
    lam_true = np.linalg.eigvalsh(C_true)
    P = lipschitz_constant(h, lam_true)
    rows, table = [], []
    for j, T in enumerate(T_grid):
        dists, errs, bounds, slacks = [], [], [], []
        for i in range(trials):
            rng = np.random.default_rng([seed, j, i])
            C_hat = _matrix(sampler(T, rng))
            e = spectral_norm(C_true - C_hat)
            d = spectral_norm(H_true - filter_matrix(h, C_hat))
            lam_max = max(np.abs(lam_true).max(), np.abs(np.linalg.eigvalsh(C_hat)).max())
            b = stability_bound(P, N, e)
            s = quadratic_slack(h, e, lam_max)
            rows.append({"T": T, "trial": i, "filter_distance": d, "error_norm": e,
                         "bound": b, "slack": s})
            dists.append(d), errs.append(e), bounds.append(b), slacks.append(s)
        table.append({"T": T, "filter_distance": float(np.mean(dists)),
                      "error_norm": float(np.mean(errs)), "bound": float(np.mean(bounds)),
                      "slack": float(np.mean(slacks))})
    slope = loglog_slope([r["T"] for r in table], [r["filter_distance"] for r in table]) \
        if len(table) > 1 else float("nan")
    return SweepResult(rows, table, slope)


def subspace_distance(A, B) -> float:
    """Spectral norm of the difference of orthogonal projectors onto span(A), span(B)."""
    PA = A @ A.T
    PB = B @ B.T
    return float(np.linalg.norm(PA - PB, 2))
