"""Datasets: two-group Gaussian synthesis, CSV ingestion, scaling, splits.

Group labels are 1-based (``z in {1..G}``) throughout the package. Class
labels for classification tasks are 0-based integers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import (
    ConfigError,
    DimensionError,
    GroupError,
    ParameterError,
    ParseError,
    SchemaError,
    StratificationError,
)

TASKS = ("regression", "classification")


@dataclass
class Dataset:
    """Feature rows ``X`` (T x N), targets ``y``, 1-based group labels ``z``."""

    X: np.ndarray
    y: np.ndarray
    z: np.ndarray
    task: str = "regression"
    n_groups: int | None = None
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DimensionError(f"X must be 2-D, got shape {self.X.shape}")
        if self.task not in TASKS:
            raise ParameterError(f"unknown task {self.task!r}")
        ydtype = np.int64 if self.task == "classification" else np.float64
        self.y = np.asarray(self.y, dtype=ydtype).reshape(-1)
        self.z = np.asarray(self.z, dtype=np.int64).reshape(-1)
        T = self.X.shape[0]
        if len(self.y) != T or len(self.z) != T:
            raise DimensionError(
                f"len(y)={len(self.y)} and len(z)={len(self.z)} must equal T={T}"
            )
        if T and self.z.min() < 1:
            raise GroupError("group labels must be in 1..G")
        if self.n_groups is None:
            self.n_groups = int(self.z.max()) if T else 0
        elif T and self.z.max() > self.n_groups:
            raise GroupError(f"label {self.z.max()} exceeds n_groups={self.n_groups}")

    @property
    def T(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def G(self) -> int:
        return int(self.n_groups)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], y=self.y[idx], z=self.z[idx])

    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.z - 1, minlength=self.G).astype(np.int64)

    def indicator(self) -> "GroupIndicator":
        return group_indicator(self.z, self.G)

    def to_csv(self, path) -> None:
        """Write columns ``x_1..x_N, y, z``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(self.N)] + ["y", "z"])
            for xi, yi, zi in zip(self.X, self.y, self.z):
                w.writerow([repr(float(v)) for v in xi] + [_fmt_target(yi), int(zi)])

    @classmethod
    def from_csv(cls, path, task="regression") -> "Dataset":
        """Read a file written by :meth:`to_csv`."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-2:] != ["y", "z"]:
            raise SchemaError("expected trailing columns y, z")
        arr = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
        return cls(arr[:, :-2], arr[:, -2], arr[:, -1].astype(np.int64), task=task)


def _fmt_target(v):
    if isinstance(v, (np.integer, int)):
        return int(v)
    return repr(float(v))


@dataclass
class GroupIndicator:
    Z: np.ndarray
    group_sizes: np.ndarray


def group_indicator(z, n_groups: int | None = None) -> GroupIndicator:
    """Binary T x G membership matrix for 1-based labels ``z``."""
    z = np.asarray(z, dtype=np.int64)
    G = int(n_groups if n_groups is not None else z.max())
    Z = np.zeros((len(z), G))
    Z[np.arange(len(z)), z - 1] = 1.0
    return GroupIndicator(Z=Z, group_sizes=Z.sum(axis=0).astype(np.int64))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    N: int = 10
    T1: int = 500
    T2: int = 500
    eigengap_ratio: float = 0.1
    noise_std: float = 0.0
    seed: int = 0
    eig_low: float = 0.5
    eig_high: float = 5.0

    def validate(self) -> None:
        errs = []
        if self.N < 5:
            errs.append(f"N must be >= 5 (Friedman uses five coordinates), got {self.N}")
        if not 0 < self.eigengap_ratio <= 1:
            errs.append(f"eigengap_ratio must lie in (0, 1], got {self.eigengap_ratio}")
        if self.T1 < 1 or self.T2 < 1:
            errs.append("T1 and T2 must be >= 1")
        if self.noise_std < 0:
            errs.append("noise_std must be >= 0")
        if not 0 < self.eig_low < self.eig_high:
            errs.append("need 0 < eig_low < eig_high")
        if errs:
            raise ConfigError(errs)


def random_orthogonal(N: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((N, N)))
    # sign fix makes Q Haar-distributed
    return q * np.sign(np.diag(r))


def group_spectra(cfg: SyntheticConfig) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues of C1 (compressed) and C2 (log-spaced)."""
    lam2 = np.geomspace(cfg.eig_low, cfg.eig_high, cfg.N)
    mid = lam2.mean()
    lam1 = mid + cfg.eigengap_ratio * (lam2 - mid)
    return lam1, lam2


def two_group_covariances(cfg: SyntheticConfig, rng: np.random.Generator):
    lam1, lam2 = group_spectra(cfg)
    Q1 = random_orthogonal(cfg.N, rng)
    Q2 = random_orthogonal(cfg.N, rng)
    C1 = (Q1 * lam1) @ Q1.T
    C2 = (Q2 * lam2) @ Q2.T
    C1 = (C1 + C1.T) / 2
    C2 = (C2 + C2.T) / 2
    for C in (C1, C2):
        if np.linalg.eigvalsh(C).min() <= 0:
            raise ConfigError("constructed covariance is not positive definite")
    return C1, C2


def generate_two_group_gaussian(cfg: SyntheticConfig):
    """Draw group 1 from N(0, C1) and group 2 from N(0, C2), Friedman targets.

    Returns ``(dataset, (C1, C2))``. Rows are ordered group 1 first.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    C1, C2 = two_group_covariances(cfg, rng)
    X1 = rng.multivariate_normal(np.zeros(cfg.N), C1, size=cfg.T1, method="eigh")
    X2 = rng.multivariate_normal(np.zeros(cfg.N), C2, size=cfg.T2, method="eigh")
    X = np.vstack([X1, X2])
    z = np.r_[np.ones(cfg.T1, dtype=np.int64), np.full(cfg.T2, 2, dtype=np.int64)]
    y = friedman_target(X, cfg.noise_std, rng)
    return Dataset(X, y, z, task="regression", n_groups=2), (C1, C2)


def friedman_target(X, noise_std: float = 0.0, seed=None) -> np.ndarray:
    """Friedman #1 response on per-column min-max rescaled features.

    y = 10 sin(pi u1 u2) + 20 (u3 - 0.5)^2 + 10 u4 + 5 u5 + noise
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 5:
        raise DimensionError("friedman_target needs at least five feature columns")
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    span[span == 0] = 1.0
    U = (X - lo) / span
    y = (
        10 * np.sin(np.pi * U[:, 0] * U[:, 1])
        + 20 * (U[:, 2] - 0.5) ** 2
        + 10 * U[:, 3]
        + 5 * U[:, 4]
    )
    if noise_std > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        y = y + rng.normal(0.0, noise_std, size=len(y))
    return y


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

@dataclass
class CsvSchema:
    """Column roles for :func:`load_csv_dataset`.

    ``sensitive_map`` maps raw sensitive values to group ids; without it the
    sorted distinct values become groups 1..G. ``target_map`` does the same
    for classification labels (to 0-based classes).
    """

    features: list[str]
    target: str
    sensitive: str
    categorical: list[str] = field(default_factory=list)
    task: str = "regression"
    sensitive_map: dict | None = None
    target_map: dict | None = None
    delimiter: str = ","
    missing_values: tuple = ("", "NA", "NaN", "nan", "?")

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        d = dict(d)
        d.pop("path", None)
        if "missing_values" in d:
            d["missing_values"] = tuple(d["missing_values"])
        return cls(**d)


@dataclass
class IngestReport:
    T: int
    N: int
    G: int
    group_sizes: list[int]
    dropped: int

    @property
    def group_shares(self) -> list[float]:
        return [s / self.T for s in self.group_sizes]


def load_csv_dataset(path, schema: CsvSchema | dict, return_report: bool = False):
    """Load a delimited file with a header row into a :class:`Dataset`.

    Rows missing any declared field are dropped. Categorical features are
    one-hot encoded over their sorted levels.
    """
    if isinstance(schema, dict):
        schema = CsvSchema.from_dict(schema)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter, skipinitialspace=True)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [r for r in reader if r]

    declared = list(schema.features) + [schema.target, schema.sensitive]
    missing_cols = [c for c in declared if c not in header]
    if missing_cols:
        raise SchemaError(f"{path}: columns not found: {missing_cols}")
    unknown_cat = [c for c in schema.categorical if c not in schema.features]
    if unknown_cat:
        raise SchemaError(f"categorical columns not among features: {unknown_cat}")
    col = {name: i for i, name in enumerate(header)}
    missing = set(schema.missing_values)

    kept = []  # (line number, row)
    for lineno, r in enumerate(rows, start=2):
        r = [v.strip() for v in r]
        if len(r) != len(header):
            raise ParseError(
                f"{path}: line {lineno} has {len(r)} fields, header has {len(header)}",
                row=lineno,
            )
        if any(r[col[c]] in missing for c in declared):
            continue
        kept.append((lineno, r))
    dropped = len(rows) - len(kept)
    if not kept:
        raise SchemaError(f"{path}: no complete rows")

    blocks, names = [], []
    for c in schema.features:
        vals = [r[col[c]] for _, r in kept]
        if c in schema.categorical:
            levels = sorted(set(vals))
            lookup = {v: k for k, v in enumerate(levels)}
            onehot = np.zeros((len(vals), len(levels)))
            onehot[np.arange(len(vals)), [lookup[v] for v in vals]] = 1.0
            blocks.append(onehot)
            names.extend(f"{c}={v}" for v in levels)
        else:
            blocks.append(_parse_numeric(vals, kept, c, path)[:, None])
            names.append(c)
    X = np.hstack(blocks)

    raw_t = [r[col[schema.target]] for _, r in kept]
    if schema.target_map is not None:
        tmap = {str(k): v for k, v in schema.target_map.items()}
        bad = [(ln, v) for (ln, _), v in zip(kept, raw_t) if v not in tmap]
        if bad:
            raise ParseError(f"{path}: line {bad[0][0]}: unmapped target {bad[0][1]!r}", row=bad[0][0])
        y = np.array([tmap[v] for v in raw_t])
    elif schema.task == "classification":
        levels = sorted(set(raw_t))
        y = np.array([levels.index(v) for v in raw_t])
    else:
        y = _parse_numeric(raw_t, kept, schema.target, path)

    raw_s = [r[col[schema.sensitive]] for _, r in kept]
    if schema.sensitive_map is not None:
        smap = {str(k): int(v) for k, v in schema.sensitive_map.items()}
    else:
        smap = {v: k + 1 for k, v in enumerate(sorted(set(raw_s)))}
    bad = [(ln, v) for (ln, _), v in zip(kept, raw_s) if v not in smap]
    if bad:
        raise SchemaError(f"{path}: line {bad[0][0]}: unmapped sensitive value {bad[0][1]!r}")
    z = np.array([smap[v] for v in raw_s], dtype=np.int64)
    G = max(smap.values())

    ds = Dataset(X, y, z, task=schema.task, n_groups=G, feature_names=names)
    if return_report:
        rep = IngestReport(ds.T, ds.N, ds.G, ds.group_sizes().tolist(), dropped)
        return ds, rep
    return ds


def _parse_numeric(vals, kept, column, path) -> np.ndarray:
    out = np.empty(len(vals))
    for i, v in enumerate(vals):
        try:
            out[i] = float(v)
        except ValueError:
            lineno = kept[i][0]
            raise ParseError(
                f"{path}: line {lineno}, column {column!r}: non-numeric value {v!r}",
                row=lineno,
                column=column,
            ) from None
    return out


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

@dataclass
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def inverse_transform(self, X):
        return np.asarray(X, dtype=np.float64) * self.scale + self.mean


def fit_scaler(X) -> Scaler:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # zero-variance columns are centered only
    scale = np.where(std > 0, std, 1.0)
    return Scaler(mean, scale)


def standardize(train: Dataset, others: Sequence[Dataset] = ()):
    """Fit column scaling on ``train`` and apply it to every dataset.

    Returns ``(train_std, [others_std...], scaler)``.
    """
    if train.T == 0:
        raise ParameterError("cannot standardize an empty training set")
    sc = fit_scaler(train.X)
    tr = replace(train, X=sc.transform(train.X))
    rest = [replace(o, X=sc.transform(o.X)) for o in others]
    return tr, rest, sc


def split_indices(ds: Dataset, test_fraction: float, seed=0, stratify_by_group: bool = True):
    if not 0 < test_fraction < 1:
        raise ParameterError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    if not stratify_by_group:
        perm = rng.permutation(ds.T)
        n_test = int(round(test_fraction * ds.T))
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])
    train, test = [], []
    for g in range(1, ds.G + 1):
        idx = np.flatnonzero(ds.z == g)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise StratificationError(f"group {g} has {len(idx)} sample(s); need >= 2 to stratify")
        idx = rng.permutation(idx)
        n_test = min(max(int(round(test_fraction * len(idx))), 1), len(idx) - 1)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(ds: Dataset, test_fraction: float = 0.2, seed=0, stratify_by_group: bool = True):
    """Seeded train/test split; stratification keeps per-group shares."""
    tr, te = split_indices(ds, test_fraction, seed, stratify_by_group)
    return ds.subset(tr), ds.subset(te)


def partition_by_group(ds: Dataset):
    """``[(X_g, y_g, T_g) for g in 1..G]``; empty groups come back with T_g = 0."""
    out = []
    for g in range(1, ds.G + 1):
        m = ds.z == g
        out.append((ds.X[m], ds.y[m], int(m.sum())))
    return out


def binarize_targets(ds: Dataset, threshold: float | None = None) -> Dataset:
    """Turn a regression dataset into a binary one by thresholding ``y``.

    The default threshold is the median, giving balanced classes.
    """
    thr = float(np.median(ds.y)) if threshold is None else threshold
    return replace(ds, y=(ds.y > thr).astype(np.int64), task="classification")


__all__ = [
    "CsvSchema",
    "Dataset",
    "GroupIndicator",
    "IngestReport",
    "Scaler",
    "SyntheticConfig",
    "binarize_targets",
    "fit_scaler",
    "friedman_target",
    "generate_two_group_gaussian",
    "group_indicator",
    "group_spectra",
    "load_csv_dataset",
    "partition_by_group",
    "random_orthogonal",
    "split",
    "split_indices",
    "standardize",
    "two_group_covariances",
]
