"""Prediction error, per-group error, and pairwise group bias."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .data import Dataset
from .exceptions import EmptyDataError, GroupError, SchemaError, ShapeError


def _pair(y_true, y_pred):
    y_true = np.asarray(y_true).reshape(-1)
    y_pred = np.asarray(y_pred).reshape(-1)
    if len(y_true) != len(y_pred):
        raise ShapeError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    if len(y_true) == 0:
        raise EmptyDataError("empty input")
    return y_true, y_pred


def smape(y_true, y_pred) -> float:
    """Symmetric MAPE as a fraction in [0, 2]; a term with y = yhat = 0 counts as 0."""
    y, p = _pair(y_true, y_pred)
    y, p = y.astype(np.float64), p.astype(np.float64)
    num = 2.0 * np.abs(p - y)
    den = np.abs(y) + np.abs(p)
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(terms.mean())


def mse(y_true, y_pred) -> float:
    y, p = _pair(y_true, y_pred)
    return float(np.mean((p.astype(np.float64) - y) ** 2))


def classification_error(y_true, y_pred) -> float:
    """One minus accuracy."""
    y, p = _pair(y_true, y_pred)
    return float(np.mean(y != p))


ERRORS = {"smape": smape, "mse": mse, "error": classification_error}


def pairwise_bias(values) -> float:
    """``sum_{g < h} |v_g - v_h|``."""
    v = np.asarray(values, dtype=np.float64)
    return float(sum(abs(v[g] - v[h]) for g, h in combinations(range(len(v)), 2)))


@dataclass
class EvalReport:
    overall_error: float
    per_group_error: np.ndarray
    bias: float
    counts: np.ndarray
    error_kind: str = "smape"

    def check(self) -> None:
        if abs(self.bias - pairwise_bias(self.per_group_error)) > 1e-12 or self.bias < 0:
            raise ValueError("report bias inconsistent with per-group errors")


def group_bias_report(ds: Dataset, predictions, task: str | None = None,
                      error_kind: str | None = None) -> EvalReport:
    """Per-group and pooled error of ``predictions`` on ``ds`` plus their pairwise bias."""
    task = task or ds.task
    if error_kind is None:
        error_kind = "error" if task == "classification" else "smape"
    fn = ERRORS[error_kind]
    predictions = np.asarray(predictions).reshape(-1)
    if len(predictions) != ds.T:
        raise ShapeError(f"{len(predictions)} predictions for {ds.T} samples")
    per, counts = [], []
    for g in range(1, ds.G + 1):
        m = ds.z == g
        if not m.any():
            raise GroupError(f"group {g} has no samples in the evaluation set")
        per.append(fn(ds.y[m], predictions[m]))
        counts.append(int(m.sum()))
    per = np.array(per)
    rep = EvalReport(fn(ds.y, predictions), per, pairwise_bias(per), np.array(counts), error_kind)
    rep.check()
    return rep


# ---------------------------------------------------------------------------
# results CSV
# ---------------------------------------------------------------------------

META_COLUMNS = ("method", "covariance_kind", "alpha", "beta", "gamma", "m_pcs", "seed")


def schema_columns(G: int) -> list[str]:
    return [*META_COLUMNS, "overall_error", *(f"error_g{g}" for g in range(1, G + 1)), "bias"]


def report_row(report: EvalReport, **meta) -> dict:
    row = {c: meta.get(c) for c in META_COLUMNS}
    row["overall_error"] = report.overall_error
    for g, e in enumerate(report.per_group_error, start=1):
        row[f"error_g{g}"] = float(e)
    row["bias"] = report.bias
    for k, v in meta.items():
        if k not in row:
            row[k] = v
    return row


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_results_csv(path, rows: list[dict], G: int, extra_columns=()) -> None:
    """Schema columns first, then ``extra_columns``; validated after writing."""
    cols = schema_columns(G) + list(extra_columns)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])
    check_results_csv(path, G)


def check_results_csv(path, G: int) -> None:
    """Header must start with the schema columns; bias must match the group errors."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    want = schema_columns(G)
    if rows[0][: len(want)] != want:
        raise SchemaError(f"{path}: header {rows[0][:len(want)]} != {want}")
    gi = [want.index(f"error_g{g}") for g in range(1, G + 1)]
    bi = want.index("bias")
    for n, r in enumerate(rows[1:], start=2):
        errs = [float(r[i]) for i in gi]
        if abs(pairwise_bias(errs) - float(r[bi])) > 1e-9 * max(1.0, abs(float(r[bi]))):
            raise SchemaError(f"{path}: line {n}: bias inconsistent with group errors")
