"""Task losses, the group-imbalance penalty, and the training loop.

The objective minimized over the filter coefficients is::

    gamma * L(all samples) + (1 - gamma) * sum_{g<h} |L_g - L_h|

where ``L_g`` is the task loss restricted to group g.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .data import Dataset, split_indices
from .exceptions import (
    BatchCompositionError,
    EmptyDataError,
    GroupError,
    NumericError,
    ParameterError,
    ShapeError,
    TrainingError,
)
from .model import VnnModel, backward, forward

LOSSES = ("mse", "cross_entropy")


@dataclass
class TrainConfig:
    gamma: float = 1.0
    loss: str = "mse"
    epochs: int = 500
    batch_size: int = 0  # 0 = full batch
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    early_stop: tuple[int, float] | None = None  # (patience, validation fraction)
    init_bias_to_target_mean: bool = True

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.loss not in LOSSES:
            raise ParameterError(f"unknown loss {self.loss!r}")
        if self.epochs < 1:
            raise ParameterError("epochs must be positive")
        if self.learning_rate < 0:
            raise ParameterError("learning_rate must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 0:
            raise ParameterError("batch_size must be >= 0")


@dataclass
class TrainHistory:
    task_loss: list[float] = field(default_factory=list)
    penalty: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    group_losses: list[list[float]] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self):
        return len(self.objective)

    def to_csv(self, path) -> None:
        G = len(self.group_losses[0]) if self.group_losses else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "task_loss", "penalty", "objective",
                        *(f"loss_g{g}" for g in range(1, G + 1))])
            for e in range(len(self)):
                w.writerow([e, repr(self.task_loss[e]), repr(self.penalty[e]),
                            repr(self.objective[e]), *map(repr, self.group_losses[e])])


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def task_loss(predictions, targets, kind: str = "mse"):
    """Loss value and its gradient with respect to ``predictions``.

    mse: predictions shape (B,) or (B, 1). cross_entropy: class scores
    (B, n_classes) with integer targets.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets)
    B = predictions.shape[0]
    if B == 0:
        raise EmptyDataError("empty batch")
    if len(targets) != B:
        raise ShapeError(f"{B} predictions for {len(targets)} targets")
    if kind == "mse":
        r = predictions.reshape(B) - targets.astype(np.float64)
        return float(np.mean(r * r)), (2.0 * r / B).reshape(predictions.shape)
    if kind == "cross_entropy":
        s = predictions - predictions.max(axis=1, keepdims=True)
        logp = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
        idx = targets.astype(np.int64)
        value = -float(np.mean(logp[np.arange(B), idx]))
        grad = np.exp(logp)
        grad[np.arange(B), idx] -= 1.0
        return value, grad / B
    raise ParameterError(f"unknown loss {kind!r}")


def fairness_penalty(group_losses):
    """Pairwise absolute loss gaps and a subgradient (sign, 0 at ties)."""
    L = np.asarray(group_losses, dtype=np.float64)
    if len(L) < 2:
        raise GroupError("the imbalance penalty needs at least two groups")
    value = 0.0
    sub = np.zeros_like(L)
    for g, h in combinations(range(len(L)), 2):
        d = L[g] - L[h]
        value += abs(d)
        s = np.sign(d)
        sub[g] += s
        sub[h] -= s
    return float(value), sub


@dataclass
class ObjectiveValue:
    value: float
    task_loss: float
    penalty: float | None
    group_losses: np.ndarray | None


def objective_and_output_grad(outputs, y, z, G: int, gamma: float, loss: str):
    """Composite objective and its gradient w.r.t. the model outputs."""
    task, g_task = task_loss(outputs, y, loss)
    if gamma == 1.0:
        return ObjectiveValue(task, task, None, None), g_task
    grad = gamma * g_task
    losses = np.empty(G)
    grads = []
    for g in range(1, G + 1):
        m = z == g
        if not m.any():
            raise BatchCompositionError(f"group {g} absent from batch while gamma < 1")
        losses[g - 1], gg = task_loss(outputs[m], y[m], loss)
        grads.append((m, gg))
    pen, sub = fairness_penalty(losses)
    for (m, gg), s in zip(grads, sub):
        if s:
            grad[m] += (1.0 - gamma) * s * gg
    return ObjectiveValue(gamma * task + (1.0 - gamma) * pen, task, pen, losses), grad


def _outputs_for_loss(out, loss):
    return out[:, 0] if loss == "mse" else out


def composite_objective(ds: Dataset, model: VnnModel, C, cfg: TrainConfig):
    """``(value, parameter gradients, ObjectiveValue)`` on the whole of ``ds``."""
    out, cache = forward(model, C, ds.X, training=True)
    o = _outputs_for_loss(out, cfg.loss)
    val, g = objective_and_output_grad(o, ds.y, ds.z, ds.G, cfg.gamma, cfg.loss)
    grads = backward(model, cache, g.reshape(out.shape[0], -1))
    return val.value, grads, val


def group_losses(ds: Dataset, model: VnnModel, C, loss: str) -> np.ndarray:
    out, _ = forward(model, C, ds.X)
    o = _outputs_for_loss(out, loss)
    res = []
    for g in range(1, ds.G + 1):
        m = ds.z == g
        res.append(task_loss(o[m], ds.y[m], loss)[0] if m.any() else np.nan)
    return np.array(res)


def evaluate_objective(ds: Dataset, model: VnnModel, C, gamma: float, loss: str) -> ObjectiveValue:
    """Objective terms without gradients; the penalty is always reported."""
    out, _ = forward(model, C, ds.X)
    o = _outputs_for_loss(out, loss)
    task = task_loss(o, ds.y, loss)[0]
    gl = group_losses(ds, model, C, loss)
    pen = fairness_penalty(gl[~np.isnan(gl)])[0] if np.sum(~np.isnan(gl)) >= 2 else 0.0
    return ObjectiveValue(gamma * task + (1 - gamma) * pen, task, pen, gl)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class SGD:
    def __init__(self, params, lr):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for p, g in zip(self.params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(model: VnnModel, ds: Dataset, C, cfg: TrainConfig):
    """Optimize a copy of ``model`` on ``ds``; returns ``(trained, history)``."""
    cfg.validate()
    model = model.copy()
    C = np.asarray(getattr(C, "C", C), dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)

    val_ds = None
    if cfg.early_stop is not None:
        patience, frac = cfg.early_stop
        tr_idx, va_idx = split_indices(ds, frac, seed=cfg.seed, stratify_by_group=True)
        ds, val_ds = ds.subset(tr_idx), ds.subset(va_idx)

    if cfg.init_bias_to_target_mean and model.arch.task == "regression":
        model.readout_bias[:] = ds.y.mean()

    params = model.parameters()
    if cfg.optimizer == "adam":
        opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    else:
        opt = SGD(params, cfg.learning_rate)

    hist = TrainHistory()
    best, best_params, since_best = np.inf, None, 0
    full = cfg.batch_size == 0 or cfg.batch_size >= ds.T
    for epoch in range(cfg.epochs):
        try:
            if full:
                value, grads, info = composite_objective(ds, model, C, cfg)
                if not np.isfinite(value):
                    raise TrainingError(f"non-finite objective at epoch {epoch}", epoch=epoch)
                mon = info if info.penalty is not None else None
                if mon is None:
                    mon = evaluate_objective(ds, model, C, cfg.gamma, cfg.loss)
                opt.step(grads)
            else:
                mon = evaluate_objective(ds, model, C, cfg.gamma, cfg.loss)
                perm = rng.permutation(ds.T)
                for s in range(0, ds.T, cfg.batch_size):
                    value, grads, _ = composite_objective(ds.subset(perm[s:s + cfg.batch_size]),
                                                          model, C, cfg)
                    if not np.isfinite(value):
                        raise TrainingError(f"non-finite objective at epoch {epoch}", epoch=epoch)
                    opt.step(grads)
        except NumericError as exc:
            raise TrainingError(f"divergence at epoch {epoch}: {exc}", epoch=epoch) from exc
        hist.task_loss.append(float(mon.task_loss))
        hist.penalty.append(float(mon.penalty))
        hist.objective.append(float(cfg.gamma * mon.task_loss + (1 - cfg.gamma) * mon.penalty))
        hist.group_losses.append([float(v) for v in mon.group_losses])
        if not np.isfinite(hist.objective[-1]):
            raise TrainingError(f"non-finite objective at epoch {epoch}", epoch=epoch)

        if val_ds is not None:
            v = evaluate_objective(val_ds, model, C, cfg.gamma, cfg.loss).value
            if v < best:
                best, since_best = v, 0
                best_params = [p.copy() for p in model.parameters()]
                hist.best_epoch = epoch
            else:
                since_best += 1
                if since_best > cfg.early_stop[0]:
                    break
    if best_params is not None:
        model.set_parameters(best_params)
    return model, hist


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_parameter: list[float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps near-zero entries meaningful."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradients(ds: Dataset, model: VnnModel, C, cfg: TrainConfig, eps: float = 1e-5):
    def value():
        out, _ = forward(model, C, ds.X)
        o = _outputs_for_loss(out, cfg.loss)
        return objective_and_output_grad(o, ds.y, ds.z, ds.G, cfg.gamma, cfg.loss)[0].value

    grads = []
    for p in model.parameters():
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + eps
            fp = value()
            p[i] = old - eps
            fm = value()
            p[i] = old
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def gradient_check(model: VnnModel, ds: Dataset, C, cfg: TrainConfig, tolerance: float = 1e-4,
                   eps: float = 1e-5, analytic=None) -> GradCheckReport:
    """Compare analytic objective gradients with central differences.

    ``analytic`` overrides the gradients under test (for fault injection).
    """
    if analytic is None:
        analytic = composite_objective(ds, model, C, cfg)[1]
    numeric = numerical_gradients(ds, model, C, cfg, eps)
    per = [float(relative_error(a, n).max()) if a.size else 0.0
           for a, n in zip(analytic, numeric)]
    return GradCheckReport(max(per), per, tolerance)
