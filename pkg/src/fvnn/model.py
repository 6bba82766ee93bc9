"""coVariance neural network with hand-written backpropagation.

Each layer holds a bank of polynomial covariance filters, one per
(output feature, input feature) pair::

    z_f = sum_j sum_k h[f, j, k] C^k x_j,    x_f = sigma(z_f)

The readout averages the final features over the N nodes and applies an
affine map. Signals are stored as arrays of shape (batch, features, nodes).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ArchitectureError, NumericError, ShapeError, StateError
from .spectral import frequency_response, lipschitz_constant, quadratic_slack, stability_bound

FORMAT_VERSION = 1
NONLINEARITIES = ("relu", "tanh", "identity")


@dataclass
class Architecture:
    """``layers`` is a list of ``(F_in, F_out, K)`` triples.

    ``nonlinearity='identity'`` turns the network linear; it exists for
    diagnostics such as closed-form gradient checks.
    """

    layers: list[tuple[int, int, int]]
    nonlinearity: str = "relu"
    out_dim: int = 1
    task: str = "regression"
    final_activation: bool = True

    def __post_init__(self):
        self.layers = [tuple(int(v) for v in layer) for layer in self.layers]
        self.validate()

    @classmethod
    def build(cls, hidden, K: int, **kw) -> "Architecture":
        """Chain ``1 -> hidden[0] -> hidden[1] ...`` with a shared order K."""
        dims = [1, *hidden]
        return cls([(a, b, K) for a, b in zip(dims, dims[1:])], **kw)

    def validate(self) -> None:
        if not self.layers:
            raise ArchitectureError("need at least one layer")
        if self.layers[0][0] != 1:
            raise ArchitectureError("first layer must have F_in = 1")
        for i, (a, b, K) in enumerate(self.layers):
            if a < 1 or b < 1 or K < 0:
                raise ArchitectureError(f"layer {i}: invalid (F_in, F_out, K) = {(a, b, K)}")
            if i and self.layers[i - 1][1] != a:
                raise ArchitectureError(f"layer {i}: F_in={a} does not match previous F_out")
        if self.nonlinearity not in NONLINEARITIES:
            raise ArchitectureError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.task not in ("regression", "classification"):
            raise ArchitectureError(f"unknown task {self.task!r}")
        if self.task == "regression" and self.out_dim != 1:
            raise ArchitectureError("regression readout must have out_dim = 1")
        if self.task == "classification" and self.out_dim < 2:
            raise ArchitectureError("classification readout needs out_dim >= 2")

    def to_dict(self) -> dict:
        return {"layers": [list(t) for t in self.layers], "nonlinearity": self.nonlinearity,
                "out_dim": self.out_dim, "task": self.task,
                "final_activation": self.final_activation}


@dataclass
class VnnModel:
    coeffs: list[np.ndarray]  # per layer: F_out x F_in x (K+1)
    readout_weights: np.ndarray  # F_last x out_dim
    readout_bias: np.ndarray  # out_dim
    arch: Architecture

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order; gradients follow the same order."""
        return [*self.coeffs, self.readout_weights, self.readout_bias]

    def set_parameters(self, params) -> None:
        L = len(self.coeffs)
        self.coeffs = [np.array(p, dtype=np.float64) for p in params[:L]]
        self.readout_weights = np.array(params[L], dtype=np.float64)
        self.readout_bias = np.array(params[L + 1], dtype=np.float64)

    def copy(self) -> "VnnModel":
        return VnnModel([c.copy() for c in self.coeffs], self.readout_weights.copy(),
                        self.readout_bias.copy(), self.arch)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())


@dataclass
class ForwardCache:
    C: np.ndarray
    krylov: list[np.ndarray] = field(default_factory=list)  # per layer (K+1, B, F_in, N)
    pre: list[np.ndarray] = field(default_factory=list)  # per layer (B, F_out, N)
    activated: list[bool] = field(default_factory=list)
    pooled: np.ndarray | None = None


def init_model(arch: Architecture, seed=0) -> VnnModel:
    """Uniform(-a, a) init with ``a = 1/sqrt(fan_in)``; fan-in of a filter bank is F_in (K+1)."""
    arch.validate()
    rng = np.random.default_rng(seed)
    coeffs = []
    for F_in, F_out, K in arch.layers:
        a = 1.0 / np.sqrt(F_in * (K + 1))
        coeffs.append(rng.uniform(-a, a, size=(F_out, F_in, K + 1)))
    F_last = arch.layers[-1][1]
    a = 1.0 / np.sqrt(F_last)
    W = rng.uniform(-a, a, size=(F_last, arch.out_dim))
    b = rng.uniform(-a, a, size=arch.out_dim)
    return VnnModel(coeffs, W, b, arch)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def _krylov(C, S, K):
    """Stack ``S, S C, S C^2, ...`` along a new leading axis (C symmetric)."""
    out = np.empty((K + 1, *S.shape))
    out[0] = S
    for k in range(1, K + 1):
        out[k] = out[k - 1] @ C
    return out


def _matrix(C):
    return np.asarray(getattr(C, "C", C), dtype=np.float64)


def forward(model: VnnModel, C, X, training: bool = False):
    """Raw outputs of shape (B, out_dim), plus a cache in training mode."""
    C = _matrix(C)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    N = C.shape[0]
    if X.shape[1] != N:
        raise ShapeError(f"inputs have dimension {X.shape[1]}, covariance is {N} x {N}")
    arch = model.arch
    cache = ForwardCache(C) if training else None
    a = X[:, None, :]
    L = len(model.coeffs)
    for l, H in enumerate(model.coeffs):
        K = H.shape[2] - 1
        P = _krylov(C, a, K)
        z = np.einsum("fjk,kbjn->bfn", H, P, optimize=True)
        use_act = l < L - 1 or arch.final_activation
        a = _act(arch.nonlinearity, z) if use_act else z
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite activation in layer {l}", layer=l)
        if training:
            cache.krylov.append(P)
            cache.pre.append(z)
            cache.activated.append(use_act)
    pooled = a.mean(axis=2)
    out = pooled @ model.readout_weights + model.readout_bias
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite readout", layer=L)
    if training:
        cache.pooled = pooled
        return out, cache
    return out, None


def backward(model: VnnModel, cache: ForwardCache | None, grad_out) -> list[np.ndarray]:
    """Gradients of ``sum(grad_out * outputs)`` w.r.t. :meth:`VnnModel.parameters`."""
    if cache is None or cache.pooled is None:
        raise StateError("backward needs the cache of a training-mode forward pass")
    g = np.asarray(grad_out, dtype=np.float64).reshape(cache.pooled.shape[0], -1)
    C = cache.C
    N = C.shape[0]
    dW = cache.pooled.T @ g
    db = g.sum(axis=0)
    dpooled = g @ model.readout_weights.T
    da = np.repeat(dpooled[:, :, None] / N, N, axis=2)
    dH = [None] * len(model.coeffs)
    for l in range(len(model.coeffs) - 1, -1, -1):
        H, P, z = model.coeffs[l], cache.krylov[l], cache.pre[l]
        if cache.activated[l]:
            a = _act(model.arch.nonlinearity, z)
            dz = da * _act_grad(model.arch.nonlinearity, z, a)
        else:
            dz = da
        dH[l] = np.einsum("bfn,kbjn->fjk", dz, P, optimize=True)
        if l:
            Q = _krylov(C, dz, H.shape[2] - 1)
            da = np.einsum("fjk,kbfn->bjn", H, Q, optimize=True)
    return [*dH, dW, db]


def predict(model: VnnModel, C, X) -> np.ndarray:
    """Regression: scalar outputs. Classification: argmax class (ties -> lower index)."""
    out, _ = forward(model, C, X)
    if model.arch.task == "classification":
        return np.argmax(out, axis=1)
    return out[:, 0]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_model(model: VnnModel, path) -> None:
    arrays = {f"coeffs_{i}": c for i, c in enumerate(model.coeffs)}
    np.savez(
        path,
        format_version=np.array(FORMAT_VERSION),
        arch=np.array(json.dumps(model.arch.to_dict(), sort_keys=True)),
        readout_weights=model.readout_weights,
        readout_bias=model.readout_bias,
        **arrays,
    )


def load_model(path) -> VnnModel:
    with np.load(path, allow_pickle=False) as f:
        version = int(f["format_version"])
        if version != FORMAT_VERSION:
            raise StateError(f"unsupported model format version {version}")
        arch = Architecture(**json.loads(str(f["arch"])))
        coeffs = [f[f"coeffs_{i}"].copy() for i in range(len(arch.layers))]
        return VnnModel(coeffs, f["readout_weights"].copy(), f["readout_bias"].copy(), arch)


# ---------------------------------------------------------------------------
# stability of a whole model
# ---------------------------------------------------------------------------

def perturbation_bound(model: VnnModel, C, C_hat, X, error_norm: float | None = None) -> np.ndarray:
    """Per-sample bound on ``|outputs(C) - outputs(C_hat)|`` (max over output dims).

    Each filter difference is bounded by the first-order stability bound with
    its own Lipschitz constant plus the quadratic allowance; the bounds are
    propagated through the layers using the 1-Lipschitz nonlinearity and the
    node-mean readout (``|mean(v)| <= ||v|| / sqrt(N)``).
    """
    C, C_hat = _matrix(C), _matrix(C_hat)
    N = C.shape[0]
    if error_norm is None:
        error_norm = float(np.linalg.norm(C - C_hat, 2))
    lam = np.linalg.eigvalsh(C)
    lam_hat = np.linalg.eigvalsh(C_hat)
    spectrum = np.concatenate([lam, lam_hat])
    lam_max = float(np.abs(spectrum).max())
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    a = X[:, None, :]
    delta = np.zeros((X.shape[0], 1))
    L = len(model.coeffs)
    for l, H in enumerate(model.coeffs):
        F_out, F_in, _ = H.shape
        norms = np.linalg.norm(a, axis=2)  # (B, F_in)
        fb = np.empty((F_out, F_in))
        hn = np.empty((F_out, F_in))
        for f in range(F_out):
            for j in range(F_in):
                h = H[f, j]
                P = lipschitz_constant(h, spectrum)
                fb[f, j] = stability_bound(P, N, error_norm) + quadratic_slack(h, error_norm, lam_max)
                hn[f, j] = np.abs(frequency_response(h, lam_hat)).max()
        delta = norms @ fb.T + delta @ hn.T
        Pk = _krylov(C, a, H.shape[2] - 1)
        z = np.einsum("fjk,kbjn->bfn", H, Pk, optimize=True)
        use_act = l < L - 1 or model.arch.final_activation
        a = _act(model.arch.nonlinearity, z) if use_act else z
    dpool = delta / np.sqrt(N)
    return (dpool @ np.abs(model.readout_weights)).max(axis=1)
