import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvnn.exceptions import ArchitectureError, NumericError, ShapeError, StateError
from fvnn.model import (
    Architecture,
    backward,
    forward,
    init_model,
    load_model,
    perturbation_bound,
    predict,
    save_model,
)


def random_spd(rng, N):
    A = rng.normal(size=(N, N))
    return A @ A.T / N


def dense_forward(model, C, X):
    """Oracle: explicit matrix powers and per-sample loops."""
    N = C.shape[0]
    powers = [np.linalg.matrix_power(C, k) for k in range(8)]
    outs = []
    for x in X:
        a = [x]
        for l, H in enumerate(model.coeffs):
            F_out, F_in, K1 = H.shape
            z = []
            for f in range(F_out):
                acc = np.zeros(N)
                for j in range(F_in):
                    for k in range(K1):
                        acc += H[f, j, k] * powers[k] @ a[j]
                z.append(acc)
            last = l == len(model.coeffs) - 1
            if not last or model.arch.final_activation:
                nl = model.arch.nonlinearity
                z = [np.maximum(v, 0) if nl == "relu" else np.tanh(v) if nl == "tanh" else v
                     for v in z]
            a = z
        pooled = np.array([v.mean() for v in a])
        outs.append(pooled @ model.readout_weights + model.readout_bias)
    return np.array(outs)


class TestArchitecture:
    def test_build(self):
        arch = Architecture.build([4, 3], K=2)
        assert arch.layers == [(1, 4, 2), (4, 3, 2)]

    @pytest.mark.parametrize("kw", [
        {"layers": []},
        {"layers": [(1, 0, 1)]},
        {"layers": [(1, 2, -1)]},
        {"layers": [(1, 2, 1), (3, 2, 1)]},
        {"layers": [(1, 2, 1)], "nonlinearity": "sigmoid"},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ArchitectureError):
            Architecture(**kw).validate()


class TestForward:
    @pytest.mark.parametrize("nl", ["relu", "tanh", "identity"])
    def test_dense_power_oracle(self, nl):
        rng = np.random.default_rng(0)
        C = random_spd(rng, 6)
        X = rng.normal(size=(5, 6))
        model = init_model(Architecture.build([3, 2], K=3, nonlinearity=nl), seed=1)
        out, _ = forward(model, C, X)
        np.testing.assert_allclose(out, dense_forward(model, C, X), rtol=1e-10, atol=1e-12)

    def test_single_sample(self):
        rng = np.random.default_rng(1)
        C = random_spd(rng, 4)
        model = init_model(Architecture.build([2], K=1), seed=0)
        x = rng.normal(size=4)
        np.testing.assert_allclose(forward(model, C, x)[0], forward(model, C, x[None])[0])

    def test_shape_mismatch(self):
        model = init_model(Architecture.build([2], K=1))
        with pytest.raises(ShapeError):
            forward(model, np.eye(3), np.ones((2, 4)))

    def test_overflow(self):
        model = init_model(Architecture.build([2], K=3, nonlinearity="identity"))
        with pytest.raises(NumericError) as info, np.errstate(over="ignore", invalid="ignore"):
            forward(model, 1e120 * np.eye(3), np.ones((1, 3)))
        assert info.value.layer == 0

    def test_linearity_without_nonlinearity(self):
        rng = np.random.default_rng(2)
        C = random_spd(rng, 5)
        model = init_model(Architecture.build([3, 2], K=2, nonlinearity="identity"), seed=3)
        model.readout_bias[:] = 0
        x1, x2 = rng.normal(size=(2, 5))
        lhs = forward(model, C, 2 * x1 - 3 * x2)[0]
        rhs = 2 * forward(model, C, x1)[0] - 3 * forward(model, C, x2)[0]
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_permutation_invariance(self, seed):
        # relabelling nodes of both C and x leaves the pooled output unchanged
        rng = np.random.default_rng(seed)
        N = int(rng.integers(2, 8))
        C = random_spd(rng, N)
        X = rng.normal(size=(3, N))
        Pm = np.eye(N)[rng.permutation(N)]
        model = init_model(Architecture.build([2, 2], K=2, nonlinearity="tanh"), seed=seed)
        a = forward(model, C, X)[0]
        b = forward(model, Pm @ C @ Pm.T, X @ Pm.T)[0]
        np.testing.assert_allclose(a, b, atol=1e-10)


class TestBackward:
    @pytest.mark.parametrize("nl,final", [("tanh", True), ("relu", True), ("tanh", False)])
    def test_finite_differences(self, nl, final):
        rng = np.random.default_rng(4)
        C = random_spd(rng, 5)
        X = rng.normal(size=(4, 5))
        model = init_model(Architecture.build([3, 2], K=2, nonlinearity=nl, out_dim=2,
                                              task="classification", final_activation=final), seed=5)
        G = rng.normal(size=(4, 2))
        _, cache = forward(model, C, X, training=True)
        grads = backward(model, cache, G)
        eps = 1e-6
        for p, g in zip(model.parameters(), grads):
            num = np.zeros_like(p)
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + eps
                fp = np.sum(G * forward(model, C, X)[0])
                p[i] = old - eps
                fm = np.sum(G * forward(model, C, X)[0])
                p[i] = old
                num[i] = (fp - fm) / (2 * eps)
            np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-8)

    def test_requires_cache(self):
        model = init_model(Architecture.build([2], K=1))
        with pytest.raises(StateError):
            backward(model, None, np.ones((1, 1)))


class TestPredict:
    def test_classification_argmax(self):
        arch = Architecture.build([2], K=1, out_dim=3, task="classification")
        model = init_model(arch)
        model.readout_weights[:] = 0
        model.readout_bias[:] = [0.1, 0.5, 0.5]
        np.testing.assert_array_equal(predict(model, np.eye(3), np.ones((2, 3))), [1, 1])

    def test_regression_shape(self):
        model = init_model(Architecture.build([2], K=1))
        assert predict(model, np.eye(3), np.ones((4, 3))).shape == (4,)


def test_init_deterministic():
    arch = Architecture.build([3, 2], K=2)
    a, b = init_model(arch, seed=7), init_model(arch, seed=7)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p, q)
    assert a.n_params == 1 * 3 * 3 + 3 * 2 * 3 + 2 + 1


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    model = init_model(Architecture.build([3, 2], K=2, nonlinearity="tanh"), seed=9)
    save_model(model, tmp_path / "m.npz")
    loaded = load_model(tmp_path / "m.npz")
    C = random_spd(rng, 4)
    X = rng.normal(size=(6, 4))
    assert np.array_equal(forward(model, C, X)[0], forward(loaded, C, X)[0])
    assert loaded.arch == model.arch


class TestPerturbationBound:
    @pytest.mark.parametrize("seed", range(10))
    def test_bounds_output_change(self, seed):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(3, 9))
        C = random_spd(rng, N)
        E = rng.normal(size=(N, N)) * 1e-2
        C_hat = C + (E + E.T) / 2
        X = rng.normal(size=(5, N))
        model = init_model(Architecture.build([2, 2], K=2, nonlinearity="tanh"), seed=seed)
        diff = np.abs(forward(model, C, X)[0] - forward(model, C_hat, X)[0]).max(axis=1)
        bound = perturbation_bound(model, C, C_hat, X)
        assert np.all(diff <= bound + 1e-12)

    def test_zero_perturbation(self):
        C = np.diag([1.0, 2.0, 3.0])
        model = init_model(Architecture.build([2], K=2))
        np.testing.assert_array_equal(perturbation_bound(model, C, C, np.ones((2, 3))), 0.0)
