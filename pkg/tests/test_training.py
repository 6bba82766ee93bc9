import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvnn.data import Dataset
from fvnn.exceptions import BatchCompositionError, GroupError, ParameterError, TrainingError
from fvnn.experiments import random_gradcheck_instance
from fvnn.model import Architecture, backward, forward, init_model
from fvnn.training import (
    Adam,
    TrainConfig,
    composite_objective,
    fairness_penalty,
    gradient_check,
    objective_and_output_grad,
    relative_error,
    task_loss,
    train,
)


def toy(seed=0, T=40, N=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, N))
    y = X[:, 0] - 0.5 * X[:, 1] + 0.1 * rng.normal(size=T)
    z = np.r_[np.ones(T // 4, dtype=int), np.full(T - T // 4, 2)]
    A = rng.normal(size=(N, N))
    return Dataset(X, y, z), A @ A.T / N


class TestLosses:
    def test_mse_hand(self):
        v, g = task_loss(np.array([1.0, 3.0]), np.array([0.0, 1.0]))
        assert v == 2.5
        np.testing.assert_array_equal(g, [1.0, 2.0])

    def test_cross_entropy_uniform(self):
        v, g = task_loss(np.zeros((2, 4)), np.array([0, 3]), "cross_entropy")
        assert v == pytest.approx(np.log(4))
        np.testing.assert_allclose(g.sum(axis=1), 0, atol=1e-15)

    def test_cross_entropy_stable(self):
        v, _ = task_loss(np.array([[1000.0, 0.0]]), np.array([0]), "cross_entropy")
        assert v == pytest.approx(0.0, abs=1e-12)

    def test_unknown(self):
        with pytest.raises(ParameterError):
            task_loss(np.zeros(2), np.zeros(2), "hinge")


class TestPenalty:
    def test_two_groups(self):
        v, s = fairness_penalty([0.3, 0.1])
        assert v == pytest.approx(0.2)
        np.testing.assert_array_equal(s, [1, -1])

    def test_tie_subgradient_zero(self):
        v, s = fairness_penalty([0.5, 0.5])
        assert v == 0.0
        np.testing.assert_array_equal(s, [0, 0])

    def test_three_groups_pairwise(self):
        v, _ = fairness_penalty([1.0, 2.0, 4.0])
        assert v == 1 + 3 + 2

    def test_one_group(self):
        with pytest.raises(GroupError):
            fairness_penalty([1.0])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=2, max_size=5))
    def test_nonnegative_and_symmetric(self, losses):
        v, _ = fairness_penalty(losses)
        assert v >= 0
        assert v == pytest.approx(fairness_penalty(losses[::-1])[0])


class TestObjective:
    def test_gamma_one_is_task_loss(self):
        ds, C = toy()
        model = init_model(Architecture.build([3], K=2), seed=0)
        val, grads, info = composite_objective(ds, model, C, TrainConfig(gamma=1.0))
        out, cache = forward(model, C, ds.X, training=True)
        ref, g = task_loss(out[:, 0], ds.y)
        assert val == ref and info.penalty is None
        for a, b in zip(grads, backward(model, cache, g[:, None])):
            assert np.array_equal(a, b)

    def test_gamma_zero_is_penalty(self):
        ds, C = toy(1)
        model = init_model(Architecture.build([3], K=1), seed=1)
        val, _, info = composite_objective(ds, model, C, TrainConfig(gamma=0.0))
        out = forward(model, C, ds.X)[0][:, 0]
        l1 = np.mean((out[ds.z == 1] - ds.y[ds.z == 1]) ** 2)
        l2 = np.mean((out[ds.z == 2] - ds.y[ds.z == 2]) ** 2)
        assert val == pytest.approx(abs(l1 - l2), rel=1e-12)
        assert info.penalty == pytest.approx(abs(l1 - l2), rel=1e-12)

    def test_missing_group(self):
        with pytest.raises(BatchCompositionError):
            objective_and_output_grad(np.zeros(3), np.zeros(3), np.array([1, 1, 1]), 2, 0.5, "mse")

    def test_missing_group_ok_at_gamma_one(self):
        val, _ = objective_and_output_grad(np.zeros(3), np.ones(3), np.array([1, 1, 1]), 2, 1.0, "mse")
        assert val.value == 1.0


class TestGradientCheck:
    @pytest.mark.parametrize("i", range(20))
    def test_random_instances(self, i):
        model, ds, C, tc, meta = random_gradcheck_instance(i)
        assert meta["N"] <= 8 and meta["L"] <= 2 and meta["K"] <= 3
        rep = gradient_check(model, ds, C, tc, tolerance=1e-4, eps=1e-5)
        assert rep.passed, (meta, rep.max_rel_error)

    def test_fault_injection(self):
        model, ds, C, tc, _ = random_gradcheck_instance(1)
        good = composite_objective(ds, model, C, tc)[1]
        bad = [g.copy() for g in good]
        bad[0].flat[0] += 0.1 * (abs(bad[0].flat[0]) + 1)
        assert not gradient_check(model, ds, C, tc, analytic=bad).passed

    def test_relative_error_floor(self):
        np.testing.assert_array_equal(relative_error(np.array([0.0]), np.array([0.0])), [0.0])
        assert relative_error(np.array([1e-9]), np.array([0.0]))[0] == pytest.approx(1e-3)


class TestTrain:
    def test_loss_decreases(self):
        ds, C = toy(2, T=80)
        model = init_model(Architecture.build([4], K=2, nonlinearity="tanh"), seed=0)
        trained, hist = train(model, ds, C, TrainConfig(epochs=200, learning_rate=1e-2))
        assert hist.task_loss[-1] < 0.5 * hist.task_loss[0]
        assert len(hist.objective) == 200
        # the input model is left alone
        assert not np.array_equal(trained.coeffs[0], model.coeffs[0])

    def test_deterministic(self):
        ds, C = toy(3)
        model = init_model(Architecture.build([3], K=1), seed=0)
        cfg = TrainConfig(gamma=1.0, epochs=30, batch_size=8, seed=4)
        a, _ = train(model, ds, C, cfg)
        b, _ = train(model, ds, C, cfg)
        for p, q in zip(a.parameters(), b.parameters()):
            assert np.array_equal(p, q)

    def test_minibatch_missing_group(self):
        ds, C = toy(3)
        model = init_model(Architecture.build([3], K=1), seed=0)
        with pytest.raises(BatchCompositionError):
            train(model, ds, C, TrainConfig(gamma=0.5, epochs=5, batch_size=2, seed=0))

    def test_penalty_lowers_gap(self):
        ds, C = toy(4, T=80)
        model = init_model(Architecture.build([4], K=2, nonlinearity="tanh"), seed=0)
        _, h1 = train(model, ds, C, TrainConfig(gamma=1.0, epochs=300))
        _, h0 = train(model, ds, C, TrainConfig(gamma=0.0, epochs=300))
        assert h0.penalty[-1] < h1.penalty[-1]

    def test_early_stop_restores_best(self):
        ds, C = toy(5, T=80)
        model = init_model(Architecture.build([4], K=1), seed=0)
        _, hist = train(model, ds, C, TrainConfig(epochs=400, early_stop=(5, 0.25)))
        assert hist.best_epoch is not None and len(hist.objective) <= 400

    def test_divergence(self):
        ds, C = toy(6)
        model = init_model(Architecture.build([4], K=3, nonlinearity="identity"), seed=0)
        with pytest.raises(TrainingError), np.errstate(all="ignore"):
            train(model, ds, C * 1e80, TrainConfig(epochs=5, optimizer="sgd", learning_rate=1e10))

    def test_invalid_config(self):
        with pytest.raises(ParameterError):
            TrainConfig(gamma=1.5).validate()

    def test_history_csv(self, tmp_path):
        ds, C = toy(7)
        _, hist = train(init_model(Architecture.build([2], K=1)), ds, C,
                        TrainConfig(gamma=0.5, epochs=3))
        hist.to_csv(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0].startswith("epoch,task_loss,penalty,objective")
        assert len(lines) == 4


def test_adam_first_step_is_lr_sized():
    p = [np.array([1.0, -2.0])]
    Adam(p, lr=0.1).step([np.array([5.0, -0.001])])
    np.testing.assert_allclose(p[0], [0.9, -1.9], rtol=1e-6)
