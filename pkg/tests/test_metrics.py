import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fvnn.data import Dataset
from fvnn.exceptions import EmptyDataError, GroupError, SchemaError, ShapeError
from fvnn.metrics import (
    check_results_csv,
    classification_error,
    group_bias_report,
    mse,
    pairwise_bias,
    report_row,
    schema_columns,
    smape,
    write_results_csv,
)


class TestSmape:
    def test_hand(self):
        # |1-3| * 2 / (1+3) = 1, |2-2| = 0
        assert smape([1.0, 2.0], [3.0, 2.0]) == 0.5

    def test_zero_zero_term(self):
        assert smape([0.0, 1.0], [0.0, 1.0]) == 0.0

    def test_sign_flip_is_max(self):
        assert smape([1.0], [-1.0]) == 2.0

    def test_empty(self):
        with pytest.raises(EmptyDataError):
            smape([], [])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6)), min_size=1, max_size=20))
    def test_range_and_symmetry(self, pairs):
        y, p = np.array(pairs).T
        v = smape(y, p)
        assert 0.0 <= v <= 2.0
        assert v == pytest.approx(smape(p, y))


def test_mse_hand():
    assert mse([0.0, 0.0], [1.0, 3.0]) == 5.0


def test_classification_error():
    assert classification_error([0, 1, 1, 0], [0, 1, 0, 0]) == 0.25


def test_length_mismatch():
    with pytest.raises(ShapeError):
        mse([1.0], [1.0, 2.0])


class TestBias:
    def test_two_groups(self):
        assert pairwise_bias([0.1, 0.4]) == pytest.approx(0.3)

    def test_report(self):
        ds = Dataset(np.zeros((4, 1)), np.array([1.0, 1.0, 2.0, 2.0]), [1, 1, 2, 2])
        rep = group_bias_report(ds, np.array([1.0, 3.0, 2.0, 2.0]), error_kind="mse")
        np.testing.assert_array_equal(rep.per_group_error, [2.0, 0.0])
        assert rep.bias == 2.0 and rep.overall_error == 1.0
        np.testing.assert_array_equal(rep.counts, [2, 2])

    def test_classification_default(self):
        ds = Dataset(np.zeros((4, 1)), np.array([0, 1, 0, 1]), [1, 1, 2, 2], task="classification")
        rep = group_bias_report(ds, np.array([0, 0, 0, 1]))
        assert rep.error_kind == "error"
        np.testing.assert_array_equal(rep.per_group_error, [0.5, 0.0])

    def test_empty_group(self):
        ds = Dataset(np.zeros((2, 1)), np.zeros(2), [1, 1], n_groups=2)
        with pytest.raises(GroupError):
            group_bias_report(ds, np.zeros(2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        T = 30
        y = rng.normal(size=T)
        p = rng.normal(size=T)
        z = np.r_[[1, 2, 3], rng.integers(1, 4, size=T - 3)]
        perm = rng.permutation(T)
        a = group_bias_report(Dataset(np.zeros((T, 1)), y, z), p, error_kind="mse")
        b = group_bias_report(Dataset(np.zeros((T, 1)), y[perm], z[perm]), p[perm], error_kind="mse")
        np.testing.assert_allclose(a.per_group_error, b.per_group_error, rtol=1e-12)
        assert a.bias == pytest.approx(b.bias, rel=1e-12)


class TestResultsCsv:
    def rows(self):
        ds = Dataset(np.zeros((4, 1)), np.array([1.0, 2.0, 3.0, 4.0]), [1, 1, 2, 2])
        rep = group_bias_report(ds, np.array([1.1, 2.0, 2.5, 4.0]))
        return [report_row(rep, method="fvnn", covariance_kind="sample", gamma=1.0, seed=0)]

    def test_schema(self, tmp_path):
        write_results_csv(tmp_path / "r.csv", self.rows(), 2)
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0].split(",") == schema_columns(2)
        assert lines[1].startswith("fvnn,sample,,,1.0,,0,")

    def test_extra_columns(self, tmp_path):
        rows = self.rows()
        rows[0]["T1"] = 7
        write_results_csv(tmp_path / "r.csv", rows, 2, extra_columns=["T1"])
        assert (tmp_path / "r.csv").read_text().splitlines()[1].endswith(",7")

    def test_check_rejects_bad_bias(self, tmp_path):
        write_results_csv(tmp_path / "r.csv", self.rows(), 2)
        text = (tmp_path / "r.csv").read_text().splitlines()
        cells = text[1].split(",")
        cells[-1] = "0.9"
        (tmp_path / "r.csv").write_text("\n".join([text[0], ",".join(cells)]) + "\n")
        with pytest.raises(SchemaError):
            check_results_csv(tmp_path / "r.csv", 2)

    def test_check_rejects_header(self, tmp_path):
        (tmp_path / "r.csv").write_text("a,b\n")
        with pytest.raises(SchemaError):
            check_results_csv(tmp_path / "r.csv", 2)

    def test_float_roundtrip(self, tmp_path):
        rows = self.rows()
        write_results_csv(tmp_path / "r.csv", rows, 2)
        cell = (tmp_path / "r.csv").read_text().splitlines()[1].split(",")[7]
        assert float(cell) == rows[0]["overall_error"]
