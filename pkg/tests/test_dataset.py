import numpy as np
import pytest

from scendens.dataset import (
    EPS_CLIP,
    DataError,
    Dataset,
    UnitDataset,
    load_csv,
    save_csv,
    split,
    to_unit,
)
from scendens.marginals import KdeMarginal, MarginalModel


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCsv:
    def test_basic_parse(self, tmp_path):
        ds = load_csv(write(tmp_path, "a,b\n1,2\n3,4\n"))
        assert ds.n == 2 and ds.d == 2
        assert ds.columns == ["a", "b"]
        np.testing.assert_array_equal(ds.values, [[1.0, 2.0], [3.0, 4.0]])

    def test_scientific_notation(self, tmp_path):
        ds = load_csv(write(tmp_path, "x\n1e-3\n-2.5E+2\n"))
        np.testing.assert_allclose(ds.values[:, 0], [1e-3, -250.0])

    def test_nan_cell_names_location(self, tmp_path):
        with pytest.raises(DataError, match=r"line 3.*'b'"):
            load_csv(write(tmp_path, "a,b\n1,2\n3,NaN\n"))

    def test_inf_cell_rejected(self, tmp_path):
        with pytest.raises(DataError, match="non-finite"):
            load_csv(write(tmp_path, "a\ninf\n"))

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataError, match="empty input"):
            load_csv(write(tmp_path, ""))

    def test_header_only(self, tmp_path):
        with pytest.raises(DataError, match="no data rows"):
            load_csv(write(tmp_path, "a,b\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            load_csv(tmp_path / "absent.csv")

    def test_ragged_row(self, tmp_path):
        with pytest.raises(DataError, match="line 3"):
            load_csv(write(tmp_path, "a,b\n1,2\n3\n"))

    def test_non_numeric_cell(self, tmp_path):
        with pytest.raises(DataError, match=r"line 2.*'a'"):
            load_csv(write(tmp_path, "a\nfoo\n"))


class TestSaveRoundtrip:
    def test_identity(self, tmp_path):
        rng = np.random.default_rng(3)
        ds = Dataset(["u", "v w"], rng.normal(scale=1e3, size=(40, 2)))
        path = tmp_path / "out.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert back.columns == ds.columns
        np.testing.assert_allclose(back.values, ds.values, rtol=0, atol=1e-12)


class TestDatasetInvariants:
    def test_rejects_nonfinite(self):
        with pytest.raises(DataError, match="non-finite"):
            Dataset(["a"], np.array([[np.inf]]))

    def test_rejects_duplicate_names(self):
        with pytest.raises(DataError, match="unique"):
            Dataset(["a", "a"], np.zeros((1, 2)))

    def test_rejects_empty_name(self):
        with pytest.raises(DataError, match="nonempty"):
            Dataset(["a", ""], np.zeros((1, 2)))

    def test_rejects_empty_matrix(self):
        with pytest.raises(DataError):
            Dataset([], np.zeros((1, 0)))

    def test_unit_dataset_range(self):
        with pytest.raises(DataError, match="clipped"):
            UnitDataset(np.array([[0.5, 1.0]]))


class TestSplit:
    def test_sizes(self):
        ds = Dataset(["a"], np.arange(10.0)[:, None])
        train, hold = split(ds, 0.2, seed=7)
        assert (train.n, hold.n) == (8, 2)

    def test_deterministic(self):
        ds = Dataset(["a"], np.arange(10.0)[:, None])
        first = split(ds, 0.2, seed=7)
        second = split(ds, 0.2, seed=7)
        np.testing.assert_array_equal(first[0].values, second[0].values)
        np.testing.assert_array_equal(first[1].values, second[1].values)

    @pytest.mark.parametrize("seed", range(5))
    def test_partition(self, seed):
        ds = Dataset(["a"], np.arange(37.0)[:, None])
        train, hold = split(ds, 0.3, seed=seed)
        merged = np.sort(np.concatenate([train.values[:, 0], hold.values[:, 0]]))
        np.testing.assert_array_equal(merged, ds.values[:, 0])

    def test_single_row_errors(self):
        ds = Dataset(["a"], np.array([[1.0]]))
        with pytest.raises(DataError):
            split(ds, 0.5, seed=0)

    def test_degenerate_fraction_errors(self):
        ds = Dataset(["a"], np.arange(10.0)[:, None])
        with pytest.raises(DataError):
            split(ds, 0.01, seed=0)


def _manual_marginals(columns):
    # Symmetric one-center KDEs centered at 0; median is exactly the center.
    margs = [
        KdeMarginal(np.array([0.0]), bandwidth=1.0, support_lo=-12.0, support_hi=12.0)
        for _ in columns
    ]
    return MarginalModel(margs, columns)


class TestToUnit:
    def test_median_maps_to_half(self):
        ds = Dataset(["a"], np.array([[0.0]]))
        u = to_unit(ds, _manual_marginals(["a"]))
        assert u.values[0, 0] == pytest.approx(0.5, abs=1e-12)

    def test_extreme_value_clipped(self):
        m = _manual_marginals(["a"])
        m.marginals[0].support_lo = -1e13
        m.marginals[0].support_hi = 1e13
        ds = Dataset(["a"], np.array([[-1e12]]))
        u = to_unit(ds, m)
        assert u.values[0, 0] == EPS_CLIP

    def test_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(5)
        data = rng.normal(size=(300, 2))
        ds = Dataset(["a", "b"], data)
        m = MarginalModel.fit(ds)
        u = to_unit(ds, m)
        assert u.values.min() > 0.0 and u.values.max() < 1.0

    def test_roundtrip_through_quantile(self):
        rng = np.random.default_rng(11)
        data = rng.normal(size=(400, 1))
        ds = Dataset(["a"], data)
        m = MarginalModel.fit(ds)
        u = to_unit(ds, m)
        for i in range(0, 400, 40):
            x_back = m.marginals[0].quantile(u.values[i, 0])
            assert x_back == pytest.approx(data[i, 0], abs=1e-6)

    def test_dimension_mismatch(self):
        ds = Dataset(["a", "b"], np.zeros((2, 2)))
        with pytest.raises(DataError, match="d="):
            to_unit(ds, _manual_marginals(["a"]))

    def test_column_mismatch(self):
        ds = Dataset(["a"], np.zeros((2, 1)))
        with pytest.raises(DataError, match="column"):
            to_unit(ds, _manual_marginals(["c"]))
