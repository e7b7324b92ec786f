import numpy as np
import pytest

from svgpkan.data import (
    CsvFormatError,
    Dataset,
    Standardizer,
    csv_read,
    csv_write,
    exp1_true_fn,
    exp2_true_fn,
    friedman1_true_fn,
    gen_exp1,
    gen_exp2,
    gen_friedman1,
    split,
    standardize_fit,
)


class TestTrueFunctions:
    def test_exp1_hand_value(self):
        # sin(3 pi / 6) = sin(pi / 2) = 1, plus 1.5 * 1
        X = np.array([[1.0 / 6.0, 1.0, 0.3]])
        assert exp1_true_fn(X)[0] == pytest.approx(2.5, abs=1e-12)

    def test_exp1_third_feature_inert(self, rng):
        X = rng.uniform(-1, 1, (20, 3))
        X2 = X.copy()
        X2[:, 2] = rng.uniform(-1, 1, 20)
        np.testing.assert_array_equal(exp1_true_fn(X), exp1_true_fn(X2))

    def test_exp2_hand_value(self):
        # sin(pi/2) + cos(pi) = 1 - 1 = 0
        assert exp2_true_fn(np.array([[0.5, 1.0]]))[0] == pytest.approx(0.0, abs=1e-12)

    def test_friedman1_hand_value(self):
        # all features 0.5: 10 sin(pi/4) + 0 + 5 + 2.5
        X = np.full((1, 10), 0.5)
        want = 10.0 * np.sin(np.pi / 4.0) + 5.0 + 2.5
        assert friedman1_true_fn(X)[0] == pytest.approx(want, abs=1e-12)
        assert friedman1_true_fn(X)[0] == pytest.approx(14.571067811865476, abs=1e-12)


class TestGenerators:
    def test_exp1_shapes_and_ranges(self):
        ds = gen_exp1(500, seed=3)
        assert ds.X.shape == (500, 3) and ds.y.shape == (500,)
        assert ds.feature_names == ["x1", "x2", "x3"]
        assert np.all(ds.X >= -1) and np.all(ds.X <= 1)
        assert ds.provenance["generator"] == "exp1"

    def test_exp1_noise_level(self):
        ds = gen_exp1(20_000, seed=1)
        resid = ds.y - exp1_true_fn(ds.X)
        assert np.var(resid) == pytest.approx(0.1, rel=0.05)

    def test_exp2_domain(self):
        ds = gen_exp2(300, seed=2, domain=(-1.5, 1.5))
        assert ds.X.shape == (300, 2)
        assert np.all(np.abs(ds.X) <= 1.5)
        assert ds.X.min() < -1.0  # actually uses the wider domain

    def test_friedman_shapes(self):
        ds = gen_friedman1(400, seed=5)
        assert ds.X.shape == (400, 10)
        assert np.all(ds.X >= 0) and np.all(ds.X <= 1)
        with pytest.raises(ValueError):
            gen_friedman1(100, d=4)

    def test_determinism_and_seed_sensitivity(self):
        a, b = gen_exp1(50, seed=9), gen_exp1(50, seed=9)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)
        c = gen_exp1(50, seed=10)
        assert not np.array_equal(a.X, c.X)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            gen_exp1(0)


class TestDatasetValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(X=np.zeros((3, 2)), y=np.zeros(4), feature_names=["a", "b"])

    def test_name_count(self):
        with pytest.raises(ValueError):
            Dataset(X=np.zeros((3, 2)), y=np.zeros(3), feature_names=["a"])

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            Dataset(X=np.array([[np.nan]]), y=np.zeros(1), feature_names=["a"])


class TestSplit:
    def test_partition(self):
        ds = gen_exp1(100, seed=0)
        tr, te = split(ds, test_fraction=0.2, seed=4)
        assert tr.n == 80 and te.n == 20
        combined = np.vstack([tr.X, te.X])
        assert {tuple(r) for r in combined} == {tuple(r) for r in ds.X}

    def test_deterministic(self):
        ds = gen_exp1(100, seed=0)
        a = split(ds, seed=4)[1]
        b = split(ds, seed=4)[1]
        np.testing.assert_array_equal(a.X, b.X)

    def test_bad_fraction(self):
        ds = gen_exp1(10, seed=0)
        with pytest.raises(ValueError):
            split(ds, test_fraction=0.0)
        with pytest.raises(ValueError):
            split(ds, test_fraction=0.001)  # empty test partition


class TestStandardizer:
    def test_fit_gives_zero_mean_unit_sd(self, rng):
        X = rng.uniform(-3, 5, (200, 4))
        y = rng.standard_normal(200) * 2 + 1
        s = standardize_fit(X, y)
        Xs, ys = s.apply(X, y)
        np.testing.assert_allclose(Xs.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(Xs.std(axis=0), 1.0, atol=1e-12)
        assert ys.mean() == pytest.approx(0.0, abs=1e-12)
        assert ys.std() == pytest.approx(1.0, abs=1e-12)

    def test_round_trip(self, rng):
        X = rng.uniform(-3, 5, (50, 2))
        y = rng.standard_normal(50)
        s = standardize_fit(X, y)
        Xb, yb = s.invert(*s.apply(X, y))
        np.testing.assert_allclose(Xb, X, atol=1e-12)
        np.testing.assert_allclose(yb, y, atol=1e-12)

    def test_constant_column_gets_unit_scale(self):
        X = np.column_stack([np.ones(10), np.arange(10.0)])
        s = standardize_fit(X, np.zeros(10))
        assert s.x_scale[0] == 1.0
        assert s.y_scale == 1.0  # constant target too

    def test_dict_round_trip(self, rng):
        s = standardize_fit(rng.uniform(0, 1, (20, 3)), rng.standard_normal(20))
        back = Standardizer.from_dict(s.to_dict())
        np.testing.assert_array_equal(back.x_mean, s.x_mean)
        assert back.y_scale == s.y_scale

    def test_identity(self):
        s = Standardizer.identity(3)
        X = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(s.apply(X), X)


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        ds = gen_exp1(40, seed=6)
        path = tmp_path / "data.csv"
        csv_write(path, ds)
        back = csv_read(path)
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.y, ds.y)
        assert back.feature_names == ds.feature_names
        assert (tmp_path / "data.csv.provenance.json").exists()

    def test_scientific_notation(self, tmp_path):
        path = tmp_path / "sci.csv"
        path.write_text("x1,y\n1e-3,2.5E2\n")
        ds = csv_read(path)
        assert ds.X[0, 0] == 1e-3 and ds.y[0] == 250.0

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(CsvFormatError):
            csv_read(path)

    def test_field_count_error_carries_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x1,y\n1.0,2.0\n3.0\n")
        with pytest.raises(CsvFormatError) as err:
            csv_read(path)
        assert err.value.line == 3

    def test_non_numeric_error(self, tmp_path):
        path = tmp_path / "nan.csv"
        path.write_text("x1,y\noops,2.0\n")
        with pytest.raises(CsvFormatError) as err:
            csv_read(path)
        assert err.value.line == 2

    def test_single_column_rejected(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("y\n1.0\n")
        with pytest.raises(CsvFormatError):
            csv_read(path)
