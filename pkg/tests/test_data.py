import numpy as np
import pytest

from occuhet import DataError, Dataset, FrequencyTable, aggregate, load_dataset, parse_formula


def test_trout_csv_loads(trout_csv):
    ds = load_dataset(trout_csv, visits=["y1", "y2", "y3"], family="binomial", site_id="site")
    assert ds.n == 77
    assert ds.visits == 3
    freq = aggregate(ds)
    assert dict(freq.counts) == {0: 45, 1: 11, 2: 17, 3: 4}
    assert freq.n == 77 and freq.m_plus == 32 and freq.m0 == 45


def test_total_column_without_covariates(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("y\n0\n2\n5\n")
    ds = load_dataset(path, y="y")
    assert ds.n == 3
    np.testing.assert_array_equal(ds.design("1"), np.ones((3, 1)))


def test_missing_covariate_is_an_error(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("y,elev\n1,2.0\n0,\n")
    with pytest.raises(DataError, match="missing covariate"):
        load_dataset(path, y="y", covariates=["elev"])


def test_non_numeric_cell(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("y,elev\n1,abc\n")
    with pytest.raises(DataError, match="non-numeric"):
        load_dataset(path, y="y", covariates=["elev"])


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope.csv", y="y")


def test_binomial_total_above_visits(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("y\n1\n4\n")
    with pytest.raises(DataError):
        load_dataset(path, y="y", family="binomial", n_visits=3)


def test_per_visit_sum_matches_presummed(tmp_path):
    a = tmp_path / "a.csv"
    a.write_text("v1,v2,x\n1,2,0.5\n0,0,1.5\n3,1,2.5\n")
    b = tmp_path / "b.csv"
    b.write_text("y,x\n3,0.5\n0,1.5\n4,2.5\n")
    da = load_dataset(a, visits=["v1", "v2"], covariates=["x"])
    db = load_dataset(b, y="y", covariates=["x"])
    assert aggregate(da) == aggregate(db)


def test_degenerate_tables():
    assert dict(FrequencyTable.from_counts([0, 0, 0]).counts) == {0: 3}
    assert FrequencyTable.from_counts([0, 0, 0]).m_plus == 0
    one = FrequencyTable.from_counts([5])
    assert (one.n, one.m_plus, dict(one.counts)) == (1, 1, {5: 1})


def test_aggregate_is_permutation_invariant():
    rng = np.random.default_rng(1)
    y = rng.poisson(1.0, 50)
    assert FrequencyTable.from_counts(y) == FrequencyTable.from_counts(rng.permutation(y))


def test_parse_formula():
    assert parse_formula("1") == []
    assert parse_formula("1 + a + b") == ["a", "b"]
    with pytest.raises(ValueError):
        parse_formula("1 + a*b")


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset([1, -1], 1)
    with pytest.raises(DataError):
        Dataset([1, 4], 3, family="binomial")
    with pytest.raises(DataError):
        Dataset([], 1)


def test_design_unknown_column():
    ds = Dataset([0, 1], 1, {"x": [0.0, 1.0]})
    with pytest.raises(DataError):
        ds.design("1 + z")
