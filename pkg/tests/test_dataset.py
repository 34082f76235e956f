import numpy as np
import pytest

from fairacq.dataset import (
    Schema, SplitSpec, SyntheticSpec, group_stats, load_csv, split, synthesize,
)
from fairacq.errors import (
    ConfigError, EmptyDatasetError, EncodingError, GroupError, MissingFileError, RowError,
    SchemaError, SplitError,
)

from conftest import make_dataset

NUMERIC_SCHEMA = {
    "features": ["a", "b", "sex"],
    "sensitive": {"column": "sex", "map": {"M": 1, "F": 0}},
    "label": {"column": "y", "map": {"no": 0, "yes": 1}},
}


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_dataset_rejects_bad_columns():
    with pytest.raises(ValueError):
        make_dataset([[1.0], [2.0]], [0, 2], [0, 1])
    with pytest.raises(ValueError):
        make_dataset([[1.0], [np.nan]], [0, 1], [0, 1])
    with pytest.raises(ValueError):
        make_dataset([[1.0], [2.0]], [0, 1], [0, 1], ids=[5, 5])


def test_dataset_is_read_only_and_selects_by_id():
    d = make_dataset([[1.0], [2.0], [3.0]], [0, 1, 1], [0, 1, 0], ids=[10, 20, 30])
    with pytest.raises(ValueError):
        d.X[0, 0] = 9.0
    sub = d.select_ids([30, 10])
    assert sub.ids.tolist() == [30, 10]
    assert sub.X[:, 0].tolist() == [3.0, 1.0]
    ex = d[1]
    assert (ex.label, ex.sensitive, ex.id) == (1, 1, 20)
    grown = d.with_example(ex.__class__(np.array([4.0]), 0, 1, 40))
    assert len(grown) == 4 and grown.ids[-1] == 40


def test_load_csv_numeric_passthrough(tmp_path):
    path = write(tmp_path, "a,b,sex,y\n1.5,-2,M,yes\n0,3.25,F,no\n7,8,F,yes\n-1e3,0.5,M,no\n")
    d = load_csv(path, Schema.from_dict(NUMERIC_SCHEMA))
    np.testing.assert_array_equal(d.X[:, :2], [[1.5, -2], [0, 3.25], [7, 8], [-1e3, 0.5]])
    assert d.X[:, 2].tolist() == [1, 0, 0, 1]
    assert d.y.tolist() == [1, 0, 1, 0]
    assert d.s.tolist() == [1, 0, 0, 1]
    assert d.ids.tolist() == [0, 1, 2, 3]
    assert d.sensitive_index == 2


def test_load_csv_categorical_encodings(tmp_path):
    schema = dict(NUMERIC_SCHEMA, features=["a", "c", "o", "sex"], categorical={
        "c": {"encoding": "ordinal", "values": ["lo", "mid", "hi"]},
        "o": {"encoding": "onehot", "values": ["r", "g"]},
    })
    path = write(tmp_path, "a,c,o,sex,y\n1,hi,g,M,yes\n2,lo,r,F,no\n")
    d = load_csv(path, Schema.from_dict(schema))
    assert d.feature_names == ("a", "c", "o=r", "o=g", "sex")
    np.testing.assert_array_equal(d.X, [[1, 2, 0, 1, 1], [2, 0, 1, 0, 0]])


def test_load_csv_errors(tmp_path):
    schema = Schema.from_dict(NUMERIC_SCHEMA)
    with pytest.raises(SchemaError):
        load_csv(write(tmp_path, "a,sex,y\n1,M,yes\n"), schema)
    with pytest.raises(EncodingError):
        load_csv(write(tmp_path, "a,b,sex,y\n1,2,M,maybe\n"), schema)
    with pytest.raises(EncodingError):
        load_csv(write(tmp_path, "a,b,sex,y\n1,2,X,yes\n"), schema)
    with pytest.raises(RowError) as info:
        load_csv(write(tmp_path, "a,b,sex,y\n1,2,M,yes\n1,oops,F,no\n"), schema)
    assert info.value.row == 2
    with pytest.raises(EmptyDatasetError):
        load_csv(write(tmp_path, "a,b,sex,y\n"), schema)
    with pytest.raises(MissingFileError):
        load_csv(tmp_path / "absent.csv", schema)


def test_schema_validation():
    with pytest.raises(SchemaError):
        Schema.from_dict({"features": ["a"]})
    bad = dict(NUMERIC_SCHEMA, label={"column": "y", "map": {"no": 0, "yes": 2}})
    with pytest.raises(SchemaError):
        Schema.from_dict(bad)


def test_group_stats_hand_case():
    # cells {(0,1):1, (0,0):1, (1,1):2, (1,0):0}
    d = make_dataset(np.zeros(4), [1, 0, 1, 1], [0, 0, 1, 1])
    gs = group_stats(d)
    assert gs.counts[(0, 1)] == 1 and gs.counts[(1, 0)] == 0
    assert gs.delta_br == pytest.approx(-0.5)
    balanced = make_dataset(np.zeros(4), [1, 0, 1, 0], [0, 0, 1, 1])
    assert group_stats(balanced).delta_br == 0.0
    with pytest.raises(GroupError):
        group_stats(make_dataset(np.zeros(2), [1, 0], [1, 1]))


def _spec(base_rates, n=20_000, seed=0):
    means = np.zeros((2, 2, 3))
    means[:, 1, :] = 1.0
    return SyntheticSpec(n, 3, 0.5, means, np.ones(3), base_rates, seed)


@pytest.mark.parametrize("rates, expected", [((0.2, 0.2), 0.0), ((0.1, 0.5), -0.4)])
def test_synthesize_base_rates(rates, expected):
    d = synthesize(_spec(rates))
    assert len(d) == 20_000 and d.p == 4
    assert group_stats(d).delta_br == pytest.approx(expected, abs=0.02)
    # the generator's own cells agree with a direct count
    y0 = d.y[d.s == 0].mean()
    assert y0 == pytest.approx(rates[0], abs=0.02)


def test_synthesize_deterministic_and_validated():
    a, b = synthesize(_spec((0.3, 0.4), n=500, seed=7)), synthesize(_spec((0.3, 0.4), n=500, seed=7))
    assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
    with pytest.raises(EmptyDatasetError):
        synthesize(_spec((0.3, 0.4), n=0))
    with pytest.raises(ConfigError):
        _spec((1.3, 0.4))
    with pytest.raises(ConfigError):
        SyntheticSpec(10, 2, 0.5, np.zeros((2, 2, 2)), [1.0, -1.0], (0.5, 0.5))


def test_synthetic_spec_round_trip():
    spec = SyntheticSpec.hiring(n=100, seed=4)
    again = SyntheticSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()
    assert SyntheticSpec.from_dict({"preset": "biased_pool", "n": 50}).n == 50
    with pytest.raises(ConfigError):
        SyntheticSpec.from_dict({"preset": "nope"})


def test_split_sizes_and_disjointness():
    data = synthesize(_spec((0.4, 0.5)))
    train, test, pool = split(data, SplitSpec(rho=1.0, seed=1))
    assert (len(train), len(test), len(pool)) == (1000, 4000, 15000)
    ids = [set(p.ids.tolist()) for p in (train, test, pool)]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
    assert set().union(*ids) == set(data.ids.tolist())


def test_split_uniform_when_rho_is_one():
    data = synthesize(_spec((0.4, 0.5)))
    train, _, _ = split(data, SplitSpec(rho=1.0, seed=2))
    q = data.s.mean()
    sd = np.sqrt(q * (1 - q) / len(train))
    assert abs(train.s.mean() - q) <= 3 * sd


def test_split_thins_protected_positives():
    data = synthesize(_spec((0.4, 0.5)))
    train, _, pool = split(data, SplitSpec(rho=0.25, seed=0))

    def pp_rate(d):
        return np.mean((d.s == 0) & (d.y == 1))

    assert pp_rate(train) / pp_rate(pool) == pytest.approx(0.25, abs=0.05)


def test_split_deterministic_and_errors():
    data = synthesize(_spec((0.4, 0.5), n=2000))
    a = split(data, SplitSpec(seed=9))
    b = split(data, SplitSpec(seed=9))
    for x, y in zip(a, b):
        assert x.ids.tolist() == y.ids.tolist()
    with pytest.raises(SplitError):
        split(synthesize(_spec((0.4, 0.5), n=300)), SplitSpec())
    one_group = make_dataset(np.zeros(400), np.arange(400) % 2, np.ones(400, dtype=int))
    with pytest.raises(SplitError):
        split(one_group, SplitSpec())
    with pytest.raises(ConfigError):
        SplitSpec(rho=0.0)


def test_adult_schema_encodes_eight_features(tmp_path):
    from pathlib import Path
    header = ("age,workclass,fnlwgt,education,education-num,marital-status,occupation,"
              "relationship,race,sex,capital-gain,capital-loss,hours-per-week,native-country,income")
    rows = [
        "39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, "
        "Male, 2174, 0, 40, United-States, <=50K",
        "50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, "
        "White, Male, 0, 0, 13, United-States, >50K",
        "38, Private, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, "
        "Female, 0, 0, 40, United-States, <=50K.",
    ]
    path = write(tmp_path, "\n".join([header, *rows]) + "\n", "adult.csv")
    schema = Schema.load(Path(__file__).resolve().parents[1] / "configs" / "adult_schema.json")
    d = load_csv(path, schema)
    assert len(d) == 3 and d.p == 8
    assert d.s.tolist() == [1, 1, 0] and d.y.tolist() == [0, 1, 0]
    assert d.X[1, d.feature_names.index("workclass")] == 1.0
