import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kpc.data import (Column, Dataset, MetricSpec, VariableRoles, distance, load_csv, load_schema,
                      standardize, write_csv, write_schema)
from kpc.errors import (ConfigError, EmptyData, KpcError, IncompatibleMetric, InvalidRotation, MalformedCsv,
                        UnknownColumn, ZeroVariance)
from kpc.simulate import rot_z


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


ROT_HEADER = ",".join(f"r[{k}]" for k in range(9))


def test_two_numeric_columns(tmp_path):
    ds = load_csv(_write(tmp_path, "a,b\n1,2\n3,4\n5,6.5\n"))
    assert ds.n == 3
    assert ds.names == ["a", "b"]
    assert ds.kinds([0, 1]) == ["numeric", "numeric"]
    np.testing.assert_array_equal(ds.column("b").values, [2, 4, 6.5])


def test_identity_rotation_block(tmp_path):
    p = _write(tmp_path, f"{ROT_HEADER},y\n1,0,0,0,1,0,0,0,1,2.0\n")
    ds = load_csv(p, {"r": "rotation9"})
    assert ds.column("r").kind == "rotation"
    np.testing.assert_array_equal(ds.column("r").values[0], np.eye(3))


def test_reflection_rejected(tmp_path):
    p = _write(tmp_path, f"{ROT_HEADER}\n1,0,0,0,1,0,0,0,-1\n")
    with pytest.raises(InvalidRotation):
        load_csv(p, {"r": "rotation9"})


@pytest.mark.parametrize("text, err", [
    ("a,b\n1,2\n3\n", MalformedCsv),
    ("a,b\n1,x\n", MalformedCsv),
    ("a,b\n1,\n", MalformedCsv),
    ("a,b\n1,nan\n", MalformedCsv),
    ("a,b\n", EmptyData),
    ("", EmptyData),
])
def test_malformed_files(tmp_path, text, err):
    with pytest.raises(err):
        load_csv(_write(tmp_path, text))


def test_schema_file_and_categorical(tmp_path):
    p = _write(tmp_path, "g,v\nb,1\na,2\nb,3\n")
    sp = _write(tmp_path, "# kinds\ng = categorical\nv: numeric\n", "s.txt")
    assert load_schema(sp) == {"g": "categorical", "v": "numeric"}
    ds = load_csv(p, sp)
    col = ds.column("g")
    assert col.kind == "categorical"
    np.testing.assert_array_equal(col.values, [0, 1, 0])  # first-appearance codes
    assert tuple(col.labels) == ("b", "a")


def test_schema_mentions_missing_column(tmp_path):
    with pytest.raises(MalformedCsv):
        load_csv(_write(tmp_path, "a\n1\n"), {"b": "numeric"})


def test_roundtrip_bit_identical(tmp_path, rng):
    mats = rot_z(rng.uniform(-3, 3, 6))
    ds = Dataset.from_arrays({"x": rng.standard_normal(6) * 1e-7, "r": mats,
                              "g": np.array(list("abcabc"))})
    schema = write_csv(ds, tmp_path / "o.csv")
    write_schema(schema, tmp_path / "o.schema")
    back = load_csv(tmp_path / "o.csv", tmp_path / "o.schema")
    for c in ds.names:
        np.testing.assert_array_equal(back.column(c).values, ds.column(c).values)
    again = tmp_path / "o2.csv"
    write_csv(back, again)
    assert again.read_bytes() == (tmp_path / "o.csv").read_bytes()


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_roundtrip_property(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "v.csv"
    ds = Dataset.from_arrays({"v": np.array(values)})
    write_csv(ds, path)
    np.testing.assert_array_equal(load_csv(path).column("v").values, ds.column("v").values)


def test_standardize_examples():
    ds = Dataset.from_arrays({"a": np.array([1.0, 3.0])})
    np.testing.assert_allclose(standardize(ds, ["a"]).column("a").values, [-math.sqrt(0.5), math.sqrt(0.5)], atol=1e-15)
    with pytest.raises(ZeroVariance):
        standardize(Dataset.from_arrays({"c": np.array([5.0, 5, 5])}), ["c"])


@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=30).filter(lambda v: np.std(v) > 1e-3))
def test_standardize_idempotent(values):
    ds = Dataset.from_arrays({"a": np.array(values)})
    once = standardize(ds, ["a"])
    twice = standardize(once, ["a"])
    v = once.column("a").values
    assert abs(v.mean()) < 1e-9 and abs(v.var(ddof=1) - 1) < 1e-9
    np.testing.assert_allclose(twice.column("a").values, v, atol=1e-12)


def test_distance_examples():
    ds = Dataset.from_arrays({"a": np.array([0.0, 3.0]), "b": np.array([0.0, 4.0]),
                              "g": np.array(["u", "u"]), "r": np.stack([np.eye(3), np.diag([-1.0, -1, 1])])})
    assert distance(MetricSpec("euclidean"), ds, ["a", "b"], 0, 1) == 5.0
    assert distance(MetricSpec("hamming01"), ds, ["g"], 0, 1) == 0.0
    assert distance(MetricSpec("frobenius"), ds, ["r"], 0, 1) == pytest.approx(2.8284271247461903, abs=1e-15)
    with pytest.raises(IncompatibleMetric):
        distance(MetricSpec("euclidean"), ds, ["g"], 0, 1)


def _mixed(rng, n=12):
    return Dataset.from_arrays({
        "a": rng.standard_normal(n), "b": rng.standard_normal(n),
        "g": rng.choice(list("pqr"), n), "r": rot_z(rng.uniform(-3, 3, n)),
    })


@pytest.mark.parametrize("weights", [None, (1.0, 2.0, 0.5, 3.0)])
def test_product_metric_axioms(rng, weights):
    ds = _mixed(rng)
    m = MetricSpec("product", weights)
    cols = ["a", "b", "g", "r"] if weights is None else ["a", "b", "g", "r"]
    d = m.pairwise(ds, cols)
    assert np.allclose(d, d.T) and np.all(d >= 0) and np.all(np.diag(d) == 0)
    n = ds.n
    for i in range(n):
        for j in range(n):
            assert np.all(d[i, j] <= d[i, :] + d[:, j] + 1e-9)
            assert d[i, j] == pytest.approx(distance(m, ds, cols, i, j), abs=1e-12)


def test_roles_validation():
    ds = Dataset.from_arrays({"x": np.arange(3.0), "y": np.arange(3.0), "z": np.arange(3.0)})
    r = VariableRoles.of(ds, "y", "z", "x")
    assert r.xz_cols == (0, 2)
    with pytest.raises(ConfigError):
        VariableRoles.of(ds, "y", "y", "x")
    with pytest.raises(ConfigError):
        VariableRoles.of(ds, [], "z")
    with pytest.raises(UnknownColumn):
        VariableRoles.of(ds, "nope", "z")


def test_dataset_invariants():
    with pytest.raises(MalformedCsv):
        Dataset((Column("a", "numeric", np.arange(2.0)), Column("a", "numeric", np.arange(2.0))))
    with pytest.raises(KpcError):
        Dataset((Column("a", "numeric", np.arange(2.0)), Column("b", "numeric", np.arange(3.0))))
    ds = Dataset.from_arrays({"a": np.arange(3.0)})
    with pytest.raises(ValueError):
        ds.column("a").values[0] = 9.0  # payloads are read-only
