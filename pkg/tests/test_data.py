import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lmve.data import (
    Dataset,
    REGISTRY,
    is_cache_file,
    load_cache,
    load_csv,
    load_registered,
    resolve_dataset_path,
    save_cache,
    split_dataset,
    split_sizes,
    standardize,
)


def write(tmp_path, text, name="toy.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_shapes(tmp_path):
    p = write(tmp_path, "a,b,y1,y2\n1,2,3,4\n5,6,7,8\n9,10,11,12\n")
    ds = load_csv(p, ["y1", "y2"])
    assert ds.X.shape == (3, 2) and ds.Y.shape == (3, 2)
    assert ds.feature_names == ["a", "b"] and ds.label_names == ["y1", "y2"]
    np.testing.assert_array_equal(ds.Y[:, 0], [3, 7, 11])


def test_load_csv_label_indices_and_order(tmp_path):
    p = write(tmp_path, "y,a,b\n1,2,3\n4,5,6\n")
    ds = load_csv(p, [0])
    assert ds.feature_names == ["a", "b"]
    np.testing.assert_array_equal(ds.Y[:, 0], [1, 4])
    assert load_csv(p, ["0"]).label_names == ["y"]


def test_load_csv_drops_malformed_rows(tmp_path, caplog):
    p = write(tmp_path, "a,b,y1,y2\n1,2,3,4\n5,oops,7,8\n9,10,11,12\n13,14,,16\n")
    with caplog.at_level(logging.WARNING):
        ds = load_csv(p, ["y1", "y2"])
    assert ds.m == 2
    assert ds.dropped_rows == 2
    assert "dropped 2" in caplog.text


def test_load_csv_drop_count_one(tmp_path):
    p = write(tmp_path, "a,y\n1,2\nx,3\n4,5\n")
    assert load_csv(p, ["y"]).dropped_rows == 1


def test_load_csv_delimiter(tmp_path):
    p = write(tmp_path, "a;y\n1;2\n3;4\n")
    assert load_csv(p, ["y"], delimiter=";").m == 2


def test_load_csv_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "missing.csv", ["y"])
    p = write(tmp_path, "a,y\n1,2\n")
    with pytest.raises(ValueError):
        load_csv(p, ["z"])
    q = write(tmp_path, "a,y\nfoo,bar\n", "bad.csv")
    with pytest.raises(ValueError):
        load_csv(q, ["y"])


def test_load_csv_idempotent(tmp_path):
    p = write(tmp_path, "a,b,y\n" + "".join(f"{i},{i * 0.1},{i ** 0.5}\n" for i in range(40)))
    a, b = load_csv(p, ["y"]), load_csv(p, ["y"])
    assert a.X.tobytes() == b.X.tobytes() and a.Y.tobytes() == b.Y.tobytes()


@pytest.mark.parametrize("m, sizes", [(100, (81, 9, 10)), (768, (622, 69, 77)), (12, (9, 1, 2))])
def test_split_sizes(m, sizes):
    assert split_sizes(m) == sizes
    s = split_dataset(m, 0)
    assert (len(s.train_idx), len(s.val_idx), len(s.test_idx)) == sizes


def test_split_too_small():
    with pytest.raises(ValueError):
        split_dataset(11, 0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(12, 3000))
def test_split_determinism_and_disjointness(seed, m):
    a, b = split_dataset(m, seed), split_dataset(m, seed)
    for x, y in zip((a.train_idx, a.val_idx, a.test_idx), (b.train_idx, b.val_idx, b.test_idx)):
        np.testing.assert_array_equal(x, y)
    allidx = np.concatenate([a.train_idx, a.val_idx, a.test_idx])
    assert np.array_equal(np.sort(allidx), np.arange(m))
    for part, frac in zip((a.train_idx, a.val_idx, a.test_idx), (0.81, 0.09, 0.10)):
        assert abs(len(part) - frac * m) <= 1 + (frac == 0.10)
    assert a.checksum() == b.checksum()


def test_standardize_constant_and_fit_rows(rng):
    X = np.column_stack([np.full(50, 3.0), rng.standard_normal(50) * 7 + 2])
    t = standardize(X)
    Z = t.apply(X)
    np.testing.assert_array_equal(Z[:, 0], 0.0)
    assert abs(Z[:, 1].mean()) <= 1e-12
    assert abs(Z[:, 1].std() - 1) <= 1e-12


def test_standardize_depends_only_on_train(rng):
    X = rng.standard_normal((100, 3)) + 4
    train, val = X[:80], X[80:] + 1.0
    t = standardize(train)
    again = standardize(train.copy())
    np.testing.assert_array_equal(t.mean, again.mean)
    np.testing.assert_array_equal(t.scale, again.scale)
    assert np.all(np.abs(t.apply(val).mean(0)) > 0.1)


def test_cache_roundtrip_and_checksum(tmp_path, rng):
    ds = Dataset("toy", rng.standard_normal((20, 3)), rng.standard_normal((20, 2)))
    p = tmp_path / "toy.cache"
    save_cache(ds, p)
    back = load_cache(p)
    assert back.X.tobytes() == ds.X.tobytes() and back.Y.tobytes() == ds.Y.tobytes()
    assert back.label_names == ds.label_names
    text = p.read_text().replace(repr(float(ds.X[0, 0])), repr(float(ds.X[0, 0]) + 1), 1)
    p.write_text(text)
    with pytest.raises(ValueError, match="checksum"):
        load_cache(p)


def test_registry_matches_published_sizes():
    assert {k: (v.m, v.d, v.n) for k, v in REGISTRY.items()} == {
        "ble_rssi": (1420, 13, 2),
        "enb": (768, 8, 2),
        "indoor_localization": (19937, 519, 2),
        "residential_building": (372, 103, 2),
    }


def test_registered_dataset_shape_check(tmp_path):
    rows = "".join(",".join(["1"] * 10) + "\n" for _ in range(20))
    (tmp_path / "enb.csv").write_text("X1,X2,X3,X4,X5,X6,X7,X8,Y1,Y2\n" + rows)
    assert resolve_dataset_path("enb", tmp_path) == tmp_path / "enb.csv"
    with pytest.raises(ValueError, match="expected"):
        load_registered("enb", tmp_path)
    assert load_registered("enb", tmp_path, check_shape=False).d == 8


def test_registered_dataset_uses_cache(tmp_path, rng):
    data = rng.normal(size=(768, 10))
    body = "".join(",".join(repr(float(v)) for v in r) + "\n" for r in data)
    (tmp_path / "enb.csv").write_text("X1,X2,X3,X4,X5,X6,X7,X8,Y1,Y2\n" + body)
    first = load_registered("enb", tmp_path)
    cache = tmp_path / "enb.lmve.csv"
    assert cache.is_file() and is_cache_file(cache)
    assert not is_cache_file(tmp_path / "enb.csv")
    second = load_registered("enb", tmp_path)
    assert np.array_equal(first.X, second.X) and np.array_equal(first.Y, second.Y)
    # a corrupted cache is ignored and rewritten
    cache.write_text(cache.read_text().replace("0", "1", 1))
    third = load_registered("enb", tmp_path)
    assert np.array_equal(first.Y, third.Y)
    load_cache(cache)


def test_enb_prepared_file():
    try:
        path = resolve_dataset_path("enb")
    except FileNotFoundError:
        pytest.skip("enb.csv not prepared (set LMVE_DATA_DIR); see docs/datasets.md")
    ds = load_registered("enb")
    assert (ds.m, ds.d, ds.n) == (768, 8, 2)
    assert path.name == "enb.csv"
