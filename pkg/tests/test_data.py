import os

import numpy as np
import pytest
import scipy.sparse as sp

from encgnn.data import (
    DataError,
    Dataset,
    Split,
    fully_supervised_split,
    generate_sbm,
    load_canonical,
    per_class_split,
    write_canonical,
)
from encgnn.graph import build_graph, homophily

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def test_mini_fixture_loads():
    ds = load_canonical(os.path.join(FIXTURES, "mini"))
    assert ds.name == "mini"
    assert ds.n == 6 and ds.num_features == 4 and ds.num_classes == 2
    assert "default" in ds.splits


def test_round_trip_is_bit_exact(tmp_path):
    ds = load_canonical(os.path.join(FIXTURES, "mini"))
    out = tmp_path / "copy"
    write_canonical(ds, out)
    for fname in os.listdir(os.path.join(FIXTURES, "mini")):
        a = open(os.path.join(FIXTURES, "mini", fname), "rb").read()
        b = open(out / fname, "rb").read()
        assert a == b, f"{fname} differs after round trip"


def test_round_trip_random_dataset(tmp_path, rng):
    g = build_graph([(0, 1), (1, 2), (2, 3)], 4)
    x = rng.normal(size=(4, 3))
    ds = Dataset("tiny", g, x, np.array([0, 1, 0, 1]), 2,
                 {"s": Split([0], [1], [2, 3])})
    write_canonical(ds, tmp_path / "a")
    back = load_canonical(tmp_path / "a")
    assert np.array_equal(back.dense_x(), x)
    assert np.array_equal(back.y, ds.y)
    assert np.array_equal(back.splits["s"].test, [2, 3])
    write_canonical(back, tmp_path / "b")
    for fname in os.listdir(tmp_path / "a"):
        assert open(tmp_path / "a" / fname, "rb").read() == open(tmp_path / "b" / fname, "rb").read()


def test_load_missing_file(tmp_path):
    with pytest.raises(DataError, match="missing file"):
        load_canonical(tmp_path)


def _write_mini_copy(tmp_path):
    ds = load_canonical(os.path.join(FIXTURES, "mini"))
    write_canonical(ds, tmp_path)
    return ds


def test_load_reports_line_number_on_malformed_feature(tmp_path):
    _write_mini_copy(tmp_path)
    lines = open(tmp_path / "features.tsv").read().splitlines()
    lines[2] = lines[2].replace("\t", "\t junk", 1)
    (tmp_path / "features.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="features.tsv:3"):
        load_canonical(tmp_path)


def test_load_rejects_label_out_of_range(tmp_path):
    _write_mini_copy(tmp_path)
    labels = open(tmp_path / "labels.tsv").read().splitlines()
    labels[0] = "9"
    (tmp_path / "labels.tsv").write_text("\n".join(labels) + "\n")
    with pytest.raises(DataError, match="label out of range"):
        load_canonical(tmp_path)


def test_load_rejects_count_mismatch(tmp_path):
    _write_mini_copy(tmp_path)
    lines = open(tmp_path / "features.tsv").read().splitlines()
    (tmp_path / "features.tsv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DataError, match="expected 6 rows"):
        load_canonical(tmp_path)


def test_load_rejects_bad_split_token(tmp_path):
    _write_mini_copy(tmp_path)
    tokens = open(tmp_path / "split-default.tsv").read().splitlines()
    tokens[1] = "validation"
    (tmp_path / "split-default.tsv").write_text("\n".join(tokens) + "\n")
    with pytest.raises(DataError, match="split-default.tsv:2"):
        load_canonical(tmp_path)


def test_load_notes_edge_count_disagreement(tmp_path):
    _write_mini_copy(tmp_path)
    meta = open(tmp_path / "meta").read().replace("num_edges=7", "num_edges=99")
    (tmp_path / "meta").write_text(meta)
    notes = []
    load_canonical(tmp_path, log=notes.append)
    assert any("declares 99 edges" in m for m in notes)


def test_row_normalization_flag(tmp_path):
    g = build_graph([(0, 1)], 2)
    x = np.array([[2.0, 2.0], [1.0, 3.0]])
    ds = Dataset("norm", g, x, np.array([0, 1]), 2,
                 {"s": Split([0], [], [1])}, normalize_features=True)
    write_canonical(ds, tmp_path)
    back = load_canonical(tmp_path)
    assert np.allclose(back.dense_x().sum(axis=1), 1.0)


def test_wide_sparse_features_load_as_csr(tmp_path, rng):
    n, c = 12, 200
    x = np.zeros((n, c))
    x[rng.integers(0, n, 20), rng.integers(0, c, 20)] = 1.0
    g = build_graph([(0, 1)], n)
    ds = Dataset("wide", g, x, np.zeros(n, dtype=int), 1, {"s": Split([0], [], [])})
    write_canonical(ds, tmp_path)
    back = load_canonical(tmp_path)
    assert sp.issparse(back.x)
    assert np.array_equal(back.dense_x(), x)


# ---------------------------------------------------------------------------
# splits

def test_per_class_split_tiny():
    y = np.array([0, 0, 1, 1])
    split = per_class_split(y, per_class=1, n_val=1, n_test=1,
                            rng=np.random.default_rng(0))
    assert split.train.size == 2
    assert len(set(split.train) | set(split.val) | set(split.test)) == 4


def test_per_class_split_sizes(rng):
    y = rng.integers(0, 4, size=400)
    split = per_class_split(y, per_class=5, n_val=50, n_test=100,
                            rng=np.random.default_rng(3))
    assert split.train.size == 20
    assert split.val.size == 50 and split.test.size == 100
    for c in range(4):
        assert (y[split.train] == c).sum() == 5


def test_per_class_split_determinism(rng):
    y = rng.integers(0, 3, size=200)
    a = per_class_split(y, 5, 20, 30, np.random.default_rng(7))
    b = per_class_split(y, 5, 20, 30, np.random.default_rng(7))
    c = per_class_split(y, 5, 20, 30, np.random.default_rng(8))
    assert np.array_equal(a.train, b.train) and np.array_equal(a.val, b.val)
    assert not np.array_equal(a.train, c.train) or not np.array_equal(a.val, c.val)


def test_per_class_split_public_file_takes_precedence(rng):
    ds = generate_sbm(60, 2, 0.2, 0.05, 4, 2.0, seed=0)
    ds.splits["public"] = ds.splits["default"]
    got = per_class_split(ds.y, per_class=3, n_val=5, n_test=5,
                          rng=np.random.default_rng(1), dataset=ds)
    assert got is ds.splits["public"]


def test_per_class_split_class_too_small():
    with pytest.raises(DataError, match="class 1"):
        per_class_split(np.array([0, 0, 1]), per_class=2, n_val=0, n_test=0,
                        rng=np.random.default_rng(0))


def test_fully_supervised_split_sizes():
    y = np.repeat(np.arange(4), 25)  # n=100, 25 per class
    split = fully_supervised_split(y, seed=0)
    assert split.train.size == 48 and split.val.size == 32 and split.test.size == 20
    union = set(split.train) | set(split.val) | set(split.test)
    assert union == set(range(100))


def test_fully_supervised_split_stratified():
    y = np.repeat(np.arange(2), 50)
    split = fully_supervised_split(y, seed=1)
    for c in range(2):
        assert abs((y[split.train] == c).sum() - 24) <= 1


def test_fully_supervised_split_deterministic():
    y = np.repeat(np.arange(3), 20)
    a = fully_supervised_split(y, seed=5)
    b = fully_supervised_split(y, seed=5)
    assert np.array_equal(a.train, b.train)


def test_split_rejects_overlap():
    with pytest.raises(DataError):
        Split([0, 1], [1, 2], [3])


def test_split_rejects_empty_train():
    with pytest.raises(DataError):
        Split([], [0], [1])


# ---------------------------------------------------------------------------
# SBM generator

def test_sbm_pure_intra_block_homophily_one():
    ds = generate_sbm(60, 3, p_in=0.5, p_out=0.0, feature_dim=4,
                      signal_strength=2.0, seed=0)
    assert ds.homophily() == 1.0


def test_sbm_pure_inter_block_homophily_zero():
    ds = generate_sbm(60, 2, p_in=0.0, p_out=0.5, feature_dim=4,
                      signal_strength=2.0, seed=0)
    assert ds.homophily() == 0.0


def test_sbm_equal_probabilities_homophily_near_one_fifth():
    ds = generate_sbm(500, 5, p_in=0.02, p_out=0.02, feature_dim=8,
                      signal_strength=1.0, seed=12)
    assert abs(ds.homophily() - 0.2) < 0.05


def test_sbm_homophily_matches_expectation_within_3_sigma():
    n, k, p_in, p_out = 300, 3, 0.06, 0.015
    expected = p_in / (p_in + (k - 1) * p_out)
    values = [
        generate_sbm(n, k, p_in, p_out, 8, 1.0, seed=s).homophily()
        for s in range(20)
    ]
    values = np.asarray(values)
    sigma = values.std(ddof=1) / np.sqrt(len(values))
    assert abs(values.mean() - expected) < 3 * max(sigma, 0.01)


def test_sbm_is_deterministic_per_seed():
    a = generate_sbm(100, 2, 0.1, 0.02, 6, 1.5, seed=3)
    b = generate_sbm(100, 2, 0.1, 0.02, 6, 1.5, seed=3)
    assert np.array_equal(a.graph.edges, b.graph.edges)
    assert np.array_equal(a.dense_x(), b.dense_x())
    assert np.array_equal(a.splits["default"].train, b.splits["default"].train)


def test_sbm_feature_signal_is_class_aligned():
    ds = generate_sbm(300, 3, 0.05, 0.05, 8, signal_strength=4.0, seed=1)
    x, y = ds.dense_x(), ds.y
    for c in range(3):
        mean_on = x[y == c, c].mean()
        mean_off = x[y != c, c].mean()
        assert mean_on > mean_off + 2.0


def test_sbm_rejects_bad_probability():
    with pytest.raises(DataError):
        generate_sbm(30, 2, 1.5, 0.0, 4, 1.0, seed=0)


def test_sbm_writes_canonical(tmp_path):
    ds = generate_sbm(40, 2, 0.3, 0.05, 4, 2.0, seed=9)
    write_canonical(ds, tmp_path)
    back = load_canonical(tmp_path)
    assert np.array_equal(back.graph.edges, ds.graph.edges)
    assert back.num_classes == 2
    assert homophily(back.graph, back.y) == ds.homophily()
