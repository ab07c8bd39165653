"""Canonical dataset directory format, split construction and a synthetic
stochastic-block-model generator.

A dataset directory holds UTF-8, LF, TAB-separated files:

    meta           key=value lines: name, n, num_features, num_classes,
                   num_edges, normalize_features={0|1}
    features.tsv   n lines of num_features decimal floats
    labels.tsv     n lines, one integer each
    edges.tsv      one "i<TAB>j" line per undirected edge, i < j, sorted
    split-<name>.tsv  n lines, each one of train/val/test/none

Floats are serialized with shortest round-trip formatting so write followed
by load is bit-exact.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import Graph, build_graph, homophily

SPLIT_TOKENS = ("train", "val", "test", "none")

# store features sparsely when they are mostly zeros and wide
SPARSE_DENSITY_CUTOFF = 0.05
SPARSE_WIDTH_CUTOFF = 128


class DataError(ValueError):
    pass


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)
        if self.train.size == 0:
            raise DataError("split has an empty train set")
        sets = [set(self.train), set(self.val), set(self.test)]
        for a in range(3):
            for b in range(a + 1, 3):
                if sets[a] & sets[b]:
                    raise DataError("split parts must be pairwise disjoint")


@dataclass
class Dataset:
    name: str
    graph: Graph
    x: np.ndarray | sp.spmatrix
    y: np.ndarray
    num_classes: int
    splits: dict[str, Split] = field(default_factory=dict)
    normalize_features: bool = False

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def num_features(self) -> int:
        return self.x.shape[1]

    def homophily(self) -> float:
        return homophily(self.graph, self.y)

    def dense_x(self) -> np.ndarray:
        return self.x.toarray() if sp.issparse(self.x) else self.x


def _row_normalize(x: np.ndarray) -> np.ndarray:
    sums = x.sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return x / sums


def _fmt(v: float) -> str:
    return repr(float(v))


def write_canonical(ds: Dataset, dir_path) -> None:
    os.makedirs(dir_path, exist_ok=True)
    x = ds.dense_x()

    with open(os.path.join(dir_path, "meta"), "w", encoding="utf-8") as fh:
        fh.write(f"name={ds.name}\n")
        fh.write(f"n={ds.n}\n")
        fh.write(f"num_features={ds.num_features}\n")
        fh.write(f"num_classes={ds.num_classes}\n")
        fh.write(f"num_edges={ds.graph.num_edges}\n")
        fh.write(f"normalize_features={1 if ds.normalize_features else 0}\n")

    with open(os.path.join(dir_path, "features.tsv"), "w", encoding="utf-8") as fh:
        for row in x:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")

    with open(os.path.join(dir_path, "labels.tsv"), "w", encoding="utf-8") as fh:
        for v in ds.y:
            fh.write(f"{int(v)}\n")

    with open(os.path.join(dir_path, "edges.tsv"), "w", encoding="utf-8") as fh:
        for i, j in ds.graph.edges:
            fh.write(f"{i}\t{j}\n")

    for name, split in ds.splits.items():
        tokens = np.full(ds.n, "none", dtype=object)
        tokens[split.train] = "train"
        tokens[split.val] = "val"
        tokens[split.test] = "test"
        with open(os.path.join(dir_path, f"split-{name}.tsv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(tokens) + "\n")


def _read_meta(path) -> dict[str, str]:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: malformed meta line {line!r}")
            key, val = line.split("=", 1)
            meta[key] = val
    return meta


def load_canonical(dir_path, log=None) -> Dataset:
    """Load and validate a canonical dataset directory."""
    def note(msg):
        if log is not None:
            log(msg)

    meta_path = os.path.join(dir_path, "meta")
    if not os.path.isfile(meta_path):
        raise DataError(f"missing file: {meta_path}")
    meta = _read_meta(meta_path)
    for key in ("name", "n", "num_features", "num_classes", "num_edges"):
        if key not in meta:
            raise DataError(f"meta is missing key {key!r}")
    n = int(meta["n"])
    c_in = int(meta["num_features"])
    k = int(meta["num_classes"])
    normalize = meta.get("normalize_features", "0") == "1"

    feat_path = os.path.join(dir_path, "features.tsv")
    if not os.path.isfile(feat_path):
        raise DataError(f"missing file: {feat_path}")
    rows = []
    with open(feat_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != c_in:
                raise DataError(f"{feat_path}:{lineno}: expected {c_in} values, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DataError(f"{feat_path}:{lineno}: {exc}") from None
    x = np.asarray(rows, dtype=np.float64)
    if x.shape[0] != n:
        raise DataError(f"{feat_path}: expected {n} rows, got {x.shape[0]}")
    if normalize:
        x = _row_normalize(x)

    label_path = os.path.join(dir_path, "labels.tsv")
    if not os.path.isfile(label_path):
        raise DataError(f"missing file: {label_path}")
    y = []
    with open(label_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            try:
                y.append(int(line.strip()))
            except ValueError:
                raise DataError(f"{label_path}:{lineno}: malformed label {line.strip()!r}") from None
    y = np.asarray(y, dtype=np.int64)
    if y.shape[0] != n:
        raise DataError(f"{label_path}: expected {n} labels, got {y.shape[0]}")
    if y.size and (y.min() < 0 or y.max() >= k):
        raise DataError(f"{label_path}: label out of range [0, {k})")

    edge_path = os.path.join(dir_path, "edges.tsv")
    if not os.path.isfile(edge_path):
        raise DataError(f"missing file: {edge_path}")
    pairs = []
    with open(edge_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{edge_path}:{lineno}: malformed edge line")
            pairs.append((int(parts[0]), int(parts[1])))
    graph = build_graph(pairs, n)
    declared_edges = int(meta["num_edges"])
    if graph.num_edges != declared_edges:
        note(f"{dir_path}: meta declares {declared_edges} edges, "
             f"deduplicated count is {graph.num_edges}")

    splits = {}
    for fname in sorted(os.listdir(dir_path)):
        if not (fname.startswith("split-") and fname.endswith(".tsv")):
            continue
        split_path = os.path.join(dir_path, fname)
        tokens = []
        with open(split_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                tok = line.strip()
                if tok not in SPLIT_TOKENS:
                    raise DataError(f"{split_path}:{lineno}: unknown token {tok!r}")
                tokens.append(tok)
        if len(tokens) != n:
            raise DataError(f"{split_path}: expected {n} lines, got {len(tokens)}")
        tokens = np.asarray(tokens)
        splits[fname[len("split-"):-len(".tsv")]] = Split(
            train=np.flatnonzero(tokens == "train"),
            val=np.flatnonzero(tokens == "val"),
            test=np.flatnonzero(tokens == "test"),
        )
    if not splits:
        raise DataError(f"{dir_path}: no split-*.tsv file found")

    density = np.count_nonzero(x) / max(x.size, 1)
    if density < SPARSE_DENSITY_CUTOFF and x.shape[1] >= SPARSE_WIDTH_CUTOFF:
        x = sp.csr_matrix(x)

    return Dataset(meta["name"], graph, x, y, k, splits, normalize)


def per_class_split(y, per_class: int = 20, n_val: int = 500, n_test: int = 1000,
                    rng: np.random.Generator | None = None,
                    dataset: "Dataset | None" = None) -> Split:
    """Semi-supervised split: per_class training nodes per class, then val and
    test sampled disjointly from the remainder.

    When the dataset ships a fixed public split, that file takes precedence
    over random sampling.
    """
    if dataset is not None and "public" in dataset.splits:
        return dataset.splits["public"]
    if rng is None:
        rng = np.random.default_rng(0)
    y = np.asarray(y)
    n = y.shape[0]
    classes = np.unique(y)
    train = []
    for c in classes:
        members = np.flatnonzero(y == c)
        if members.size < per_class:
            raise DataError(f"class {c} has {members.size} < {per_class} nodes")
        train.extend(rng.permutation(members)[:per_class])
    train = np.sort(np.asarray(train, dtype=np.int64))
    rest = rng.permutation(np.setdiff1d(np.arange(n), train))
    if rest.size < n_val + n_test:
        raise DataError("not enough nodes left for the requested val/test sizes")
    return Split(train, np.sort(rest[:n_val]), np.sort(rest[n_val:n_val + n_test]))


def fully_supervised_split(y, seed: int, fractions=(0.48, 0.32, 0.20)) -> Split:
    """Class-stratified random split covering every node (48/32/20 default)."""
    y = np.asarray(y)
    if y.shape[0] < 5:
        raise DataError("need at least 5 nodes")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for c in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == c))
        n_c = members.size
        n_train = int(round(fractions[0] * n_c))
        n_val = int(round(fractions[1] * n_c))
        train.extend(members[:n_train])
        val.extend(members[n_train:n_train + n_val])
        test.extend(members[n_train + n_val:])
    return Split(np.sort(np.asarray(train)), np.sort(np.asarray(val)),
                 np.sort(np.asarray(test)))


# ten shipped seeds emulating repeated fully-supervised evaluations
FULLY_SUPERVISED_SEEDS = (101, 211, 307, 401, 503, 601, 701, 809, 907, 1009)


def generate_sbm(n: int, k: int, p_in: float, p_out: float, feature_dim: int,
                 signal_strength: float, seed: int, name: str | None = None,
                 per_class_train: int = 10, val_fraction: float = 0.2) -> Dataset:
    """Stochastic block model with class-informative Gaussian features.

    k equal blocks; edges appear independently with probability p_in inside a
    block and p_out across blocks. Features are signal_strength * one_hot(class)
    embedded in feature_dim columns plus unit Gaussian noise. The expected
    homophily is roughly p_in / (p_in + (k-1) p_out).
    """
    if not (0 <= p_in <= 1 and 0 <= p_out <= 1):
        raise DataError("edge probabilities must lie in [0, 1]")
    if feature_dim < k:
        raise DataError("feature_dim must be at least k")
    rng = np.random.default_rng(seed)
    block = n // k
    y = np.repeat(np.arange(k), block)
    if y.size < n:
        y = np.concatenate([y, rng.integers(0, k, size=n - y.size)])

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(y[iu] == y[ju], p_in, p_out)
    keep = rng.random(prob.shape) < prob
    pairs = np.stack([iu[keep], ju[keep]], axis=1)
    graph = build_graph(pairs, n)

    x = rng.normal(size=(n, feature_dim))
    x[np.arange(n), y] += signal_strength

    train = []
    for c in range(k):
        members = np.flatnonzero(y == c)
        train.extend(rng.permutation(members)[:per_class_train])
    train = np.sort(np.asarray(train, dtype=np.int64))
    rest = rng.permutation(np.setdiff1d(np.arange(n), train))
    n_val = int(round(val_fraction * n))
    split = Split(train, np.sort(rest[:n_val]), np.sort(rest[n_val:]))

    return Dataset(name or f"sbm-n{n}-k{k}-s{seed}", graph, x, y, k,
                   {"default": split})
