"""Reader for the Planetoid citation-network release format.

A dataset consists of eight files named ind.<name>.<suffix>:

    x, tx, allx   scipy sparse feature matrices (labelled train, test, and
                  train+unlabelled rows, in that row order)
    y, ty, ally   one-hot label arrays aligned with x/tx/allx
    graph         dict {node_id: [neighbor ids]} over all nodes
    test.index    text file listing the graph positions of the tx rows

The full node ordering is allx rows first, then the tx rows placed at the
positions given by test.index. Some releases (citeseer) skip isolated test
nodes in test.index; the gap rows get zero features and label 0, which
matches how the upstream splits treat them (they appear in no split).
"""

from __future__ import annotations

import os
import pickle

import numpy as np
import scipy.sparse as sp

from .canonical import ConvertError, canonical_edges, split_tokens

SUFFIXES = ("x", "y", "tx", "ty", "allx", "ally", "graph", "test.index")

# public split protocol: 500 validation nodes immediately after the
# labelled training rows
VAL_SIZE = 500


def _load_pickle(path):
    with open(path, "rb") as fh:
        # upstream files were written by python 2
        return pickle.load(fh, encoding="latin1")


def read_planetoid(in_dir, name: str) -> dict:
    paths = {s: os.path.join(in_dir, f"ind.{name}.{s}") for s in SUFFIXES}
    missing = [p for p in paths.values() if not os.path.isfile(p)]
    if missing:
        raise ConvertError(f"missing upstream files: {', '.join(missing)}")

    try:
        x = sp.csr_matrix(_load_pickle(paths["x"]))
        tx = sp.csr_matrix(_load_pickle(paths["tx"]))
        allx = sp.csr_matrix(_load_pickle(paths["allx"]))
        y = np.asarray(_load_pickle(paths["y"]))
        ty = np.asarray(_load_pickle(paths["ty"]))
        ally = np.asarray(_load_pickle(paths["ally"]))
        graph = _load_pickle(paths["graph"])
    except (pickle.UnpicklingError, EOFError, ValueError) as exc:
        raise ConvertError(f"corrupt upstream file: {exc}") from None

    test_idx = np.loadtxt(paths["test.index"], dtype=np.int64, ndmin=1)
    if test_idx.size != tx.shape[0]:
        raise ConvertError(
            f"test.index lists {test_idx.size} rows but tx has {tx.shape[0]}")

    n_all = allx.shape[0]
    lo, hi = int(test_idx.min()), int(test_idx.max())
    if lo < n_all:
        raise ConvertError("test.index overlaps the allx rows")
    n = hi + 1

    # place tx rows at their graph positions; unlisted positions stay zero
    features = np.zeros((n, allx.shape[1]))
    features[:n_all] = allx.toarray()
    features[test_idx] = tx.toarray()

    onehot = np.zeros((n, ally.shape[1]))
    onehot[:n_all] = ally
    onehot[test_idx] = ty
    labels = onehot.argmax(axis=1)

    if len(graph) > n:
        raise ConvertError(f"graph has {len(graph)} nodes, expected <= {n}")

    pairs = [(node, nbr) for node, nbrs in graph.items() for nbr in nbrs]
    edges = canonical_edges(pairs)
    if edges.size and edges.max() >= n:
        raise ConvertError("graph references a node beyond the feature rows")

    train = np.arange(x.shape[0])
    val = np.arange(x.shape[0], x.shape[0] + VAL_SIZE)
    if val.size and val[-1] >= n_all:
        raise ConvertError("validation range runs past the allx rows")
    test = np.sort(test_idx)

    return {
        "n": n,
        "features": features,
        "labels": labels,
        "num_classes": ally.shape[1],
        "edges": edges,
        "split_public": split_tokens(n, train, val, test),
        "counts": {"train": train.size, "val": val.size, "test": test.size},
    }
