"""Writer for the canonical dataset directory format.

All files are UTF-8 with LF line endings and TAB separators. Floats use
shortest round-trip formatting so the text form reproduces the binary value
exactly. Node ordering is preserved from upstream so published split indices
remain valid.
"""

from __future__ import annotations

import os

import numpy as np


class ConvertError(RuntimeError):
    pass


def canonical_edges(pairs) -> np.ndarray:
    """Deduplicated undirected edges as (i, j) with i < j, sorted; self-loops
    dropped."""
    pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    if pairs.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


def write_dataset(out_dir, name: str, x: np.ndarray, y: np.ndarray,
                  edges: np.ndarray, num_classes: int,
                  splits: dict[str, np.ndarray],
                  normalize_features: bool = True) -> None:
    """splits maps split name to an array of n tokens from
    {train, val, test, none}."""
    n, _ = x.shape
    os.makedirs(out_dir, exist_ok=True)

    with open(os.path.join(out_dir, "meta"), "w", encoding="utf-8") as fh:
        fh.write(f"name={name}\n")
        fh.write(f"n={n}\n")
        fh.write(f"num_features={x.shape[1]}\n")
        fh.write(f"num_classes={num_classes}\n")
        fh.write(f"num_edges={edges.shape[0]}\n")
        fh.write(f"normalize_features={1 if normalize_features else 0}\n")

    with open(os.path.join(out_dir, "features.tsv"), "w", encoding="utf-8") as fh:
        for row in x:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")

    with open(os.path.join(out_dir, "labels.tsv"), "w", encoding="utf-8") as fh:
        for v in y:
            fh.write(f"{int(v)}\n")

    with open(os.path.join(out_dir, "edges.tsv"), "w", encoding="utf-8") as fh:
        for i, j in edges:
            fh.write(f"{i}\t{j}\n")

    for split_name, tokens in splits.items():
        if len(tokens) != n:
            raise ConvertError(f"split {split_name!r} has {len(tokens)} tokens, expected {n}")
        with open(os.path.join(out_dir, f"split-{split_name}.tsv"), "w",
                  encoding="utf-8") as fh:
            fh.write("\n".join(tokens) + "\n")


def split_tokens(n: int, train, val, test) -> np.ndarray:
    tokens = np.full(n, "none", dtype=object)
    tokens[np.asarray(train, dtype=np.int64)] = "train"
    tokens[np.asarray(val, dtype=np.int64)] = "val"
    tokens[np.asarray(test, dtype=np.int64)] = "test"
    return tokens
