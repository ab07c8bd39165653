"""Reader for published fixed-split files (one .npz per split).

Each npz holds three aligned boolean arrays over the dataset's node ordering:
train_mask, val_mask, test_mask. Files are matched by the pattern
<name>_split_*.npz and ordered by their trailing index, yielding
split-geom-0 .. split-geom-9 in the canonical output.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .canonical import ConvertError

MASK_KEYS = ("train_mask", "val_mask", "test_mask")


def read_geom_splits(in_dir, name: str, n: int) -> dict[str, np.ndarray]:
    pattern = re.compile(rf"{re.escape(name)}.*split.*?(\d+)\.npz$")
    found = []
    for fname in sorted(os.listdir(in_dir)):
        match = pattern.search(fname)
        if match:
            found.append((int(match.group(1)), fname))
    if not found:
        raise ConvertError(f"no split npz files for {name!r} in {in_dir}")
    found.sort()

    splits = {}
    for ordinal, (_, fname) in enumerate(found):
        with np.load(os.path.join(in_dir, fname)) as npz:
            for key in MASK_KEYS:
                if key not in npz:
                    raise ConvertError(f"{fname}: missing array {key!r}")
            masks = {key: np.asarray(npz[key], dtype=bool) for key in MASK_KEYS}
        if any(mask.shape[0] != n for mask in masks.values()):
            raise ConvertError(f"{fname}: mask length does not match n={n}")
        tokens = np.full(n, "none", dtype=object)
        tokens[masks["train_mask"]] = "train"
        tokens[masks["val_mask"]] = "val"
        tokens[masks["test_mask"]] = "test"
        splits[f"geom-{ordinal}"] = tokens
    return splits
