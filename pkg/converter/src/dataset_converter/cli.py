"""convert: turn upstream dataset releases into canonical TSV directories.

Nothing is written on failure. Exit code 0 on success, 1 on any error.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile

import numpy as np

from .canonical import ConvertError, write_dataset
from .geomgcn import read_geom_splits
from .planetoid import read_planetoid

KNOWN_COUNTS = {
    # name: (nodes, features, classes) for a post-conversion consistency log
    "cora": (2708, 1433, 7),
    "citeseer": (3327, 3703, 6),
    "pubmed": (19717, 500, 3),
}


def convert_planetoid(in_dir, name: str, out_dir) -> None:
    data = read_planetoid(in_dir, name)
    staging = tempfile.mkdtemp(prefix="convert-", dir=os.path.dirname(os.path.abspath(out_dir)) or ".")
    try:
        write_dataset(staging, name, data["features"], data["labels"],
                      data["edges"], data["num_classes"],
                      {"public": data["split_public"]},
                      normalize_features=True)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if os.path.isdir(out_dir):
        shutil.rmtree(out_dir)
    os.replace(staging, out_dir)

    print(f"{name}: n={data['n']} features={data['features'].shape[1]} "
          f"classes={data['num_classes']} edges={data['edges'].shape[0]} "
          f"split public: {data['counts']['train']}/{data['counts']['val']}"
          f"/{data['counts']['test']}")
    if name in KNOWN_COUNTS:
        n, c, k = KNOWN_COUNTS[name]
        if (data["n"], data["features"].shape[1], data["num_classes"]) != (n, c, k):
            print(f"warning: expected n={n} features={c} classes={k} for {name}",
                  file=sys.stderr)


def convert_geom_splits(in_dir, name: str, out_dir) -> None:
    meta_path = os.path.join(out_dir, "meta")
    if not os.path.isfile(meta_path):
        raise ConvertError(f"{out_dir} is not a canonical dataset directory "
                           "(convert the features first)")
    meta = dict(line.split("=", 1) for line in open(meta_path, encoding="utf-8")
                if "=" in line)
    n = int(meta["n"])
    splits = read_geom_splits(in_dir, name, n)
    staged = []
    try:
        for split_name, tokens in splits.items():
            path = os.path.join(out_dir, f"split-{split_name}.tsv.tmp")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(tokens) + "\n")
            staged.append(path)
    except BaseException:
        for path in staged:
            if os.path.exists(path):
                os.unlink(path)
        raise
    for path in staged:
        os.replace(path, path[:-len(".tmp")])
    print(f"{name}: wrote {len(splits)} fixed splits to {out_dir}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="convert",
        description="Convert upstream graph datasets to the canonical TSV format.")
    parser.add_argument("--kind", required=True, choices=["planetoid", "geomgcn-splits"])
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory holding the upstream files")
    parser.add_argument("--name", required=True, help="dataset name, e.g. cora")
    parser.add_argument("--out", required=True, help="canonical dataset directory")
    args = parser.parse_args(argv)

    try:
        if args.kind == "planetoid":
            convert_planetoid(args.in_dir, args.name, args.out)
        else:
            convert_geom_splits(args.in_dir, args.name, args.out)
    except (ConvertError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
