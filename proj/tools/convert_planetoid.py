#!/usr/bin/env python3
#
# Copyright 2026 The glasu Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Convert raw Planetoid files (ind.<name>.x, .y, .tx, ...) to a glasu dataset.

The output directory holds edges.txt, features.csv, labels.csv and masks.txt.
The split is the standard public one: the first |y| nodes train, the next 500
validate, and the nodes listed in ind.<name>.test.index test.

Usage:
    python tools/convert_planetoid.py --raw /path/to/planetoid/data --name cora --out cora/
"""

import argparse
import pathlib
import pickle
import sys

import numpy as np
import scipy.sparse as sp

_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")
_VAL_SIZE = 500


def _load_pickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def _dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def convert(raw: pathlib.Path, name: str, out: pathlib.Path) -> None:
    parts = {p: _load_pickle(raw / f"ind.{name}.{p}") for p in _PARTS}
    test_index = np.loadtxt(raw / f"ind.{name}.test.index", dtype=np.int64)
    test_sorted = np.sort(test_index)

    allx, tx = _dense(parts["allx"]), _dense(parts["tx"])
    ally, ty = np.asarray(parts["ally"]), np.asarray(parts["ty"])
    # Some Planetoid graphs list test ids past the end of tx; pad those rows.
    span = test_sorted[-1] - test_sorted[0] + 1
    if span != tx.shape[0]:
        tx_full = np.zeros((span, tx.shape[1]), dtype=tx.dtype)
        ty_full = np.zeros((span, ty.shape[1]), dtype=ty.dtype)
        tx_full[test_sorted - test_sorted[0]] = tx
        ty_full[test_sorted - test_sorted[0]] = ty
        tx, ty = tx_full, ty_full

    features = np.vstack([allx, tx])
    onehot = np.vstack([ally, ty])
    features[test_index] = features[test_sorted]
    onehot[test_index] = onehot[test_sorted]
    labels = onehot.argmax(axis=1)
    n = features.shape[0]

    edges = set()
    for u, neighbours in parts["graph"].items():
        for v in neighbours:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))

    train = np.arange(len(parts["y"]))
    val = np.arange(len(parts["y"]), len(parts["y"]) + _VAL_SIZE)
    test = np.sort(test_index[test_index < n])

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "edges.txt", "w") as f:
        for u, v in sorted(edges):
            f.write(f"{u} {v}\n")
    np.savetxt(out / "features.csv", features, delimiter=",", fmt="%.17g")
    np.savetxt(out / "labels.csv", labels, fmt="%d")
    with open(out / "masks.txt", "w") as f:
        for key, ids in (("train", train), ("val", val), ("test", test)):
            f.write(key + ":" + "".join(f" {i}" for i in ids) + "\n")
    print(f"wrote {n} nodes, {len(edges)} edges, {features.shape[1]} features, "
          f"{labels.max() + 1} classes to {out}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--raw", type=pathlib.Path, required=True,
                        help="directory holding the ind.<name>.* files")
    parser.add_argument("--name", default="cora", help="dataset name (cora, citeseer, pubmed)")
    parser.add_argument("--out", type=pathlib.Path, required=True, help="output directory")
    args = parser.parse_args(argv)
    try:
        convert(args.raw, args.name, args.out)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
