#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
# Copyright 2026 The mgae Authors.
"""Convert raw Planetoid files (ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index})
into the TSV directory layout read by mgae.

Standard public split: the first 20 labels per class as train (the `y`
rows), the next 500 nodes as valid, the listed test indices as test.

    python3 tools/planetoid_to_tsv.py --raw raw/cora --name cora --out data/cora
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--raw", type=Path, required=True, help="directory with the ind.<name>.* files")
    ap.add_argument("--name", required=True, help="cora | citeseer | pubmed")
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--no-row-normalize", action="store_true", help="keep raw feature values")
    args = ap.parse_args()

    x, y, tx, ty, allx, ally, graph = (load(args.raw, args.name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_idx = np.loadtxt(args.raw / f"ind.{args.name}.test.index", dtype=np.int64)
    test_sorted = np.sort(test_idx)

    n_all = allx.shape[0]
    n = max(n_all + len(test_idx), int(test_sorted.max()) + 1)
    feats = sp.lil_matrix((n, allx.shape[1]))
    feats[:n_all] = allx
    feats[test_idx] = tx
    feats = feats.tocsr().astype(np.float64)
    onehot = np.zeros((n, ally.shape[1]))
    onehot[:n_all] = ally
    onehot[test_idx] = ty
    labels = np.where(onehot.sum(1) > 0, onehot.argmax(1), -1)

    zero = np.flatnonzero(np.asarray(feats.getnnz(axis=1)) == 0)
    if len(zero):
        print(f"error: {len(zero)} nodes have all-zero features (first: {zero[:5].tolist()}); "
              "the loader rejects such rows", file=sys.stderr)
        return 2
    if not args.no_row_normalize:
        feats = sp.diags(1.0 / np.asarray(feats.sum(1)).ravel()) @ feats

    splits = np.array(["none"] * n, dtype=object)
    splits[: y.shape[0]] = "train"
    splits[y.shape[0]: y.shape[0] + 500] = "valid"
    splits[test_sorted] = "test"

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "meta.tsv").write_text(f"name\t{args.name}\ndirected\tfalse\n")
    with open(out / "edges.tsv", "w") as f:
        seen = set()
        for u, nbrs in graph.items():
            for v in nbrs:
                if u == v or u >= n or v >= n:
                    continue
                e = (min(u, v), max(u, v))
                if e not in seen:
                    seen.add(e)
                    f.write(f"{e[0]}\t{e[1]}\n")
    dense = feats.toarray()
    with open(out / "features.tsv", "w") as f:
        for row in dense:
            f.write("\t".join(repr(float(v)) if v else "0" for v in row) + "\n")
    np.savetxt(out / "labels.tsv", labels, fmt="%d")
    (out / "splits.tsv").write_text("\n".join(splits) + "\n")
    print(f"{args.name}: {n} nodes, {len(seen)} undirected edges, {dense.shape[1]} features, "
          f"{(splits == 'train').sum()}/{(splits == 'valid').sum()}/{(splits == 'test').sum()} train/valid/test")
    return 0


if __name__ == "__main__":
    sys.exit(main())
