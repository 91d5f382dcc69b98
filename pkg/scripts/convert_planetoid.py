#!/usr/bin/env python3
"""Convert Planetoid ``ind.<name>.*`` pickles to the tab-separated layout.

Usage::

    python3 scripts/convert_planetoid.py --raw path/to/planetoid/data --name cora --out data/cora

The raw directory must hold ``ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}``
as distributed with the Planetoid benchmark. Node order follows the usual
convention: the ``allx`` rows first, then the test rows placed at the
positions named in ``test.index``. Citeseer lists test indices with gaps
(isolated documents with no features); those nodes get all-zero attributes
and label -1, so they take part in training but never in evaluation.
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from grcca.graph import Graph, save_graph


def _load(raw, name, part):
    with open(raw / f"ind.{name}.{part}", "rb") as fh:
        # the original files were pickled under Python 2
        return pickle.load(fh, encoding="latin1")


def read_planetoid(raw, name):
    raw = Path(raw)
    x, y, tx, ty, allx, ally, graph = (_load(raw, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    del x, y  # the labelled training subset; allx/ally already contain it
    test_index = np.loadtxt(raw / f"ind.{name}.test.index", dtype=np.int64, ndmin=1)
    test_sorted = np.sort(test_index)

    tx, ty = sp.csr_matrix(tx), np.asarray(ty)
    span = test_sorted[-1] - test_sorted[0] + 1
    if span > len(test_index):
        # fill the holes in the test index range with empty rows
        tx_full = sp.lil_matrix((span, tx.shape[1]))
        tx_full[test_sorted - test_sorted[0]] = tx
        ty_full = np.zeros((span, ty.shape[1]))
        ty_full[test_sorted - test_sorted[0]] = ty
        tx, ty = tx_full.tocsr(), ty_full

    features = sp.vstack([sp.csr_matrix(allx), tx]).tolil()
    onehot = np.vstack([np.asarray(ally), ty])
    features[test_index] = features[test_sorted]
    onehot[test_index] = onehot[test_sorted]

    n = features.shape[0]
    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), -1)
    pairs = [(i, j) for i, nbrs in graph.items() for j in nbrs if i < n and j < n]
    return Graph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2), features.toarray(), labels, name=name)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--raw", required=True, help="directory holding the ind.<name>.* files")
    p.add_argument("--name", required=True, help="dataset stem, e.g. cora, citeseer, pubmed")
    p.add_argument("--out", required=True, help="output dataset directory")
    args = p.parse_args(argv)
    g = read_planetoid(args.raw, args.name)
    save_graph(g, args.out)
    unlabeled = int(np.sum(g.labels < 0))
    print(f"{args.name}: n={g.n} edges={g.n_edges} features={g.n_features} classes={g.n_classes} "
          f"unlabeled={unlabeled} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
