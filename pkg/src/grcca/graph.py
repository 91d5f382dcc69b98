"""Graph container, normalization kernels and dataset ingestion."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DatasetFormatError(ValueError):
    """Raised when a dataset file does not parse."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


def canonical_edges(pairs, n=None):
    """Return sorted unique (i, j) rows with i < j; self-loops dropped."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if n is not None and pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise ValueError(f"edge endpoint out of range [0, {n})")
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    out = np.stack([lo[keep], hi[keep]], axis=1)
    if out.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    return np.unique(out, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph.

    ``edges`` holds each unordered pair once as a row ``(i, j)`` with
    ``i < j``. Self-loops are never stored; normalization adds them.
    """

    n: int
    edges: np.ndarray
    x: np.ndarray
    labels: np.ndarray | None = None
    name: str = field(default="graph", compare=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.n or x.shape[1] < 1:
            raise ValueError(f"x must have shape ({self.n}, F>=1), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("x contains non-finite values")
        edges = canonical_edges(self.edges, self.n)
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (self.n,):
                raise ValueError(f"labels must have shape ({self.n},)")
            labels.setflags(write=False)
        x.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "labels", labels)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_features(self):
        return self.x.shape[1]

    @property
    def n_classes(self):
        if self.labels is None:
            return 0
        known = self.labels[self.labels >= 0]
        return int(known.max()) + 1 if known.size else 0

    def with_edges(self, edges):
        return Graph(self.n, edges, self.x, self.labels, self.name)

    def adjacency(self):
        """Symmetric 0/1 adjacency without self-loops, CSR."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        a = sp.csr_matrix(
            (data, (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(self.n, self.n),
        )
        a.sort_indices()
        return a

    def permute(self, perm):
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        labels = None if self.labels is None else self.labels[perm]
        return Graph(self.n, inv[self.edges], self.x[perm], labels, self.name)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None
            and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return (
            self.n == other.n
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.x, other.x)
            and same_labels
        )

    __hash__ = None


def sym_normalize(g):
    """D^-1/2 (A + I) D^-1/2 as a CSR matrix with sorted indices."""
    a = g.adjacency() + sp.identity(g.n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    a = a.tocoo()
    vals = inv_sqrt[a.row] * inv_sqrt[a.col]
    out = sp.csr_matrix((vals, (a.row, a.col)), shape=(g.n, g.n))
    out.sort_indices()
    return out


def spmm(a, b):
    """Sparse (CSR) times dense product."""
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {b.shape}")
    return np.asarray(a @ b)


# ---------------------------------------------------------------------------
# dataset files


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            yield lineno, raw.rstrip("\n").rstrip("\r")


def _parse_features(path):
    rows = []
    dim = None
    sparse_mode = False
    for lineno, line in _read_lines(path):
        if lineno == 1 and line.startswith("#dim"):
            parts = line.split()
            if len(parts) != 2 or not parts[1].isdigit() or int(parts[1]) < 1:
                raise DatasetFormatError(path, lineno, "expected '#dim F'")
            dim = int(parts[1])
            sparse_mode = True
            continue
        if sparse_mode:
            entries = {}
            for tok in line.split("\t") if line.strip() else []:
                try:
                    idx_s, val_s = tok.split(":")
                    idx, val = int(idx_s), float(val_s)
                except ValueError:
                    raise DatasetFormatError(path, lineno, f"bad entry {tok!r}") from None
                if not 0 <= idx < dim:
                    raise DatasetFormatError(path, lineno, f"feature index {idx} outside [0, {dim})")
                if idx in entries:
                    raise DatasetFormatError(path, lineno, f"duplicate feature index {idx}")
                entries[idx] = val
            rows.append(entries)
        else:
            try:
                vals = [float(t) for t in line.split("\t")]
            except ValueError:
                raise DatasetFormatError(path, lineno, "non-numeric feature value") from None
            if dim is None:
                dim = len(vals)
            elif len(vals) != dim:
                raise DatasetFormatError(path, lineno, f"expected {dim} values, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise DatasetFormatError(path, 0, "no feature rows")
    if sparse_mode:
        x = np.zeros((len(rows), dim))
        for i, entries in enumerate(rows):
            if entries:
                x[i, list(entries)] = list(entries.values())
    else:
        x = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DatasetFormatError(path, 0, "non-finite feature value")
    return x


def _parse_edges(path, n):
    pairs = []
    for lineno, line in _read_lines(path):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetFormatError(path, lineno, "expected 'src<TAB>dst'")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetFormatError(path, lineno, "non-integer node index") from None
        if not (0 <= i < n and 0 <= j < n):
            raise DatasetFormatError(path, lineno, f"node index outside [0, {n})")
        pairs.append((i, j))
    return canonical_edges(pairs)


def _parse_labels(path, n):
    labels = []
    for lineno, line in _read_lines(path):
        if not line.strip():
            continue
        try:
            y = int(line.strip())
        except ValueError:
            raise DatasetFormatError(path, lineno, "non-integer label") from None
        if y < -1:
            raise DatasetFormatError(path, lineno, "labels must be >= -1")
        labels.append(y)
    if len(labels) != n:
        raise DatasetFormatError(path, len(labels), f"expected {n} labels, got {len(labels)}")
    return np.array(labels, dtype=np.int64)


def load_graph(edges_path, features_path, labels_path=None, name=None):
    """Read a graph from the tab-separated dataset layout.

    The node count comes from the features file. Edges are symmetrized,
    deduplicated and stripped of self-loops.
    """
    x = _parse_features(features_path)
    n = x.shape[0]
    edges = _parse_edges(edges_path, n)
    labels = _parse_labels(labels_path, n) if labels_path is not None else None
    return Graph(n, edges, x, labels, name or Path(features_path).parent.name)


def load_dataset(directory):
    """Load ``edges.tsv``, ``features.tsv`` and (if present) ``labels.tsv``."""
    d = Path(directory)
    labels = d / "labels.tsv"
    return load_graph(
        d / "edges.tsv", d / "features.tsv", labels if labels.exists() else None, name=d.name
    )


def save_graph(g, directory, sparse_features=None):
    """Write ``g`` in the layout read by :func:`load_dataset`.

    Values are written with ``repr`` so a reload is bit-identical.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if sparse_features is None:
        sparse_features = np.count_nonzero(g.x) < 0.5 * g.x.size
    with open(d / "edges.tsv", "w", encoding="utf-8") as fh:
        for i, j in g.edges:
            fh.write(f"{i}\t{j}\n")
    with open(d / "features.tsv", "w", encoding="utf-8") as fh:
        if sparse_features:
            fh.write(f"#dim {g.n_features}\n")
            for row in g.x:
                nz = np.flatnonzero(row)
                fh.write("\t".join(f"{k}:{float(row[k])!r}" for k in nz) + "\n")
        else:
            for row in g.x:
                fh.write("\t".join(repr(float(v)) for v in row) + "\n")
    if g.labels is not None:
        with open(d / "labels.tsv", "w", encoding="utf-8") as fh:
            fh.writelines(f"{int(y)}\n" for y in g.labels)
    return d


# ---------------------------------------------------------------------------
# node splits


@dataclass(frozen=True)
class NodeSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        a, b, c = (set(map(int, s)) for s in (self.train, self.val, self.test))
        if a & b or a & c or b & c:
            raise ValueError("train/val/test node sets overlap")


def split_nodes(g, per_class=20, test_size=1000, rng_seed=0, protocol="citation"):
    """Sample a node-classification split from a graph or a label vector.

    ``protocol="citation"``: ``per_class`` training nodes per class and
    ``test_size`` test nodes drawn from the remaining labeled nodes.
    ``protocol="copurchase"``: ``per_class`` training and ``per_class``
    validation nodes per class; all other labeled nodes are test nodes.
    """
    labels = g.labels if isinstance(g, Graph) else np.asarray(g, dtype=np.int64)
    if labels is None:
        raise ValueError("graph has no labels")
    if protocol not in ("citation", "copurchase"):
        raise ValueError(f"unknown protocol {protocol!r}")
    rng = np.random.default_rng(rng_seed)
    n_classes = int(labels.max()) + 1 if np.any(labels >= 0) else 0
    need = per_class if protocol == "citation" else 2 * per_class
    train, val = [], []
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        if len(members) <= need:
            raise ValueError(
                f"class {c} has {len(members)} nodes; need more than {need} for this split"
            )
        picked = rng.permutation(members)
        train.append(picked[:per_class])
        if protocol == "copurchase":
            val.append(picked[per_class : 2 * per_class])
    train = np.sort(np.concatenate(train))
    val = np.sort(np.concatenate(val)) if val else np.empty(0, dtype=np.int64)
    used = np.zeros(len(labels), dtype=bool)
    used[train] = True
    used[val] = True
    rest = np.flatnonzero(~used & (labels >= 0))
    if protocol == "citation":
        if test_size > len(rest):
            raise ValueError(f"test_size {test_size} exceeds {len(rest)} remaining nodes")
        test = np.sort(rng.choice(rest, size=test_size, replace=False))
    else:
        test = rest
    return NodeSplit(train, val, test)


def load_linqs(content_path, cites_path, name=None):
    """Read the LINQS text layout (``*.content`` + ``*.cites``).

    Content lines are ``id attr_1 ... attr_F class``; node order follows
    the content file and class names are numbered in sorted order.
    Citations naming unknown ids are skipped.
    """
    ids, rows, classes = {}, [], []
    for lineno, line in _read_lines(content_path):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 3:
            raise DatasetFormatError(content_path, lineno, "expected 'id attrs... class'")
        if parts[0] in ids:
            raise DatasetFormatError(content_path, lineno, f"duplicate feature row for id {parts[0]!r}")
        try:
            rows.append([float(v) for v in parts[1:-1]])
        except ValueError:
            raise DatasetFormatError(content_path, lineno, "non-numeric attribute") from None
        if rows and len(rows[-1]) != len(rows[0]):
            raise DatasetFormatError(content_path, lineno, "attribute count differs from first row")
        ids[parts[0]] = len(ids)
        classes.append(parts[-1])
    names = {c: i for i, c in enumerate(sorted(set(classes)))}
    pairs = []
    for lineno, line in _read_lines(cites_path):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise DatasetFormatError(cites_path, lineno, "expected 'cited citing'")
        if parts[0] in ids and parts[1] in ids:
            pairs.append((ids[parts[0]], ids[parts[1]]))
    x = np.array(rows, dtype=np.float64)
    labels = np.array([names[c] for c in classes], dtype=np.int64)
    return Graph(len(ids), canonical_edges(pairs), x, labels, name or Path(content_path).stem)
