"""Graph augmentations: PPR diffusion, edge removal, feature masking."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .graph import sym_normalize

EXACT_SOLVE_MAX_N = 5000
_PPRD_MAGIC = b"GRPD"
_PPRD_VERSION = 1


@dataclass(frozen=True)
class AugParams:
    p_re: float = 0.2
    p_mnf_1: float = 0.3
    p_mnf_2: float = 0.4
    alpha: float = 0.05
    eps: float | None = None  # None: 0 for exact solve, 1e-4 for the series path

    def __post_init__(self):
        for key in ("p_re", "p_mnf_1", "p_mnf_2"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{key} must lie in [0, 1], got {v}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.eps is not None and self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")


@dataclass(frozen=True, eq=False)
class View:
    """One augmented graph: a node-mixing matrix and masked attributes."""

    mix: np.ndarray | sp.csr_matrix
    x_masked: np.ndarray

    @property
    def n(self):
        return self.x_masked.shape[0]


def series_order(alpha, tail_tol):
    """Smallest K with (1 - alpha)^(K+1) < tail_tol."""
    k = 0
    while (1.0 - alpha) ** (k + 1) >= tail_tol:
        k += 1
    return k


def _threshold_rows(rows, eps):
    """Drop |s| < eps within each row, then rescale to the original row sum."""
    before = rows.sum(axis=1)
    kept = np.where(np.abs(rows) >= eps, rows, 0.0)
    after = kept.sum(axis=1)
    scale = np.divide(before, after, out=np.ones_like(before), where=after != 0)
    return kept * scale[:, None]


def _ppr_exact(t, alpha):
    n = t.shape[0]
    m = np.eye(n) - (1.0 - alpha) * t.toarray()
    # I - (1-alpha) T is symmetric positive definite: the spectrum of T lies in (-1, 1].
    s = alpha * scipy.linalg.solve(m, np.eye(n), assume_a="pos")
    return 0.5 * (s + s.T)


def _ppr_series(t, alpha, eps, tail_tol, block=256):
    n = t.shape[0]
    order = series_order(alpha, tail_tol)
    decay = 1.0 - alpha
    indptr = [0]
    indices, values = [], []
    for start in range(0, n, block):
        stop = min(n, start + block)
        cur = np.zeros((n, stop - start))
        cur[np.arange(start, stop), np.arange(stop - start)] = 1.0
        acc = alpha * cur
        for _ in range(order):
            cur = decay * (t @ cur)
            acc += alpha * cur
        # T is symmetric, so the column block transposed is the row block.
        rows = _threshold_rows(acc.T, eps) if eps > 0 else acc.T
        for r in rows:
            nz = np.flatnonzero(r)
            indices.append(nz)
            values.append(r[nz])
            indptr.append(indptr[-1] + len(nz))
    return sp.csr_matrix(
        (np.concatenate(values), np.concatenate(indices), np.array(indptr)), shape=(n, n)
    )


def ppr_diffusion(g, alpha=0.05, eps=None, method="auto", tail_tol=1e-4):
    """Personalized-PageRank diffusion alpha * (I - (1 - alpha) T)^-1.

    ``T`` is the symmetrically normalized adjacency with self-loops.
    ``method="exact"`` solves the dense system; ``method="series"`` sums
    alpha * sum_k (1 - alpha)^k T^k up to the order where the geometric
    tail drops below ``tail_tol``. ``"auto"`` picks exact for
    n <= 5000. Entries below ``eps`` in magnitude are dropped and each
    row is rescaled to keep its sum.

    Returns a dense array when nothing is dropped on the exact path,
    otherwise CSR.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if method == "auto":
        method = "exact" if g.n <= EXACT_SOLVE_MAX_N else "series"
    if eps is None:
        eps = 0.0 if method == "exact" else 1e-4
    t = sym_normalize(g)
    if method == "exact":
        s = _ppr_exact(t, alpha)
        if eps > 0:
            return sp.csr_matrix(_threshold_rows(s, eps))
        return s
    if method == "series":
        return _ppr_series(t, alpha, eps, tail_tol)
    raise ValueError(f"unknown method {method!r}")


def remove_edges(g, p_re, rng):
    """Drop each undirected edge independently with probability ``p_re``."""
    if not 0.0 <= p_re <= 1.0:
        raise ValueError(f"p_re must lie in [0, 1], got {p_re}")
    draws = rng.random(g.n_edges)
    return g.with_edges(g.edges[draws >= p_re])


def masked_columns(n_features, p_mnf, rng):
    k = int(math.floor(p_mnf * n_features + 1e-9))
    return rng.choice(n_features, size=k, replace=False)


def mask_node_features(x, p_mnf, rng):
    """Zero floor(p_mnf * F) distinct attribute columns chosen uniformly."""
    if not 0.0 <= p_mnf <= 1.0:
        raise ValueError(f"p_mnf must lie in [0, 1], got {p_mnf}")
    out = np.array(x, dtype=np.float64, copy=True)
    cols = masked_columns(out.shape[1], p_mnf, rng)
    out[:, cols] = 0.0
    return out


def make_views(g, params, rng, diffusion=None, disable_diffusion=False):
    """Build the (GD + MNF, RE + MNF) view pair.

    ``diffusion`` is a precomputed :func:`ppr_diffusion` result; the
    diffusion matrix is deterministic so callers cache it across epochs.
    With ``disable_diffusion`` the first view is another independent
    edge-removal draw instead.
    """
    if disable_diffusion:
        mix1 = sym_normalize(remove_edges(g, params.p_re, rng))
    else:
        mix1 = diffusion if diffusion is not None else ppr_diffusion(g, params.alpha, params.eps)
    x1 = mask_node_features(g.x, params.p_mnf_1, rng)
    mix2 = sym_normalize(remove_edges(g, params.p_re, rng))
    x2 = mask_node_features(g.x, params.p_mnf_2, rng)
    return View(mix1, x1), View(mix2, x2)


def save_diffusion(path, s):
    """Write a diffusion matrix in the little-endian ``GRPD`` layout.

    Layout: magic, version u32, n u64, nnz u64, per-row counts u64[n],
    column indices u64[nnz], values f64[nnz].
    """
    s = sp.csr_matrix(s)
    s.sort_indices()
    n = s.shape[0]
    counts = np.diff(s.indptr).astype("<u8")
    with open(path, "wb") as fh:
        fh.write(_PPRD_MAGIC)
        fh.write(struct.pack("<IQQ", _PPRD_VERSION, n, s.nnz))
        fh.write(counts.tobytes())
        fh.write(s.indices.astype("<u8").tobytes())
        fh.write(s.data.astype("<f8").tobytes())


def load_diffusion(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _PPRD_MAGIC:
            raise ValueError(f"{path}: not a diffusion cache file")
        version, n, nnz = struct.unpack("<IQQ", fh.read(20))
        if version != _PPRD_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        counts = np.frombuffer(fh.read(8 * n), dtype="<u8")
        indices = np.frombuffer(fh.read(8 * nnz), dtype="<u8")
        values = np.frombuffer(fh.read(8 * nnz), dtype="<f8")
    if len(values) != nnz or counts.sum() != nnz:
        raise ValueError(f"{path}: truncated diffusion cache")
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return sp.csr_matrix((values.astype(np.float64), indices.astype(np.int64), indptr), shape=(n, n))
