import numpy as np
import pytest
import scipy.sparse as sp
from scipy.stats import chisquare

from conftest import random_graph
from grcca.augment import (
    AugParams,
    load_diffusion,
    make_views,
    mask_node_features,
    ppr_diffusion,
    remove_edges,
    save_diffusion,
    series_order,
)
from grcca.graph import Graph, sym_normalize
from oracles import ppr_series


def dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m)


@pytest.mark.parametrize("alpha", [0.05, 0.5, 0.9])
def test_ppr_isolated_node(alpha):
    g = Graph(1, np.empty((0, 2)), np.ones((1, 1)))
    np.testing.assert_allclose(dense(ppr_diffusion(g, alpha)), [[1.0]], rtol=1e-15)


def test_ppr_path_closed_form():
    g = Graph(2, [(0, 1)], np.ones((2, 1)))
    np.testing.assert_allclose(dense(ppr_diffusion(g, 0.5)), [[0.75, 0.25], [0.25, 0.75]], rtol=1e-14)


def test_ppr_rejects_alpha():
    g = Graph(2, [(0, 1)], np.ones((2, 1)))
    for a in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            ppr_diffusion(g, a)


@pytest.mark.parametrize("seed", range(5))
def test_ppr_exact_matches_series_oracle(seed):
    g = random_graph(6, 8, 2, seed)
    s = dense(ppr_diffusion(g, 0.05))
    np.testing.assert_allclose(s, ppr_series(6, g.edges.tolist(), 0.05), rtol=0, atol=1e-8)
    assert np.array_equal(s, s.T)


def test_ppr_series_path_matches_exact():
    g = random_graph(60, 150, 2, 7)
    exact = dense(ppr_diffusion(g, 0.1, method="exact"))
    series = dense(ppr_diffusion(g, 0.1, eps=0.0, method="series", tail_tol=1e-12))
    np.testing.assert_allclose(series, exact, rtol=0, atol=1e-10)


def test_series_order():
    k = series_order(0.05, 1e-4)
    assert 0.95 ** (k + 1) < 1e-4 <= 0.95**k


def test_ppr_threshold_keeps_row_sums():
    g = random_graph(40, 60, 2, 3)
    full = dense(ppr_diffusion(g, 0.05))
    thin = ppr_diffusion(g, 0.05, eps=0.01)
    assert sp.issparse(thin) and thin.nnz < 40 * 40
    np.testing.assert_allclose(np.asarray(thin.sum(axis=1)).ravel(), full.sum(axis=1), rtol=1e-12)
    assert np.all(np.abs(thin.data) >= 0.01 - 1e-15)


def test_remove_edges_extremes():
    g = random_graph(20, 50, 3, 0)
    rng = np.random.default_rng(0)
    assert remove_edges(g, 0.0, rng) == g
    empty = remove_edges(g, 1.0, rng)
    assert empty.n_edges == 0 and np.array_equal(empty.x, g.x)


def test_remove_edges_subset():
    g = random_graph(30, 80, 3, 1)
    out = remove_edges(g, 0.5, np.random.default_rng(2))
    assert set(map(tuple, out.edges.tolist())) <= set(map(tuple, g.edges.tolist()))
    assert out.n == g.n and np.array_equal(out.x, g.x)


def test_remove_edges_rate():
    g = Graph(2, [(0, 1)], np.ones((2, 1)))
    rng = np.random.default_rng(12345)
    removed = sum(remove_edges(g, 0.2, rng).n_edges == 0 for _ in range(10_000))
    assert abs(removed / 10_000 - 0.2) <= 0.01


def test_mask_identity_and_count():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 10))
    assert np.array_equal(mask_node_features(x, 0.0, rng), x)
    out = mask_node_features(x, 0.5, rng)
    zeroed = np.flatnonzero(np.all(out == 0, axis=0))
    assert len(zeroed) == 5
    kept = np.setdiff1d(np.arange(10), zeroed)
    assert np.array_equal(out[:, kept], x[:, kept])
    assert np.all(mask_node_features(x, 1.0, rng) == 0)


@pytest.mark.parametrize("p, f, k", [(0.3, 1433, 429), (0.4, 3703, 1481), (0.3, 10, 3), (0.7, 10, 7)])
def test_mask_floor(p, f, k):
    out = mask_node_features(np.ones((2, f)), p, np.random.default_rng(0))
    assert int(np.sum(np.all(out == 0, axis=0))) == k


def test_mask_columns_uniform():
    rng = np.random.default_rng(99)
    f = 10
    counts = np.zeros(f)
    for _ in range(10_000):
        counts += np.all(mask_node_features(np.ones((1, f)), 0.3, rng) == 0, axis=0)
    assert counts.sum() == 30_000
    assert chisquare(counts).pvalue > 0.001


def test_make_views_zero_params():
    g = random_graph(15, 30, 4, 2)
    v1, v2 = make_views(g, AugParams(0.0, 0.0, 0.0, 0.05, 0.0), np.random.default_rng(0))
    assert np.array_equal(v2.mix.toarray(), sym_normalize(g).toarray())
    assert np.array_equal(v1.x_masked, g.x) and np.array_equal(v2.x_masked, g.x)
    np.testing.assert_allclose(dense(v1.mix), ppr_series(15, g.edges.tolist(), 0.05), atol=1e-8)


def test_make_views_deterministic_and_masks_independent():
    g = random_graph(15, 30, 40, 2)
    p = AugParams()
    a = make_views(g, p, np.random.default_rng(5))
    b = make_views(g, p, np.random.default_rng(5))
    for va, vb in zip(a, b):
        assert np.array_equal(dense(va.mix), dense(vb.mix))
        assert np.array_equal(va.x_masked, vb.x_masked)
    m1 = set(np.flatnonzero(np.all(a[0].x_masked == 0, axis=0)))
    m2 = set(np.flatnonzero(np.all(a[1].x_masked == 0, axis=0)))
    assert len(m1) == 12 and len(m2) == 16 and m1 != m2


def test_make_views_cached_diffusion_is_used():
    g = random_graph(10, 20, 3, 0)
    s = ppr_diffusion(g, 0.05)
    v1, _ = make_views(g, AugParams(), np.random.default_rng(0), diffusion=s)
    assert v1.mix is s


def test_make_views_without_diffusion():
    g = random_graph(10, 20, 3, 0)
    v1, v2 = make_views(g, AugParams(), np.random.default_rng(0), disable_diffusion=True)
    assert sp.issparse(v1.mix) and sp.issparse(v2.mix)


def test_aug_params_validation():
    for kw in ({"p_re": 1.5}, {"p_mnf_1": -0.1}, {"p_mnf_2": 2}, {"alpha": 0.0}, {"alpha": 1.0}, {"eps": -1e-3}):
        with pytest.raises(ValueError):
            AugParams(**kw)


def test_diffusion_cache_roundtrip(tmp_path):
    g = random_graph(50, 100, 2, 4)
    s = ppr_diffusion(g, 0.05, eps=1e-3)
    save_diffusion(tmp_path / "s.grpd", s)
    raw = (tmp_path / "s.grpd").read_bytes()
    assert raw[:4] == b"GRPD"
    back = load_diffusion(tmp_path / "s.grpd")
    assert np.array_equal(back.indptr, s.indptr)
    assert np.array_equal(back.indices, s.indices) and np.array_equal(back.data, s.data)


def test_diffusion_cache_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ValueError):
        load_diffusion(tmp_path / "bad")
