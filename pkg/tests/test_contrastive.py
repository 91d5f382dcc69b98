import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grcca.cluster import ClusterState
from grcca.contrastive import (
    CollapseWarning,
    contrastive_loss,
    multi_loss,
    pair_loss,
    predict_distribution,
)
from oracles import multi_loss_naive, swapped_loss_naive


def random_run(rng, n, k, d):
    return (rng.normal(size=(k, d)), rng.normal(size=(k, d)), rng.integers(k, size=n), rng.integers(k, size=n))


def test_distribution_uniform():
    p = predict_distribution(np.ones(3), np.ones((4, 3)), 0.3)
    np.testing.assert_allclose(p, 0.25, rtol=1e-15)


def test_distribution_example():
    z, c = np.array([1.0, 0.0]), np.eye(2)
    e = math.e
    np.testing.assert_allclose(predict_distribution(z, c, 1.0), [e / (e + 1), 1 / (e + 1)], rtol=1e-15)
    assert predict_distribution(z, c, 0.05)[0] > 0.999


def test_distribution_rejects_tau():
    with pytest.raises(ValueError):
        predict_distribution(np.ones(2), np.eye(2), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_distribution_homogeneous(seed, c):
    rng = np.random.default_rng(seed)
    z, protos = rng.normal(size=4), rng.normal(size=(3, 4))
    tau = rng.uniform(0.05, 1)
    p = predict_distribution(z, protos, tau)
    assert abs(p.sum() - 1) < 1e-12
    np.testing.assert_allclose(predict_distribution(c * z, protos, c * tau), p, rtol=1e-9, atol=1e-300)


def test_pair_loss_values():
    assert pair_loss(2, np.full(5, 0.2)) == pytest.approx(math.log(5), rel=1e-15)
    assert pair_loss(1, np.array([0.0, 1.0])) == 0.0
    e = math.e
    assert pair_loss(0, np.array([e / (e + 1), 1 / (e + 1)])) == pytest.approx(0.3133, abs=5e-5)
    assert pair_loss(0, np.array([0.7311, 0.2689])) == -math.log(0.7311)


def test_pair_loss_clamps():
    with pytest.warns(CollapseWarning):
        assert pair_loss(0, np.array([0.0, 1.0])) == pytest.approx(-math.log(1e-30))


def test_loss_at_assigned_prototypes():
    c = np.eye(2)
    q = np.array([0])
    loss, g_v, g_u, _ = contrastive_loss(c[:1], c[:1], (c, c, q, q), 0.05)
    assert loss == pytest.approx(2 * math.log1p(math.exp(-20)), rel=1e-9)
    assert loss == pytest.approx(4.1e-9, rel=0.01)


@pytest.mark.parametrize("k", [2, 3, 5])
def test_equal_prototypes_give_2lnK(k):
    rng = np.random.default_rng(k)
    c = np.tile(rng.normal(size=(1, 4)), (k, 1))
    z_v, z_u = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    q = rng.integers(k, size=6)
    loss, *_ = contrastive_loss(z_v, z_u, (c, c, q, q), 0.1)
    assert loss == pytest.approx(2 * math.log(k), rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loss_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    n, k, d = int(rng.integers(1, 9)), int(rng.integers(1, 4)), 3
    z_v, z_u = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    run = random_run(rng, n, k, d)
    tau = float(rng.uniform(0.05, 1.0))
    loss, *_ = contrastive_loss(z_v, z_u, run, tau)
    assert loss >= 0
    assert abs(loss - swapped_loss_naive(z_v.tolist(), z_u.tolist(), *run, tau)) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, k, d = 8, 3, 4
    z_v, z_u = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    runs = [random_run(rng, n, k, d) for _ in range(2)]
    rep = multi_loss(z_v, z_u, runs, 0.1)
    for z, grad in ((z_v, rep.grad_z_v), (z_u, rep.grad_z_u)):
        num = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            orig = z[idx]
            z[idx] = orig + 1e-5
            up = multi_loss(z_v, z_u, runs, 0.1).total
            z[idx] = orig - 1e-5
            down = multi_loss(z_v, z_u, runs, 0.1).total
            z[idx] = orig
            num[idx] = (up - down) / 2e-5
        assert np.linalg.norm(grad - num) / np.linalg.norm(num) < 1e-4


def test_prototypes_not_modified():
    rng = np.random.default_rng(0)
    run = random_run(rng, 5, 3, 4)
    copies = [np.copy(a) for a in run]
    contrastive_loss(rng.normal(size=(5, 4)), rng.normal(size=(5, 4)), run, 0.05)
    for a, b in zip(run, copies):
        assert np.array_equal(a, b)


def test_accepts_cluster_states():
    rng = np.random.default_rng(1)
    c_v, c_u, q_v, q_u = random_run(rng, 4, 2, 3)
    z_v, z_u = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    pair = (ClusterState(c_v, q_v, 0.0), ClusterState(c_u, q_u, 0.0))
    assert contrastive_loss(z_v, z_u, pair, 0.2)[0] == contrastive_loss(z_v, z_u, (c_v, c_u, q_v, q_u), 0.2)[0]


def test_shape_mismatch():
    rng = np.random.default_rng(1)
    run = random_run(rng, 4, 2, 3)
    with pytest.raises(ValueError):
        contrastive_loss(np.ones((4, 3)), np.ones((4, 2)), run, 0.1)


def test_multi_loss_h1_and_identical_runs():
    rng = np.random.default_rng(2)
    z_v, z_u = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    run = random_run(rng, 6, 3, 3)
    single, g_v, g_u, _ = contrastive_loss(z_v, z_u, run, 0.1)
    rep1 = multi_loss(z_v, z_u, [run], 0.1)
    assert rep1.total == single and np.array_equal(rep1.grad_z_v, g_v)
    rep2 = multi_loss(z_v, z_u, [run, run], 0.1)
    assert rep2.total == pytest.approx(single, rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_multi_loss_is_mean(seed):
    rng = np.random.default_rng(seed)
    z_v, z_u = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    runs = [random_run(rng, 5, 3, 3) for _ in range(2)]
    rep = multi_loss(z_v, z_u, runs, 0.15)
    losses = [contrastive_loss(z_v, z_u, r, 0.15)[0] for r in runs]
    assert abs(rep.total - (losses[0] + losses[1]) / 2) < 1e-12
    assert abs(rep.total - multi_loss_naive(z_v.tolist(), z_u.tolist(), runs, 0.15)) < 1e-10


def test_multi_loss_needs_runs():
    with pytest.raises(ValueError):
        multi_loss(np.ones((2, 2)), np.ones((2, 2)), [], 0.1)
