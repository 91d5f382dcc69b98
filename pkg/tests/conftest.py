import numpy as np
import pytest

from grcca.graph import Graph, save_graph


def csbm(n=120, classes=3, features=40, p_in=0.08, p_out=0.005, seed=0):
    """Contextual block model: planted partition edges, class-biased binary features."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    rng.shuffle(y)
    same = y[:, None] == y[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    edges = np.argwhere(upper)
    word_bias = rng.random((classes, features)) < 0.25
    x = (rng.random((n, features)) < np.where(word_bias[y], 0.3, 0.03)).astype(float)
    return Graph(n, edges, x, y, name="csbm")


def random_graph(n, m, f, seed):
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, n, size=(m, 2))
    return Graph(n, pairs[pairs[:, 0] != pairs[:, 1]], rng.normal(size=(n, f)))


@pytest.fixture
def small_graph():
    return csbm()


@pytest.fixture
def dataset_dir(tmp_path, small_graph):
    d = tmp_path / "csbm"
    save_graph(small_graph, d)
    return d
