"""Acceptance suite: one PASS/FAIL line per criterion.

Criteria 1-5 need the Cora and Citeseer datasets in the tab-separated
layout under ``$GRCCA_DATA`` (default: ``data/`` in the repository root);
without them they fail with a "dataset not found" line.
"""

import os
from pathlib import Path

import numpy as np
import pytest

from gradcheck import relative_errors, sample_instance
from grcca import config as config_mod
from grcca import experiments
from grcca.augment import ppr_diffusion
from grcca.cli import main
from grcca.cluster import kmeans_fit
from grcca.contrastive import multi_loss
from grcca.evaluation import ari, auc_score, average_precision, cluster_accuracy, nmi
from grcca.graph import load_dataset
from oracles import (
    acc_permutations,
    ap_thresholds,
    ari_pairs,
    auc_pairs,
    kmeans_optimum,
    multi_loss_naive,
    nmi_formula,
    ppr_series,
)
from conftest import random_graph

DATA_ROOT = Path(os.environ.get("GRCCA_DATA", Path(__file__).resolve().parents[1] / "data"))


@pytest.fixture
def report(capsys):
    def emit(number, name, passed, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if passed else 'FAIL'}] {number:>2} {name}: {detail}")
        assert passed, detail
    return emit


def emit_result(report, res):
    report(res.number, res.name, res.passed, res.detail + (f" [{res.seconds:.0f}s]" if res.seconds else ""))


@pytest.fixture(scope="module")
def cora():
    d = DATA_ROOT / "cora"
    return load_dataset(d) if (d / "features.tsv").exists() else d


@pytest.fixture(scope="module")
def citeseer():
    d = DATA_ROOT / "citeseer"
    return load_dataset(d) if (d / "features.tsv").exists() else d


def run_on(dataset, number, name, fn, preset):
    if isinstance(dataset, Path):
        return experiments.missing_dataset(number, name, dataset)
    return fn(dataset, config_mod.preset(preset))


def test_criterion_01_cora_node(report, cora):
    emit_result(report, run_on(cora, 1, "node classification Cora", experiments.cora_node, "cora"))


def test_criterion_02_citeseer_node(report, citeseer):
    emit_result(report, run_on(citeseer, 2, "node classification Citeseer", experiments.citeseer_node, "citeseer"))


def test_criterion_03_cora_ablation(report, cora):
    emit_result(report, run_on(cora, 3, "ablation without diffusion (Cora)", experiments.cora_ablation, "cora"))


def test_criterion_04_cora_link(report, cora):
    emit_result(report, run_on(cora, 4, "link prediction Cora", experiments.cora_link, "cora"))


def test_criterion_05_citeseer_community(report, citeseer):
    emit_result(report, run_on(citeseer, 5, "community detection Citeseer", experiments.citeseer_community,
                               "citeseer"))


def test_criterion_06_param_count(report):
    emit_result(report, experiments.param_count_criterion(config_mod.preset("cora")))


def test_criterion_07_gradient_oracle(report):
    rng = np.random.default_rng(7007)
    worst, failures, redraws = 0.0, 0, 0
    for _ in range(100):
        views, params, runs, tau, r = sample_instance(rng)
        redraws += r
        err = max(relative_errors(views, params, runs, tau).values())
        worst = max(worst, err)
        failures += err >= 1e-4
    report(7, "gradient oracle", failures == 0,
           f"100 trials, {failures} failures, worst relative error {worst:.2e} (tol 1e-4; {redraws} kink redraws)")


def test_criterion_08_loss_oracle(report):
    rng = np.random.default_rng(8008)
    worst = 0.0
    for _ in range(1000):
        n, k, h, d = int(rng.integers(1, 9)), int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 5))
        z_v, z_u = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        runs = [(rng.normal(size=(k, d)), rng.normal(size=(k, d)), rng.integers(k, size=n), rng.integers(k, size=n))
                for _ in range(h)]
        tau = float(rng.uniform(0.05, 1.0))
        got = multi_loss(z_v, z_u, runs, tau).total
        worst = max(worst, abs(got - multi_loss_naive(z_v.tolist(), z_u.tolist(), runs, tau)))
    report(8, "loss oracle", worst < 1e-10, f"1000 trials, worst abs error {worst:.2e} (tol 1e-10)")


def test_criterion_09_diffusion_oracle(report):
    rng = np.random.default_rng(9009)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 201))
        g = random_graph(n, int(rng.integers(0, 3 * n)), 1, int(rng.integers(2**31)))
        alpha = float(rng.uniform(0.05, 0.5))
        exact = np.asarray(ppr_diffusion(g, alpha, method="exact"))
        worst = max(worst, np.abs(exact - ppr_series(n, g.edges.tolist(), alpha)).max())
    report(9, "diffusion oracle", worst <= 1e-6, f"50 graphs (n <= 200), worst elementwise error {worst:.2e} (tol 1e-6)")


def test_criterion_10_kmeans_optimum(report):
    rng = np.random.default_rng(31337)
    worst, misses = 0.0, 0
    for i in range(100):
        k = int(rng.integers(2, 4))
        x = rng.normal(size=(8, 2))
        gap = kmeans_fit(x, k, rng=i, n_init=20).inertia - kmeans_optimum(x, k)
        worst = max(worst, abs(gap))
        misses += abs(gap) > 1e-9
    report(10, "k-means optimality", misses == 0, f"100 eight-point instances, {misses} misses, worst gap {worst:.2e}")


def _metric_trials(rng):
    errs = dict.fromkeys(("AUC", "AP", "NMI", "ARI", "ACC"), 0.0)
    for _ in range(200):
        n = int(rng.integers(2, 40))
        y = rng.integers(2, size=n)
        y[:2] = [0, 1]
        s = np.round(rng.normal(size=n), int(rng.integers(0, 3)))
        errs["AUC"] = max(errs["AUC"], abs(auc_score(y, s) - auc_pairs(y.tolist(), s.tolist())))
        errs["AP"] = max(errs["AP"], abs(average_precision(y, s) - ap_thresholds(y.tolist(), s.tolist())))
        m = int(rng.integers(1, 13))
        a = rng.integers(int(rng.integers(1, 6)), size=m)
        b = rng.integers(int(rng.integers(1, 6)), size=m)
        errs["NMI"] = max(errs["NMI"], abs(nmi(a, b) - nmi_formula(a.tolist(), b.tolist())))
        errs["ARI"] = max(errs["ARI"], abs(ari(a, b) - ari_pairs(a.tolist(), b.tolist())))
        errs["ACC"] = max(errs["ACC"], abs(cluster_accuracy(a, b) - acc_permutations(a.tolist(), b.tolist())))
    return errs


def test_criterion_11_metric_oracles(report):
    errs = _metric_trials(np.random.default_rng(1111))
    worst = max(errs.values())
    report(11, "metric oracles", worst < 1e-10,
           "200 trials each, worst errors " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (tol 1e-10)")


def test_criterion_12_determinism(report, tmp_path, dataset_dir):
    conf = tmp_path / "run.conf"
    conf.write_text(f"dataset={dataset_dir}\nk=4\nepochs=3\ndim=32\n")
    files = []
    for o in ("a", "b"):
        rc = main(["train", "--config", str(conf), "--deterministic", "--seed", "7", "--out", str(tmp_path / o)])
        assert rc == 0
        files.append((tmp_path / o / "embeddings.grce").read_bytes())
    same = files[0] == files[1]
    report(12, "determinism", same, f"two --deterministic --seed 7 runs, {len(files[0])}-byte embedding files "
                                    + ("identical" if same else "differ"))
