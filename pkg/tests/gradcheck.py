"""Full-pipeline finite-difference gradient check on small random instances."""

import numpy as np

from conftest import random_graph
from grcca.augment import AugParams, make_views
from grcca.cluster import multi_cluster
from grcca.contrastive import multi_loss
from grcca.neuro import backward, encode, finite_difference_grads, init_params, project

KINK_MARGIN = 1e-3
STEP = 1e-5
DENOM_FLOOR = 1e-4  # roundoff of the central difference is ~3e-9 in norm


def _forward(views, params):
    out = []
    for v in views:
        h, et = encode(v.mix, v.x_masked, params)
        z, pt = project(h, params)
        out.append((z, pt, et))
    return out


def _near_kink(fwd):
    return min(min(np.abs(et.pre).min(), np.abs(pt.y).min()) for _, pt, et in fwd) < KINK_MARGIN


def sample_instance(rng, n=6, f=5, dim=4):
    """Random views, perturbed parameters and frozen cluster assignments.

    Instances with a pre-activation within KINK_MARGIN of zero are
    redrawn. Returns ``(views, params, runs, tau, redraws)``.
    """
    redraws = 0
    while True:
        g = random_graph(n, int(rng.integers(3, 12)), f, int(rng.integers(2**31)))
        activation = ("relu", "prelu")[int(rng.integers(2))]
        views = make_views(g, AugParams(p_re=0.2, p_mnf_1=0.2, p_mnf_2=0.4, alpha=0.15), rng)
        params = init_params(f, dim, activation, rng)
        for name in ("b_enc", "b1", "beta", "b2"):
            params.tensors[name][...] = rng.normal(scale=0.3, size=dim)
        params.tensors["gamma"][...] = rng.uniform(0.5, 1.5, size=dim)
        if activation == "prelu":
            params.tensors["prelu_enc"][...] = rng.uniform(0.05, 0.5)
            params.tensors["prelu_proj"][...] = rng.uniform(0.05, 0.5)
        fwd = _forward(views, params)
        if _near_kink(fwd):
            redraws += 1
            continue
        k = int(rng.integers(2, 4))
        h = int(rng.integers(1, 3))
        runs = multi_cluster(fwd[0][0], fwd[1][0], k, h, rng)
        tau = float(rng.choice([0.05, 0.1, 0.5]))
        return views, params, runs, tau, redraws


def loss_of(views, params, runs, tau):
    (z_v, _, _), (z_u, _, _) = _forward(views, params)
    return multi_loss(z_v, z_u, runs, tau).total


def analytic_grads(views, params, runs, tau):
    params.zero_grad()
    (z_v, pt_v, et_v), (z_u, pt_u, et_u) = _forward(views, params)
    rep = multi_loss(z_v, z_u, runs, tau)
    backward(params, pt_v, et_v, rep.grad_z_v)
    backward(params, pt_u, et_u, rep.grad_z_u)
    grads = {k: v.copy() for k, v in params.grads.items()}
    params.zero_grad()
    return grads


def relative_errors(views, params, runs, tau):
    """Per-tensor ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)."""
    ana = analytic_grads(views, params, runs, tau)
    num = finite_difference_grads(lambda p: loss_of(views, p, runs, tau), params, STEP)
    errs = {}
    for name in ana:
        a, b = ana[name], num[name]
        denom = max(np.linalg.norm(a), np.linalg.norm(b), DENOM_FLOOR)
        errs[name] = float(np.linalg.norm(a - b) / denom)
    return errs
