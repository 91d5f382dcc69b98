"""Swapped cluster-assignment cross entropy and its gradient."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .cluster import l2_normalize

PROB_FLOOR = 1e-30
_MAX_NLL = -math.log(PROB_FLOOR)


class CollapseWarning(RuntimeWarning):
    """The assigned prototype received (numerically) zero probability."""


@dataclass
class LossReport:
    total: float
    per_run: np.ndarray
    grad_z_v: np.ndarray
    grad_z_u: np.ndarray
    collapse_warnings: int = 0


def _check_tau(tau):
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def predict_distribution(z, prototypes, tau):
    """softmax(z C^T / tau); works on one row or a batch of rows."""
    _check_tau(tau)
    return np.exp(_log_softmax(np.asarray(z) @ np.asarray(prototypes).T / tau))


def pair_loss(q_idx, p):
    """-log p[q_idx], floored at p = 1e-30."""
    pq = float(p[q_idx])
    if pq < PROB_FLOOR:
        warnings.warn(f"assigned cluster probability {pq:g} clamped", CollapseWarning, stacklevel=2)
        pq = PROB_FLOOR
    return -math.log(pq)


def _normalize_backward(z, u, grad_u, eps=1e-12):
    norms = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), eps)
    return (grad_u - u * np.sum(u * grad_u, axis=1, keepdims=True)) / norms


def _swapped_term(u, prototypes, targets, tau):
    """Summed NLL of ``targets`` under softmax(u C^T / tau) and d/du."""
    logp = _log_softmax(u @ prototypes.T / tau)
    rows = np.arange(len(targets))
    nll = -logp[rows, targets]
    clamped = nll > _MAX_NLL
    collapsed = int(np.count_nonzero(clamped))
    nll = np.minimum(nll, _MAX_NLL)
    resid = np.exp(logp)
    resid[rows, targets] -= 1.0
    resid[clamped] = 0.0  # the floored term is constant
    return float(nll.sum()), resid @ prototypes / tau, collapsed


def contrastive_loss(z_v, z_u, state_pair, tau, normalize=True):
    """Swapped-prediction loss for one clustering run.

    ``state_pair`` is ``(state_v, state_u)`` (ClusterState) or the tuple
    ``(C_v, C_u, Q_v, Q_u)``. Prototypes and assignments are constants.

    Returns ``(loss, grad_z_v, grad_z_u, collapsed)``.
    """
    _check_tau(tau)
    if len(state_pair) == 2:
        c_v, c_u = state_pair[0].prototypes, state_pair[1].prototypes
        q_v, q_u = state_pair[0].assignments, state_pair[1].assignments
    else:
        c_v, c_u, q_v, q_u = state_pair
    if z_v.shape != z_u.shape or c_v.shape[1] != z_v.shape[1] or c_u.shape[1] != z_u.shape[1]:
        raise ValueError("inconsistent representation / prototype shapes")
    n = z_v.shape[0]
    if normalize:
        u_v, u_u = l2_normalize(z_v), l2_normalize(z_u)
        c_v, c_u = l2_normalize(c_v), l2_normalize(c_u)
    else:
        u_v, u_u = z_v, z_u
    # view u predicts view v's assignment against C_v, and vice versa
    loss_u, g_u, col_u = _swapped_term(u_u, c_v, q_v, tau)
    loss_v, g_v, col_v = _swapped_term(u_v, c_u, q_u, tau)
    g_u /= n
    g_v /= n
    if normalize:
        g_u = _normalize_backward(z_u, u_u, g_u)
        g_v = _normalize_backward(z_v, u_v, g_v)
    return (loss_u + loss_v) / n, g_v, g_u, col_u + col_v


def multi_loss(z_v, z_u, runs, tau, normalize=True):
    """Mean of the per-run losses over ``h`` clustering runs."""
    if len(runs) < 1:
        raise ValueError("need at least one clustering run")
    per_run = np.empty(len(runs))
    grad_v = np.zeros_like(z_v, dtype=np.float64)
    grad_u = np.zeros_like(z_u, dtype=np.float64)
    collapsed = 0
    for i, pair in enumerate(runs):
        loss, g_v, g_u, col = contrastive_loss(z_v, z_u, pair, tau, normalize)
        per_run[i] = loss
        grad_v += g_v
        grad_u += g_u
        collapsed += col
    h = len(runs)
    return LossReport(float(per_run.mean()), per_run, grad_v / h, grad_u / h, collapsed)
