"""End-to-end training loop, embedding extraction and the GRCCA estimator."""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .augment import AugParams, make_views, ppr_diffusion
from .cluster import MemoryBank, bank_source, multi_cluster
from .contrastive import multi_loss
from .graph import Graph, sym_normalize
from .neuro import ACTIVATIONS, adam_step, backward, encode, init_params, project

log = logging.getLogger(__name__)

_EMB_MAGIC = b"GRCE"
_EMB_VERSION = 1


class DivergenceError(FloatingPointError):
    def __init__(self, epoch, message="loss is not finite"):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


@dataclass(frozen=True)
class TrainConfig:
    aug: AugParams = field(default_factory=AugParams)
    k: int = 14
    h: int = 2
    tau: float = 0.05
    epochs: int = 10
    lr: float = 0.0005
    activation: str = "relu"
    mode: str = "async"
    seed: int = 0
    dim: int = 256
    disable_multi_clustering: bool = False
    disable_async: bool = False
    disable_diffusion: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.h < 1:
            raise ValueError(f"h must be >= 1, got {self.h}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.mode not in ("async", "sync"):
            raise ValueError(f"mode must be 'async' or 'sync', got {self.mode!r}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")

    @property
    def effective_h(self):
        return 1 if self.disable_multi_clustering else self.h

    @property
    def effective_mode(self):
        return "sync" if self.disable_async else self.mode

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    per_run_losses: list
    collapse_warnings: int
    seconds: float


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def losses(self):
        return np.array([r.loss for r in self.records])

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    @classmethod
    def read_jsonl(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls([EpochRecord(**json.loads(line)) for line in fh if line.strip()])


def _forward(view, params):
    h, enc_tape = encode(view.mix, view.x_masked, params)
    z, proj_tape = project(h, params)
    return h, z, enc_tape, proj_tape


def train(g, cfg, diffusion=None, on_epoch=None):
    """Run the contrastive cluster-assignment training loop.

    Returns ``(params, trace)``. ``diffusion`` may pass a precomputed
    diffusion matrix; ``on_epoch(epoch, bank, params)`` is called after
    each optimizer step.
    """
    if g.n < 1:
        raise ValueError("graph is empty")
    if cfg.k > g.n:
        raise ValueError(f"k={cfg.k} exceeds node count {g.n}")
    master = np.random.default_rng(cfg.seed)
    init_rng, aug_rng, cluster_rng = master.spawn(3)
    params = init_params(g.n_features, cfg.dim, cfg.activation, init_rng)
    if not cfg.disable_diffusion and diffusion is None:
        diffusion = ppr_diffusion(g, cfg.aug.alpha, cfg.aug.eps)
    mode, h = cfg.effective_mode, cfg.effective_h

    def views():
        return make_views(g, cfg.aug, aug_rng, diffusion, cfg.disable_diffusion)

    bank = MemoryBank()
    if mode == "async":
        v1, v2 = views()
        bank.update(encode(v1.mix, v1.x_masked, params)[0], encode(v2.mix, v2.x_masked, params)[0])

    trace = TrainTrace()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        runs = None
        if mode == "async":
            src_v, src_u = bank_source(mode, bank, None, None)
            runs = multi_cluster(src_v, src_u, cfg.k, h, cluster_rng)
        v1, v2 = views()
        _, z_v, enc_v, proj_v = _forward(v1, params)
        _, z_u, enc_u, proj_u = _forward(v2, params)
        if runs is None:
            runs = multi_cluster(*bank_source(mode, bank, z_v, z_u), cfg.k, h, cluster_rng)
        report = multi_loss(z_v, z_u, runs, cfg.tau)
        if not np.isfinite(report.total):
            raise DivergenceError(epoch)
        params.zero_grad()
        backward(params, proj_v, enc_v, report.grad_z_v)
        backward(params, proj_u, enc_u, report.grad_z_u)
        adam_step(params, cfg.lr)
        if not all(np.all(np.isfinite(t)) for t in params.tensors.values()):
            raise DivergenceError(epoch, "parameters became non-finite")
        if mode == "async":
            bank.update(z_v, z_u)
        rec = EpochRecord(
            epoch,
            report.total,
            report.per_run.tolist(),
            report.collapse_warnings,
            time.perf_counter() - t0,
        )
        trace.records.append(rec)
        log.info("epoch %d loss %.6f", epoch, rec.loss)
        if on_epoch is not None:
            on_epoch(epoch, bank, params)
    return params, trace


def embed(g, params, alpha=0.05, eps=None, diffusion=None, use_diffusion=True):
    """f(G) + f(GD(G)) on the unmasked graph; the projector is not applied.

    With ``use_diffusion=False`` the second term also uses the
    normalized adjacency.
    """
    norm_adj = sym_normalize(g)
    h = encode(norm_adj, g.x, params)[0]
    if use_diffusion:
        mix = diffusion if diffusion is not None else ppr_diffusion(g, alpha, eps)
    else:
        mix = norm_adj
    return h + encode(mix, g.x, params)[0]


def save_embeddings(path, h):
    """``GRCE`` file: header then row-major little-endian float32."""
    h = np.asarray(h)
    with open(path, "wb") as fh:
        fh.write(_EMB_MAGIC)
        fh.write(struct.pack("<IQQ", _EMB_VERSION, h.shape[0], h.shape[1]))
        fh.write(np.ascontiguousarray(h, dtype="<f4").tobytes())


def load_embeddings(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _EMB_MAGIC:
            raise ValueError(f"{path}: not an embedding file")
        version, n, dim = struct.unpack("<IQQ", fh.read(20))
        if version != _EMB_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        raw = fh.read()
    if len(raw) != 4 * n * dim:
        raise ValueError(f"{path}: expected {n}x{dim} values")
    return np.frombuffer(raw, dtype="<f4").reshape(n, dim).astype(np.float64)


# ---------------------------------------------------------------------------
# estimator


def _as_graph(X, edges):
    if isinstance(X, Graph):
        return X
    if edges is None:
        raise ValueError("pass a Graph, or a feature matrix together with edges=")
    x = np.asarray(X, dtype=np.float64)
    return Graph(x.shape[0], edges, x)


class GRCCA(TransformerMixin, BaseEstimator):
    """Unsupervised node embeddings from contrasted cluster assignments.

    ``fit`` accepts a :class:`~grcca.graph.Graph` or a feature matrix
    plus ``edges``; ``transform`` returns the n x ``embedding_dim``
    encoder embeddings of the given graph.
    """

    def __init__(
        self,
        p_re=0.2,
        p_mnf_1=0.3,
        p_mnf_2=0.4,
        alpha=0.05,
        eps=None,
        n_prototypes=14,
        n_clusterings=2,
        tau=0.05,
        epochs=10,
        learning_rate=0.0005,
        activation="relu",
        mode="async",
        embedding_dim=256,
        random_state=0,
        disable_multi_clustering=False,
        disable_async=False,
        disable_diffusion=False,
    ):
        self.p_re = p_re
        self.p_mnf_1 = p_mnf_1
        self.p_mnf_2 = p_mnf_2
        self.alpha = alpha
        self.eps = eps
        self.n_prototypes = n_prototypes
        self.n_clusterings = n_clusterings
        self.tau = tau
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.activation = activation
        self.mode = mode
        self.embedding_dim = embedding_dim
        self.random_state = random_state
        self.disable_multi_clustering = disable_multi_clustering
        self.disable_async = disable_async
        self.disable_diffusion = disable_diffusion

    @classmethod
    def from_config(cls, cfg):
        return cls(
            p_re=cfg.aug.p_re,
            p_mnf_1=cfg.aug.p_mnf_1,
            p_mnf_2=cfg.aug.p_mnf_2,
            alpha=cfg.aug.alpha,
            eps=cfg.aug.eps,
            n_prototypes=cfg.k,
            n_clusterings=cfg.h,
            tau=cfg.tau,
            epochs=cfg.epochs,
            learning_rate=cfg.lr,
            activation=cfg.activation,
            mode=cfg.mode,
            embedding_dim=cfg.dim,
            random_state=cfg.seed,
            disable_multi_clustering=cfg.disable_multi_clustering,
            disable_async=cfg.disable_async,
            disable_diffusion=cfg.disable_diffusion,
        )

    def to_config(self):
        aug = AugParams(self.p_re, self.p_mnf_1, self.p_mnf_2, self.alpha, self.eps)
        return TrainConfig(
            aug=aug,
            k=self.n_prototypes,
            h=self.n_clusterings,
            tau=self.tau,
            epochs=self.epochs,
            lr=self.learning_rate,
            activation=self.activation,
            mode=self.mode,
            seed=self.random_state,
            dim=self.embedding_dim,
            disable_multi_clustering=self.disable_multi_clustering,
            disable_async=self.disable_async,
            disable_diffusion=self.disable_diffusion,
        )

    def _fit(self, g):
        cfg = self.to_config()
        diffusion = None if cfg.disable_diffusion else ppr_diffusion(g, cfg.aug.alpha, cfg.aug.eps)
        self.params_, self.trace_ = train(g, cfg, diffusion=diffusion)
        self.n_features_in_ = g.n_features
        return diffusion

    def fit(self, X, y=None, edges=None):
        self._fit(_as_graph(X, edges))
        return self

    def transform(self, X, edges=None, diffusion=None):
        check_is_fitted(self, "params_")
        g = _as_graph(X, edges)
        if g.n_features != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {g.n_features}")
        return embed(g, self.params_, self.alpha, self.eps, diffusion=diffusion,
                     use_diffusion=not self.disable_diffusion)

    def fit_transform(self, X, y=None, edges=None):
        g = _as_graph(X, edges)
        return self.transform(g, diffusion=self._fit(g))


def with_overrides(cfg, **changes):
    """Copy of ``cfg`` with top-level or ``aug_*`` fields replaced."""
    aug_changes = {k[4:]: v for k, v in changes.items() if k.startswith("aug_")}
    rest = {k: v for k, v in changes.items() if not k.startswith("aug_")}
    if aug_changes:
        rest["aug"] = replace(cfg.aug, **aug_changes)
    return replace(cfg, **rest)
