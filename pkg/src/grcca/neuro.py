"""One-layer GCN encoder, BN projector, hand-written backprop and Adam."""

from __future__ import annotations

import struct

import numpy as np

BN_EPS = 1e-5
PRELU_INIT = 0.25
ACTIVATIONS = ("relu", "prelu")

_CKPT_MAGIC = b"GRCK"
_CKPT_VERSION = 1


class TapeReuseError(RuntimeError):
    pass


class ParamStore:
    """Named tensors with paired gradient and Adam moment buffers."""

    def __init__(self, tensors):
        self.tensors = {k: np.array(v, dtype=np.float64) for k, v in tensors.items()}
        self.grads = {k: np.zeros_like(v) for k, v in self.tensors.items()}
        self.adam_m = {k: np.zeros_like(v) for k, v in self.tensors.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in self.tensors.items()}
        self.step_count = 0

    def __getitem__(self, key):
        return self.tensors[key]

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)


class ModelParams(ParamStore):
    """Encoder + projector parameters.

    Tensors, in declaration order: ``w_enc`` (F x F'), ``b_enc``,
    ``w1``, ``b1``, ``gamma``, ``beta``, ``w2``, ``b2`` and, for PReLU,
    one slope for the encoder and one for the projector hidden layer.
    """

    def __init__(self, tensors, activation="relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        super().__init__(tensors)
        self.activation = activation

    @property
    def in_dim(self):
        return self.tensors["w_enc"].shape[0]

    @property
    def dim(self):
        return self.tensors["w_enc"].shape[1]

    def copy(self):
        other = ModelParams(self.tensors, self.activation)
        for src, dst in ((self.grads, other.grads), (self.adam_m, other.adam_m), (self.adam_v, other.adam_v)):
            for k in src:
                dst[k][...] = src[k]
        other.step_count = self.step_count
        return other

    def equals(self, other):
        return self.activation == other.activation and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(in_dim, dim=256, activation="relu", rng=None):
    """Glorot-uniform weights, zero biases, BN scale 1 / shift 0."""
    rng = np.random.default_rng(rng)
    tensors = {
        "w_enc": _glorot(rng, in_dim, dim),
        "b_enc": np.zeros(dim),
        "w1": _glorot(rng, dim, dim),
        "b1": np.zeros(dim),
        "gamma": np.ones(dim),
        "beta": np.zeros(dim),
        "w2": _glorot(rng, dim, dim),
        "b2": np.zeros(dim),
    }
    if activation == "prelu":
        tensors["prelu_enc"] = np.array([PRELU_INIT])
        tensors["prelu_proj"] = np.array([PRELU_INIT])
    return ModelParams(tensors, activation)


def count_params(params):
    return int(sum(t.size for t in params.tensors.values()))


def expected_param_count(in_dim, dim=256, activation="relu"):
    """Closed form of :func:`count_params` for the default architecture."""
    enc = in_dim * dim + dim
    mlp = 2 * (dim * dim + dim)
    bn = 2 * dim
    return enc + mlp + bn + (2 if activation == "prelu" else 0)


# ---------------------------------------------------------------------------
# forward / backward


def _act(x, activation, slope):
    if activation == "relu":
        return np.maximum(x, 0.0)
    return np.where(x > 0, x, slope * x)


def _act_backward(grad, pre, activation, slope):
    """Returns (grad wrt pre-activation, grad wrt slope or None)."""
    pos = pre > 0
    if activation == "relu":
        return np.where(pos, grad, 0.0), None
    d_slope = np.sum(np.where(pos, 0.0, grad * pre))
    return np.where(pos, grad, slope * grad), d_slope


class _Tape:
    def __init__(self, **cache):
        self.__dict__.update(cache)
        self.used = False

    def consume(self):
        if self.used:
            raise TapeReuseError("forward tape already consumed by a backward pass")
        self.used = True


def encode(mix, x, params):
    """H = act(mix @ x @ W + b). ``mix`` may be dense or scipy sparse."""
    w, b = params["w_enc"], params["b_enc"]
    if x.shape[1] != w.shape[0] or mix.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: mix {mix.shape}, x {x.shape}, w {w.shape}")
    slope = params.tensors.get("prelu_enc", [0.0])[0]
    pre = np.asarray(mix @ (x @ w)) + b
    h = _act(pre, params.activation, slope)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("encoder produced non-finite values")
    return h, _Tape(kind="enc", mix=mix, x=x, pre=pre)


def project(h, params):
    """Z = W2 act(BN(W1 h + b1)) + b2 with full-batch BN statistics."""
    w1, b1, w2, b2 = params["w1"], params["b1"], params["w2"], params["b2"]
    if h.shape[1] != w1.shape[0]:
        raise ValueError(f"dimension mismatch: h {h.shape}, w1 {w1.shape}")
    slope = params.tensors.get("prelu_proj", [0.0])[0]
    a1 = h @ w1 + b1
    mean = a1.mean(axis=0)
    var = a1.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a1 - mean) * inv_std
    y = params["gamma"] * xhat + params["beta"]
    hidden = _act(y, params.activation, slope)
    z = hidden @ w2 + b2
    return z, _Tape(kind="proj", h=h, xhat=xhat, inv_std=inv_std, y=y, hidden=hidden)


def backward(params, proj_tape, enc_tape, grad_z, grad_h=None):
    """Accumulate parameter gradients into ``params.grads``.

    ``grad_z`` is dL/dZ for this view; ``grad_h`` an optional direct
    dL/dH term. Returns dL/dH including the path through the projector.
    """
    proj_tape.consume()
    enc_tape.consume()
    t, g = params.tensors, params.grads
    # projector
    g["b2"] += grad_z.sum(axis=0)
    g["w2"] += proj_tape.hidden.T @ grad_z
    d_hidden = grad_z @ t["w2"].T
    slope = t.get("prelu_proj", [0.0])[0]
    d_y, d_slope = _act_backward(d_hidden, proj_tape.y, params.activation, slope)
    if d_slope is not None:
        g["prelu_proj"] += d_slope
    xhat = proj_tape.xhat
    g["gamma"] += np.sum(d_y * xhat, axis=0)
    g["beta"] += d_y.sum(axis=0)
    d_xhat = d_y * t["gamma"]
    n = xhat.shape[0]
    d_a1 = (proj_tape.inv_std / n) * (
        n * d_xhat - d_xhat.sum(axis=0) - xhat * np.sum(d_xhat * xhat, axis=0)
    )
    g["b1"] += d_a1.sum(axis=0)
    g["w1"] += proj_tape.h.T @ d_a1
    d_h = d_a1 @ t["w1"].T
    if grad_h is not None:
        d_h = d_h + grad_h
    # encoder
    slope = t.get("prelu_enc", [0.0])[0]
    d_pre, d_slope = _act_backward(d_h, enc_tape.pre, params.activation, slope)
    if d_slope is not None:
        g["prelu_enc"] += d_slope
    g["b_enc"] += d_pre.sum(axis=0)
    g["w_enc"] += enc_tape.x.T @ np.asarray(enc_tape.mix.T @ d_pre)
    return d_h


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=None):
    """Bias-corrected Adam update in place, then zero the gradients."""
    if t is None:
        t = params.step_count + 1
    if t < 1:
        raise ValueError("Adam step index must be >= 1")
    params.step_count = t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for k, p in params.tensors.items():
        grad = params.grads[k]
        m, v = params.adam_m[k], params.adam_v[k]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * (grad * grad)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    params.zero_grad()


def finite_difference_grads(loss_fn, params, step=1e-5, names=None):
    """Central differences of ``loss_fn(params)`` for every scalar entry."""
    out = {}
    for name in names or params.tensors:
        p = params.tensors[name]
        grad = np.zeros_like(p)
        flat, gflat = p.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn(params)
            flat[i] = orig - step
            down = loss_fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        out[name] = grad
    return out


# ---------------------------------------------------------------------------
# checkpoint


def save_checkpoint(path, params):
    """``GRCK`` file: header then every tensor as little-endian f64."""
    names = list(params.tensors)
    act_code = ACTIVATIONS.index(params.activation)
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQQII", _CKPT_VERSION, params.in_dim, params.dim, act_code, len(names)))
        for name in names:
            fh.write(params.tensors[name].astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, in_dim, dim, act_code, n_tensors = struct.unpack("<IQQII", fh.read(28))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        template = init_params(in_dim, dim, ACTIVATIONS[act_code], rng=0)
        if n_tensors != len(template.tensors):
            raise ValueError(f"{path}: expected {len(template.tensors)} tensors, found {n_tensors}")
        tensors = {}
        for name, ref in template.tensors.items():
            raw = fh.read(8 * ref.size)
            if len(raw) != 8 * ref.size:
                raise ValueError(f"{path}: truncated at tensor {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(ref.shape).astype(np.float64)
    return ModelParams(tensors, ACTIVATIONS[act_code])
