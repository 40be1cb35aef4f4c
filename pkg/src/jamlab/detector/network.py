"""Two-conv / three-fc binary classifier with hand-written backpropagation.

Layer stack (canonical sizes for a 3x300x300 input)::

    conv1 3->16 7x7  -> relu -> maxpool 2   16x294x294 -> 16x147x147
    conv2 16->32 7x7 -> relu -> maxpool 2   32x141x141 -> 32x70x70
    flatten (156800) -> dropout(0.2)
    fc1 156800->256 -> relu -> fc2 256->84 -> relu -> fc3 84->1 -> logistic

Arrays are NCHW. Parameters live in ``DetectorModel.params`` keyed by
``PARAM_ORDER`` names.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ArchitectureError, ContractError

PARAM_ORDER = ("conv1.w", "conv1.b", "conv2.w", "conv2.b",
               "fc1.w", "fc1.b", "fc2.w", "fc2.b", "fc3.w", "fc3.b")
EPS = 1e-7


@dataclass(frozen=True)
class NetworkSpec:
    in_channels: int = 3
    conv1_channels: int = 16
    conv2_channels: int = 32
    kernel_size: int = 7
    pool_size: int = 2
    input_size: int = 300
    fc1_units: int = 256
    fc2_units: int = 84
    dropout_p: float = 0.2

    def __post_init__(self):
        if not 0 <= self.dropout_p < 1:
            raise ArchitectureError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        chain = self.spatial_chain()
        if min(chain) < 1:
            raise ArchitectureError(
                f"input {self.input_size} collapses through the layer stack: {chain}")

    def spatial_chain(self):
        """Spatial side after conv1, pool, conv2, pool."""
        k, p = self.kernel_size, self.pool_size
        a = self.input_size - k + 1
        b = a // p
        c = b - k + 1
        d = c // p
        return (a, b, c, d)

    @property
    def flatten_len(self):
        return self.conv2_channels * self.spatial_chain()[-1] ** 2

    def param_shapes(self):
        k = self.kernel_size
        return {
            "conv1.w": (self.conv1_channels, self.in_channels, k, k),
            "conv1.b": (self.conv1_channels,),
            "conv2.w": (self.conv2_channels, self.conv1_channels, k, k),
            "conv2.b": (self.conv2_channels,),
            "fc1.w": (self.fc1_units, self.flatten_len),
            "fc1.b": (self.fc1_units,),
            "fc2.w": (self.fc2_units, self.fc1_units),
            "fc2.b": (self.fc2_units,),
            "fc3.w": (1, self.fc2_units),
            "fc3.b": (1,),
        }

    def layer_shapes(self):
        """Activation shape (without batch axis) after each layer."""
        a, b, c, d = self.spatial_chain()
        return {
            "conv1": (self.conv1_channels, a, a),
            "pool1": (self.conv1_channels, b, b),
            "conv2": (self.conv2_channels, c, c),
            "pool2": (self.conv2_channels, d, d),
            "flatten": (self.flatten_len,),
            "fc1": (self.fc1_units,),
            "fc2": (self.fc2_units,),
            "fc3": (1,),
        }

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.to_json().encode()).digest()


CANONICAL_SPEC = NetworkSpec()


def _fan_in(shape):
    return int(np.prod(shape[1:])) if len(shape) > 1 else None


class DetectorModel:
    """Weights, biases and the spec that shaped them."""

    def __init__(self, spec: NetworkSpec = CANONICAL_SPEC, init_seed=0, dtype=np.float32, params=None):
        self.spec = spec
        self.init_seed = int(init_seed)
        self.dtype = np.dtype(dtype)
        self.version = 0
        shapes = spec.param_shapes()
        if params is None:
            rng = np.random.default_rng(self.init_seed)
            params = {}
            for name in PARAM_ORDER:
                layer = name.split(".")[0]
                bound = 1.0 / np.sqrt(_fan_in(shapes[layer + ".w"]))
                params[name] = rng.uniform(-bound, bound, size=shapes[name])
        self.params = {name: np.asarray(params[name], dtype=self.dtype) for name in PARAM_ORDER}
        for name in PARAM_ORDER:
            if self.params[name].shape != shapes[name]:
                raise ArchitectureError(
                    f"{name}: expected shape {shapes[name]}, got {self.params[name].shape}")

    def n_params(self):
        return sum(p.size for p in self.params.values())

    def copy(self):
        return DetectorModel(self.spec, self.init_seed, self.dtype,
                             {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype):
        return DetectorModel(self.spec, self.init_seed, dtype, self.params)

    def is_finite(self):
        return all(np.isfinite(p).all() for p in self.params.values())

    def bump(self):
        self.version += 1


# ---------------------------------------------------------------------------
# layer primitives

def im2col(x, k):
    """``(B, C, H, W)`` -> ``(B, C*k*k, Ho*Wo)`` patch matrix for a valid k x k window."""
    B, C, H, W = x.shape
    Ho, Wo = H - k + 1, W - k + 1
    cols = np.empty((B, C, k, k, Ho, Wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i:i + Ho, j:j + Wo]
    return cols.reshape(B, C * k * k, Ho * Wo)


def col2im(cols, x_shape, k):
    """Adjoint of :func:`im2col`: scatter-add patch gradients back onto the input."""
    B, C, H, W = x_shape
    Ho, Wo = H - k + 1, W - k + 1
    cols = cols.reshape(B, C, k, k, Ho, Wo)
    dx = np.zeros(x_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + Ho, j:j + Wo] += cols[:, :, i, j]
    return dx


def conv2d_forward(x, w, b):
    """Valid, stride-1 cross-correlation. Returns output and im2col columns."""
    B, C, H, W = x.shape
    F, _, k, _ = w.shape
    cols = im2col(x, k)
    out = np.matmul(w.reshape(F, -1), cols)
    out += b.reshape(1, F, 1)
    return out.reshape(B, F, H - k + 1, W - k + 1), cols


def conv2d_backward(dout, cols, w, x_shape, need_dx=True):
    B, F, Ho, Wo = dout.shape
    k = w.shape[-1]
    d2 = dout.reshape(B, F, Ho * Wo)
    dw = np.zeros((F, cols.shape[1]), dtype=dout.dtype)
    for i in range(B):
        dw += d2[i] @ cols[i].T
    db = dout.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        dx = col2im(np.matmul(w.reshape(F, -1).T, d2), x_shape, k)
    return dx, dw.reshape(w.shape), db


def maxpool_forward(x, p=2):
    """Non-overlapping ``p x p`` max pool, floor mode; argmax keeps the first maximum."""
    B, C, H, W = x.shape
    Ho, Wo = H // p, W // p
    xc = x[:, :, :Ho * p, :Wo * p]
    blocks = xc.reshape(B, C, Ho, p, Wo, p).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, p * p)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dout, arg, x_shape, p=2):
    B, C, H, W = x_shape
    Ho, Wo = dout.shape[2], dout.shape[3]
    blocks = np.zeros((B, C, Ho, Wo, p * p), dtype=dout.dtype)
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :, :Ho * p, :Wo * p] = (blocks.reshape(B, C, Ho, Wo, p, p)
                                  .transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * p, Wo * p))
    return dx


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dropout_mask(shape, p, seed, dtype):
    """Inverted-dropout mask: zeros with probability ``p``, survivors scaled by 1/(1-p)."""
    if p == 0:
        return np.ones(shape, dtype=dtype)
    keep = np.random.default_rng(seed).random(shape) >= p
    return keep.astype(dtype) / dtype.type(1.0 - p)


# ---------------------------------------------------------------------------
# network passes

class Cache(dict):
    """Intermediate activations from :func:`forward`, tied to one model version."""


def _check_input(model, x):
    spec = model.spec
    expected = (spec.in_channels, spec.input_size, spec.input_size)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != expected:
        raise ArchitectureError(f"input layer: expected (*, {expected}), got {x.shape}")
    return np.asarray(x, dtype=model.dtype)


def forward(model: DetectorModel, x, mode="eval", dropout_seed=0):
    """Probability of the jammed class for each input in ``x``.

    ``x`` is ``(C, H, W)`` or ``(B, C, H, W)``. Returns ``(prob, cache)`` with
    ``prob`` of shape ``(B,)``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _check_input(model, x)
    P = model.params
    spec = model.spec
    c = Cache(model_id=id(model), version=model.version, mode=mode, x_shape=x.shape)

    z1, c["cols1"] = conv2d_forward(x, P["conv1.w"], P["conv1.b"])
    a1 = np.maximum(z1, 0)
    c["relu1"] = z1 > 0
    p1, c["arg1"] = maxpool_forward(a1, spec.pool_size)
    c["a1_shape"] = a1.shape
    c["p1"] = p1

    z2, c["cols2"] = conv2d_forward(p1, P["conv2.w"], P["conv2.b"])
    a2 = np.maximum(z2, 0)
    c["relu2"] = z2 > 0
    p2, c["arg2"] = maxpool_forward(a2, spec.pool_size)
    c["a2_shape"] = a2.shape
    c["p2_shape"] = p2.shape

    expected = model.spec.layer_shapes()
    for name, arr in (("conv1", z1), ("pool1", p1), ("conv2", z2), ("pool2", p2)):
        if arr.shape[1:] != expected[name]:
            raise ArchitectureError(f"{name}: expected {expected[name]}, got {arr.shape[1:]}")

    flat = p2.reshape(p2.shape[0], -1)
    if mode == "train" and spec.dropout_p > 0:
        mask = dropout_mask(flat.shape, spec.dropout_p, dropout_seed, model.dtype)
        flat = flat * mask
        c["drop"] = mask
    c["flat"] = flat

    h1 = flat @ P["fc1.w"].T + P["fc1.b"]
    r1 = np.maximum(h1, 0)
    h2 = r1 @ P["fc2.w"].T + P["fc2.b"]
    r2 = np.maximum(h2, 0)
    logit = (r2 @ P["fc3.w"].T + P["fc3.b"])[:, 0]
    c.update(h1=h1, r1=r1, h2=h2, r2=r2, logit=logit)
    prob = sigmoid(logit)
    c["prob"] = prob
    return prob, c


def loss(prob, label):
    """Mean binary cross-entropy with probabilities clamped to [EPS, 1 - EPS]."""
    p = np.clip(np.asarray(prob, dtype=np.float64), EPS, 1 - EPS)
    y = np.asarray(label, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def backward(model: DetectorModel, cache: Cache, label):
    """Gradients of the mean batch loss w.r.t. every parameter.

    The logistic/cross-entropy pair contributes ``(p - y) / B`` at the logit.
    """
    if cache.get("model_id") != id(model) or cache.get("version") != model.version:
        raise ContractError("cache does not belong to the current model state; rerun forward")
    P = model.params
    spec = model.spec
    y = np.asarray(label, dtype=model.dtype).reshape(-1)
    prob = cache["prob"]
    B = prob.shape[0]
    if y.shape[0] != B:
        raise ContractError(f"{y.shape[0]} labels for a batch of {B}")
    g = {}

    dlogit = ((prob - y) / B).astype(model.dtype)[:, None]
    g["fc3.w"] = dlogit.T @ cache["r2"]
    g["fc3.b"] = dlogit.sum(axis=0)
    dh2 = (dlogit @ P["fc3.w"]) * (cache["h2"] > 0)
    g["fc2.w"] = dh2.T @ cache["r1"]
    g["fc2.b"] = dh2.sum(axis=0)
    dh1 = (dh2 @ P["fc2.w"]) * (cache["h1"] > 0)
    g["fc1.w"] = dh1.T @ cache["flat"]
    g["fc1.b"] = dh1.sum(axis=0)
    dflat = dh1 @ P["fc1.w"]
    if "drop" in cache:
        dflat = dflat * cache["drop"]

    dp2 = dflat.reshape(cache["p2_shape"])
    da2 = maxpool_backward(dp2, cache["arg2"], cache["a2_shape"], spec.pool_size)
    dz2 = da2 * cache["relu2"]
    dp1, g["conv2.w"], g["conv2.b"] = conv2d_backward(dz2, cache["cols2"], P["conv2.w"], cache["p1"].shape)
    da1 = maxpool_backward(dp1, cache["arg1"], cache["a1_shape"], spec.pool_size)
    dz1 = da1 * cache["relu1"]
    _, g["conv1.w"], g["conv1.b"] = conv2d_backward(dz1, cache["cols1"], P["conv1.w"], cache["x_shape"],
                                                    need_dx=False)
    return {k: np.asarray(g[k], dtype=model.dtype).reshape(P[k].shape) for k in PARAM_ORDER}


def predict_proba(model: DetectorModel, X, batch_size=16):
    """Eval-mode probabilities for a stack of grids, computed in fixed-size batches."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    out = [forward(model, X[i:i + batch_size], "eval")[0] for i in range(0, X.shape[0], batch_size)]
    return np.concatenate(out) if out else np.empty(0)
