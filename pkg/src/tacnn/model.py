"""Network assembly: four conv/pool stages, fc5, fused fc6 and a joint sigmoid head."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import nncore as nn
from .taskcodec import N_BITS, Coeffs, DEFAULT_LAYOUT, TaskLayout, expand_lambda


@dataclass(frozen=True)
class ArchConfig:
    height: int = 64
    width: int = 32
    channels: int = 1
    conv_channels: tuple = (8, 16, 32, 32)
    conv_kernels: tuple = (5, 3, 3, 3)
    pool_size: int = 2
    pool_stride: int = 2
    fc5: int = 256
    hidden: int = 200
    spv_dim: int = 100

    def __post_init__(self):
        if len(self.conv_channels) != len(self.conv_kernels):
            raise ValueError("conv_channels and conv_kernels must have equal length")

    @property
    def pool(self) -> nn.PoolSpec:
        return nn.PoolSpec(self.pool_size, self.pool_size, self.pool_stride)

    def feature_shape(self):
        """(C, H, W) after the last pooling stage."""
        h, w = self.height, self.width
        for k in self.conv_kernels:
            h, w = nn.conv_output_shape(h, w, k, k, 1, k // 2)
            h = (h - self.pool_size) // self.pool_stride + 1
            w = (w - self.pool_size) // self.pool_stride + 1
            if h < 1 or w < 1:
                raise ValueError("patch geometry too small for the conv stack")
        return self.conv_channels[-1], h, w

    @property
    def flat_dim(self):
        c, h, w = self.feature_shape()
        return c * h * w

    def to_dict(self):
        return asdict(self)


@dataclass
class Prediction:
    probs: np.ndarray  # (N, 19)
    features: np.ndarray  # (N, H), h^(L)
    logits: np.ndarray  # (N, 19)


@dataclass
class TaCnnModel:
    arch: ArchConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, arch: ArchConfig, seed: int) -> "TaCnnModel":
        rng = np.random.default_rng(seed)
        p = {}
        cin = arch.channels
        for i, (cout, k) in enumerate(zip(arch.conv_channels, arch.conv_kernels), start=1):
            layer = nn.init_conv(rng, cout, cin, k, k)
            p[f"conv{i}.k"], p[f"conv{i}.b"] = layer.kernels, layer.biases
            cin = cout
        fc5 = nn.init_fc(rng, arch.fc5, arch.flat_dim)
        fc6 = nn.init_fc(rng, arch.hidden, arch.fc5)
        p["fc5.W"], p["fc5.b"] = fc5.weights, fc5.biases
        p["fc6.W"], p["fc6.b"] = fc6.weights, fc6.biases
        p["spv.W"] = nn.glorot_uniform(rng, (arch.hidden, arch.spv_dim), arch.spv_dim, arch.hidden)
        p["spv.b"] = np.zeros(arch.hidden)
        p["top.W"] = nn.glorot_uniform(rng, (N_BITS, arch.hidden), arch.hidden, N_BITS)
        return cls(arch, p)

    def copy(self) -> "TaCnnModel":
        return TaCnnModel(self.arch, {k: v.copy() for k, v in self.params.items()})

    def conv_layer(self, i) -> nn.ConvLayer:
        k = self.params[f"conv{i}.k"]
        return nn.ConvLayer(k, self.params[f"conv{i}.b"], 1, k.shape[-1] // 2)

    def fc_layer(self, name) -> nn.FcLayer:
        return nn.FcLayer(self.params[f"{name}.W"], self.params[f"{name}.b"])

    @property
    def n_conv(self):
        return len(self.arch.conv_channels)


def forward(model: TaCnnModel, patches, z):
    """Batched forward pass. Returns ``(Prediction, cache)``.

    h^(L) = relu(fc6(h5) + W^z z + b^z);  p = sigmoid(W^y h^(L)).
    """
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    a = model.arch
    if x.shape[1:] != (a.channels, a.height, a.width):
        raise nn.DimensionError(
            f"patch shape {x.shape[1:]} does not match model geometry {(a.channels, a.height, a.width)}")
    z = np.asarray(z, dtype=np.float64).reshape(x.shape[0], -1)
    if z.shape[1] != a.spv_dim:
        raise nn.DimensionError(f"projection vector length {z.shape[1]} != {a.spv_dim}")
    pool = a.pool
    h = x
    stages = []
    for i in range(1, model.n_conv + 1):
        h, ccache = nn.conv_forward_with_cache(h, model.conv_layer(i))
        shape = h.shape
        h, arg = nn.pool_forward(h, pool)
        stages.append((ccache, arg, shape))
    pooled_shape = h.shape
    h5, c5 = nn.fc_forward_with_cache(h.reshape(x.shape[0], -1), model.fc_layer("fc5"))
    p = model.params
    pre6 = h5 @ p["fc6.W"].T + p["fc6.b"] + z @ p["spv.W"].T + p["spv.b"]
    feats = nn.relu(pre6)
    logits = feats @ p["top.W"].T
    pred = Prediction(nn.sigmoid(logits), feats, logits)
    cache = dict(stages=stages, pooled_shape=pooled_shape, c5=c5, h5=h5, z=z, active6=pre6 > 0)
    return pred, cache


def _softplus(x):
    return np.logaddexp(0.0, x)


def _as_arrays(label):
    if hasattr(label, "bits"):
        return label.bits[None].astype(np.float64), label.mask[None].astype(np.float64)
    bits, mask = label
    return np.atleast_2d(np.asarray(bits, dtype=np.float64)), np.atleast_2d(np.asarray(mask, dtype=np.float64))


def bit_nll(pred: Prediction, bits) -> np.ndarray:
    """Per-sample, per-bit binary cross-entropy, computed from logits."""
    # -[y log p + (1-y) log(1-p)] = y softplus(-a) + (1-y) softplus(a)
    a = pred.logits
    return bits * _softplus(-a) + (1.0 - bits) * _softplus(a)


def weighted_ce_loss(pred: Prediction, label, c: Coeffs, layout: TaskLayout = DEFAULT_LAYOUT) -> float:
    """Masked, coefficient-weighted multivariate cross-entropy summed over the batch."""
    bits, mask = _as_arrays(label)
    nll = bit_nll(pred, bits)
    # masked positions are dropped outright so their stored value can never leak in
    return float(np.sum(np.where(mask > 0, nll, 0.0) * expand_lambda(c, layout)))


def masked_output_error(pred: Prediction, label) -> np.ndarray:
    """p - y on observed bits, exactly zero elsewhere."""
    bits, mask = _as_arrays(label)
    return np.where(mask > 0, pred.probs - bits, 0.0)


def backward(model: TaCnnModel, pred: Prediction, cache, label, c: Coeffs, scale=1.0,
             layout: TaskLayout = DEFAULT_LAYOUT) -> dict[str, np.ndarray]:
    """Gradients of ``scale * weighted_ce_loss`` for every parameter array."""
    p = model.params
    e = masked_output_error(pred, label) * expand_lambda(c, layout) * scale  # (N, 19)
    grads = {"top.W": e.T @ pred.features}
    dh = (e @ p["top.W"]) * cache["active6"]
    grads["fc6.W"] = dh.T @ cache["h5"]
    grads["fc6.b"] = dh.sum(axis=0)
    grads["spv.W"] = dh.T @ cache["z"]
    grads["spv.b"] = grads["fc6.b"].copy()
    d5 = dh @ p["fc6.W"]
    grads["fc5.W"], grads["fc5.b"], dflat = nn.fc_backward(d5, cache["c5"])
    d = dflat.reshape(cache["pooled_shape"])
    pool = model.arch.pool
    for i in range(model.n_conv, 0, -1):
        ccache, arg, shape = cache["stages"][i - 1]
        d = nn.pool_backward(d, arg, shape, pool)
        grads[f"conv{i}.k"], grads[f"conv{i}.b"], d = nn.conv_backward(d, ccache, need_input_grad=i > 1)
    return grads


@dataclass
class SoftmaxHeads:
    """One softmax classifier per task on top of h^(L) (the 38H baseline)."""

    weights: list  # per task, (states, H)

    @classmethod
    def init(cls, hidden, seed=0, layout: TaskLayout = DEFAULT_LAYOUT):
        rng = np.random.default_rng(seed)
        return cls([nn.glorot_uniform(rng, (2 ** t.width, hidden), hidden, 2 ** t.width) for t in layout.tasks])

    @property
    def n_params(self):
        return int(sum(w.size for w in self.weights))


def per_task_softmax_loss(features, heads: SoftmaxHeads, label, alpha, beta, gamma,
                          layout: TaskLayout = DEFAULT_LAYOUT) -> float:
    """Weighted sum of per-task softmax NLLs over the observed tasks of one sample.

    ``alpha`` weights the nine pedestrian tasks (viewpoint last), ``beta``
    the shared and ``gamma`` the unshared scene tasks; main has weight 1.
    """
    h = np.asarray(features, dtype=np.float64).reshape(-1)
    coef = np.concatenate([[1.0], np.asarray(alpha, float), np.asarray(beta, float), np.asarray(gamma, float)])
    if coef.shape != (layout.n_tasks,):
        raise ValueError("need 9 alpha, 4 beta and 4 gamma coefficients")
    total = 0.0
    for t, w, lam in zip(layout.tasks, heads.weights, coef):
        if not label.mask[t.offset]:
            continue
        scores = w @ h
        state = 0
        for b in t.bits:
            state = 2 * state + int(label.bits[b])
        log_z = np.logaddexp.reduce(scores)
        total += lam * (log_z - scores[state])
    return float(total)
