"""Convolution, pooling and dense primitives with hand-written backprop.

All operations work on float64 numpy arrays in batch-first layout:
feature maps are ``(N, C, H, W)`` and flat activations are ``(N, D)``.
Single samples (``(C, H, W)`` / ``(D,)``) are accepted by the forward
functions and returned without the batch axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MOMENTUM = 0.9
WEIGHT_DECAY = 0.001


class DimensionError(ValueError):
    """Raised when array extents do not fit a layer."""


@dataclass
class ConvLayer:
    kernels: np.ndarray  # (out, in, kh, kw)
    biases: np.ndarray  # (out,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernels.ndim != 4 or min(self.kernels.shape) < 1:
            raise DimensionError(f"kernels must be 4-D with positive extents, got {self.kernels.shape}")
        if self.biases.shape != (self.kernels.shape[0],):
            raise DimensionError(
                f"biases length {self.biases.shape} does not match out-channels {self.kernels.shape[0]}")
        if self.stride < 1 or self.padding < 0:
            raise DimensionError("stride must be >= 1 and padding >= 0")


@dataclass(frozen=True)
class PoolSpec:
    height: int = 2
    width: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.stride < 1:
            raise DimensionError("pool cell extents and stride must be >= 1")


@dataclass
class FcLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise DimensionError(
                f"inconsistent fc shapes: weights {self.weights.shape}, biases {self.biases.shape}")


@dataclass
class SgdState:
    """Learning rate plus one momentum buffer per parameter array."""

    lr: float
    momentum: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], lr: float) -> "SgdState":
        return cls(lr, {k: np.zeros_like(v) for k, v in params.items()})


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    """Logistic function that never overflows."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def conv_output_shape(h, w, kh, kw, stride, padding):
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    return oh, ow


def _batched(x, ndim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim - 1:
        return x[None], True
    return x, False


def _im2col(x, kh, kw, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    # (N, OH, OW, C*kh*kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, c * kh * kw)
    return cols, (oh, ow)


def conv_forward_with_cache(x, layer: ConvLayer):
    x, squeeze = _batched(x, 4)
    v, c, kh, kw = layer.kernels.shape
    if x.shape[1] != c:
        raise DimensionError(f"channel axis: input has {x.shape[1]} channels, layer expects {c}")
    for axis, k, name in ((2, kh, "height"), (3, kw, "width")):
        if x.shape[axis] + 2 * layer.padding < k:
            raise DimensionError(f"{name} axis: padded extent {x.shape[axis] + 2 * layer.padding} < kernel {k}")
    cols, (oh, ow) = _im2col(x, kh, kw, layer.stride, layer.padding)
    pre = cols @ layer.kernels.reshape(v, -1).T + layer.biases  # (N, OH, OW, V)
    out = relu(pre).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    cache = (x.shape, cols, pre > 0, layer)
    return (out[0] if squeeze else out), cache


def conv_forward(x, layer: ConvLayer):
    """relu(bias + sum_u kernel_vu (cross-correlated with) x_u), zero padded."""
    return conv_forward_with_cache(x, layer)[0]


def conv_backward(dout, cache, need_input_grad=True):
    """Return ``(d_kernels, d_biases, d_input)``; ``d_input`` is None when not requested."""
    x_shape, cols, active, layer = cache
    dout, _ = _batched(dout, 4)
    v, c, kh, kw = layer.kernels.shape
    dpre = dout.transpose(0, 2, 3, 1) * active  # (N, OH, OW, V)
    flat = dpre.reshape(-1, v)
    dk = (flat.T @ cols.reshape(-1, cols.shape[-1])).reshape(layer.kernels.shape)
    db = flat.sum(axis=0)
    if not need_input_grad:
        return dk, db, None
    n, _, h, w = x_shape
    p, s = layer.padding, layer.stride
    oh, ow = dpre.shape[1:3]
    dcols = (dpre @ layer.kernels.reshape(v, -1)).reshape(n, oh, ow, c, kh, kw)
    # accumulate in channels-last layout, the cheap direction for these strides
    dxp = np.zeros((n, h + 2 * p, w + 2 * p, c))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + s * oh:s, j:j + s * ow:s, :] += dcols[..., i, j]
    dx = dxp[:, p:p + h, p:p + w].transpose(0, 3, 1, 2)
    return dk, db, np.ascontiguousarray(dx)


def pool_forward(x, spec: PoolSpec):
    """Max over each (possibly overlapping) cell.

    Returns ``(out, argidx)`` where ``argidx`` holds the row-major offset of
    the first maximal element inside each cell.
    """
    x, squeeze = _batched(x, 4)
    if x.shape[2] < spec.height or x.shape[3] < spec.width:
        raise DimensionError(f"pool cell {spec.height}x{spec.width} larger than map {x.shape[2:]}")
    n, c, h, w = x.shape
    ph, pw, s = spec.height, spec.width, spec.stride
    oh, ow = (h - ph) // s + 1, (w - pw) // s + 1
    if s == ph == pw:
        # non-overlapping cells: a plain reshape of the covered region
        cells = x[:, :, :oh * ph, :ow * pw].reshape(n, c, oh, ph, ow, pw)
        flat = cells.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, ph * pw)
    else:
        win = sliding_window_view(x, (ph, pw), axis=(2, 3))[:, :, ::s, ::s]
        flat = win.reshape(*win.shape[:4], -1)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if squeeze:
        return out[0], arg[0]
    return out, arg


def pool_backward(dout, argidx, input_shape, spec: PoolSpec):
    """Route each upstream value to the recorded argmax of its cell."""
    dout, squeeze = _batched(dout, 4)
    argidx = argidx[None] if squeeze else argidx
    shape = tuple(input_shape) if len(input_shape) == 4 else (1, *input_shape)
    n, c, h, w = shape
    oh, ow = dout.shape[2:]
    ph, pw, s = spec.height, spec.width, spec.stride
    if s == ph == pw and h == oh * ph and w == ow * pw:
        # exact non-overlapping tiling: scatter through a one-hot cell axis
        onehot = argidx[..., None] == np.arange(ph * pw)
        cells = np.where(onehot, dout[..., None], 0.0).reshape(n, c, oh, ow, ph, pw)
        dx = cells.transpose(0, 1, 2, 4, 3, 5).reshape(shape)
        return dx[0] if squeeze else dx
    dx = np.zeros(shape)
    for i in range(ph):
        for j in range(pw):
            hit = argidx == i * pw + j
            if hit.any():
                dx[:, :, i:i + s * oh:s, j:j + s * ow:s] += np.where(hit, dout, 0.0)
    return dx[0] if squeeze else dx


def fc_forward_with_cache(x, layer: FcLayer, apply_relu=True):
    x, squeeze = _batched(x, 2)
    if x.shape[1] != layer.weights.shape[1]:
        raise DimensionError(f"input length {x.shape[1]} != fc in-dim {layer.weights.shape[1]}")
    pre = x @ layer.weights.T + layer.biases
    out = relu(pre) if apply_relu else pre
    cache = (x, pre > 0 if apply_relu else None, layer)
    return (out[0] if squeeze else out), cache


def fc_forward(x, layer: FcLayer, apply_relu=True):
    return fc_forward_with_cache(x, layer, apply_relu)[0]


def fc_backward(dout, cache):
    """Return ``(d_weights, d_biases, d_input)``."""
    x, active, layer = cache
    dout, _ = _batched(dout, 2)
    if active is not None:
        dout = dout * active
    return dout.T @ x, dout.sum(axis=0), dout @ layer.weights


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: SgdState):
    """Momentum SGD with weight decay, in place.

    delta <- 0.9 delta - 0.001 lr W - lr g;  W <- W + delta
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    eps = state.lr
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {w.shape} for {name!r}")
        buf = state.momentum.get(name)
        if buf is None:
            buf = state.momentum[name] = np.zeros_like(w)
        buf *= MOMENTUM
        buf -= WEIGHT_DECAY * eps * w
        buf -= eps * g
        w += buf
    return params


def finite_diff_grad(f, x, step=1e-5, indices=None):
    """Central-difference gradient of scalar ``f`` at array ``x``.

    ``x`` is perturbed in place and restored. With ``indices`` (flat
    positions) only those coordinates are estimated and a 1-D array is
    returned in the same order.
    """
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    est = []
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        est.append((fp - fm) / (2 * step))
    est = np.array(est)
    return est.reshape(x.shape) if indices is None else est


def glorot_uniform(rng: np.random.Generator, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_conv(rng, out_ch, in_ch, kh, kw, stride=1, padding=0) -> ConvLayer:
    k = glorot_uniform(rng, (out_ch, in_ch, kh, kw), in_ch * kh * kw, out_ch * kh * kw)
    return ConvLayer(k, np.zeros(out_ch), stride, padding)


def init_fc(rng, out_dim, in_dim) -> FcLayer:
    return FcLayer(glorot_uniform(rng, (out_dim, in_dim), in_dim, out_dim), np.zeros(out_dim))
