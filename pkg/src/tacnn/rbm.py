"""Joint RBM over (x, y) and the per-sample probability table.

The visible layer is the concatenation of a binary image code ``x`` and
the 19 label bits ``y``; the hidden units are binary. The unnormalized log
marginal log p~(x, y) is available in closed form because the hidden units
factorise given the visibles.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .nncore import sigmoid


@dataclass
class Rbm:
    w_xh: np.ndarray  # (d_x, n_h)
    w_yh: np.ndarray  # (d_y, n_h)
    b_x: np.ndarray
    b_y: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        dx, nh = self.w_xh.shape
        dy = self.w_yh.shape[0]
        if self.w_yh.shape[1] != nh or self.b_x.shape != (dx,) or self.b_y.shape != (dy,) or self.b_h.shape != (nh,):
            raise ValueError("inconsistent RBM parameter shapes")

    @property
    def n_hidden(self):
        return self.b_h.shape[0]

    @classmethod
    def zeros(cls, d_x, d_y, n_h):
        return cls(np.zeros((d_x, n_h)), np.zeros((d_y, n_h)), np.zeros(d_x), np.zeros(d_y), np.zeros(n_h))

    @classmethod
    def init(cls, d_x, d_y, n_h, rng: np.random.Generator, scale=0.01):
        return cls(scale * rng.standard_normal((d_x, n_h)), scale * rng.standard_normal((d_y, n_h)),
                   np.zeros(d_x), np.zeros(d_y), np.zeros(n_h))

    def arrays(self):
        return {"w_xh": self.w_xh, "w_yh": self.w_yh, "b_x": self.b_x, "b_y": self.b_y, "b_h": self.b_h}

    def copy(self):
        return Rbm(**{k: v.copy() for k, v in self.arrays().items()})


def energy(rbm: Rbm, x, y, h) -> float:
    x, y, h = (np.asarray(v, dtype=np.float64) for v in (x, y, h))
    if x.shape != rbm.b_x.shape or y.shape != rbm.b_y.shape or h.shape != rbm.b_h.shape:
        raise ValueError("visible/hidden vectors do not match the RBM dimensions")
    return float(-(x @ rbm.w_xh @ h) - x @ rbm.b_x - (y @ rbm.w_yh @ h) - y @ rbm.b_y - h @ rbm.b_h)


def hidden_input(rbm: Rbm, x, y):
    return rbm.b_h + np.asarray(x, float) @ rbm.w_xh + np.asarray(y, float) @ rbm.w_yh


def free_energy(rbm: Rbm, x, y):
    """log sum_h exp(-E(x, y, h)), without the partition function.

    Works on single vectors or on batches (rows).
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    act = hidden_input(rbm, x, y)
    return np.logaddexp(0.0, act).sum(axis=-1) + x @ rbm.b_x + y @ rbm.b_y


def free_energy_exhaustive(rbm: Rbm, x, y) -> float:
    """Reference value by enumerating all 2^n_h hidden states (small n_h only)."""
    if rbm.n_hidden > 16:
        raise ValueError("exhaustive enumeration is limited to 16 hidden units")
    neg_e = [-energy(rbm, x, y, np.array(h, dtype=np.float64))
             for h in itertools.product((0.0, 1.0), repeat=rbm.n_hidden)]
    return float(np.logaddexp.reduce(neg_e))


def cd_train(x, y, n_hidden, epochs, lr, seed, batch_size=20, init: Rbm | None = None) -> Rbm:
    """CD-1 training.

    Positive statistics use hidden probabilities given the data; a hidden
    sample drives one reconstruction of the visibles (probabilities), and
    the negative statistics use the hidden probabilities of that
    reconstruction.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(seed)
    rbm = init.copy() if init is not None else Rbm.init(x.shape[1], y.shape[1], n_hidden, rng)
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            b = order[start:start + batch_size]
            x0, y0 = x[b], y[b]
            ph0 = sigmoid(hidden_input(rbm, x0, y0))
            h0 = (rng.random(ph0.shape) < ph0).astype(np.float64)
            x1 = sigmoid(rbm.b_x + h0 @ rbm.w_xh.T)
            y1 = sigmoid(rbm.b_y + h0 @ rbm.w_yh.T)
            ph1 = sigmoid(hidden_input(rbm, x1, y1))
            m = len(b)
            rbm.w_xh += lr * (x0.T @ ph0 - x1.T @ ph1) / m
            rbm.w_yh += lr * (y0.T @ ph0 - y1.T @ ph1) / m
            rbm.b_x += lr * (x0 - x1).mean(axis=0)
            rbm.b_y += lr * (y0 - y1).mean(axis=0)
            rbm.b_h += lr * (ph0 - ph1).mean(axis=0)
    return rbm


@dataclass
class ProbTable:
    ids: list
    log_p: np.ndarray  # unnormalized free energies
    weights: np.ndarray  # exp(log_p - max) rescaled to mean 1

    def weight(self, sample_id):
        return float(self.weights[self._index[sample_id]])

    def __post_init__(self):
        self._index = {sid: i for i, sid in enumerate(self.ids)}

    def weights_for(self, ids):
        return np.array([self.weights[self._index[i]] for i in ids])


def table_weights(log_p) -> np.ndarray:
    log_p = np.asarray(log_p, dtype=np.float64)
    w = np.exp(log_p - log_p.max())
    return w / w.mean()


def build_prob_table(rbm: Rbm, x, y, ids) -> ProbTable:
    log_p = np.atleast_1d(free_energy(rbm, x, y))
    return ProbTable(list(ids), log_p, table_weights(log_p))


def uniform_table(ids) -> ProbTable:
    """Constant table: the literal reading where log p(x, y) is a λ-independent constant."""
    n = len(ids)
    return ProbTable(list(ids), np.zeros(n), np.ones(n))


RBM_IMAGE_SHAPE = (16, 8)  # rows, cols of the binarized thumbnail


def binarize_patches(patches, shape=RBM_IMAGE_SHAPE):
    """Block-average each patch down to ``shape`` and threshold at its median."""
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    x = x.mean(axis=1)
    n, h, w = x.shape
    r, c = shape
    if h % r or w % c:
        raise ValueError(f"patch {h}x{w} cannot be block-reduced to {r}x{c}")
    small = x.reshape(n, r, h // r, c, w // c).mean(axis=(2, 4)).reshape(n, -1)
    return (small > np.median(small, axis=1, keepdims=True)).astype(np.float64)
