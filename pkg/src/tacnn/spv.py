"""Structure projection vectors.

Positive and negative pedestrian-source patches are each organised into a
two-level k-means tree over HOG space (5 clusters, then 10 inside each).
A patch is projected to the Euclidean distances between its HOG
descriptor and the 100 leaf means.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

N_LEVEL1 = 5
N_LEVEL2 = 10
MAX_LLOYD_ITERS = 100


@dataclass(frozen=True)
class HogParams:
    cell: int = 8
    bins: int = 9
    block: int = 2
    block_stride: int = 1
    unsigned: bool = True
    eps: float = 1e-6

    def __post_init__(self):
        if min(self.cell, self.block, self.block_stride) < 1 or self.bins < 2 or self.eps <= 0:
            raise ValueError(f"invalid HOG parameters {self}")

    def dim(self, height, width):
        cr, cc = height // self.cell, width // self.cell
        br = (cr - self.block) // self.block_stride + 1
        bc = (cc - self.block) // self.block_stride + 1
        return br * bc * self.block * self.block * self.bins


def _gray_gradients(images):
    """Central differences with replicated borders; (N, C, H, W) -> magnitude, angle.

    For multi-channel input the channel with the largest magnitude wins per pixel.
    """
    padded = np.pad(images, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    gx = padded[:, :, 1:-1, 2:] - padded[:, :, 1:-1, :-2]
    gy = padded[:, :, 2:, 1:-1] - padded[:, :, :-2, 1:-1]
    mag = np.hypot(gx, gy)
    if images.shape[1] > 1:
        best = mag.argmax(axis=1)[:, None]
        gx = np.take_along_axis(gx, best, axis=1)
        gy = np.take_along_axis(gy, best, axis=1)
        mag = np.take_along_axis(mag, best, axis=1)
    return mag[:, 0], np.arctan2(gy[:, 0], gx[:, 0])


def hog_cells(images, p: HogParams):
    """Orientation histograms per cell, shape (N, cell_rows, cell_cols, bins)."""
    n, _, h, w = images.shape
    mag, ang = _gray_gradients(images)
    span = np.pi if p.unsigned else 2 * np.pi
    ang = np.mod(ang, span)
    # bin k is centred at k * span / bins; each pixel splits its vote between the two nearest centres
    pos = ang / (span / p.bins)
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    lo %= p.bins
    hi = (lo + 1) % p.bins
    centres = np.arange(p.bins)
    votes = ((lo[..., None] == centres) * (mag * (1 - frac))[..., None]
             + (hi[..., None] == centres) * (mag * frac)[..., None])
    cr, cc = h // p.cell, w // p.cell
    return votes.reshape(n, cr, p.cell, cc, p.cell, p.bins).sum(axis=(2, 4))


def hog_extract(patches, p: HogParams = HogParams()):
    """HOG descriptor of one patch ``(C, H, W)`` or a batch ``(N, C, H, W)``."""
    x = np.asarray(patches, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    h, w = x.shape[2:]
    if h % p.cell or w % p.cell:
        raise ValueError(f"patch extents {h}x{w} not divisible by cell size {p.cell}")
    cells = hog_cells(x, p)
    n, cr, cc, _ = cells.shape
    s, b = p.block_stride, p.block
    blocks = []
    for r in range(0, cr - b + 1, s):
        for c in range(0, cc - b + 1, s):
            v = cells[:, r:r + b, c:c + b].reshape(n, -1)
            blocks.append(v / np.sqrt(np.sum(v * v, axis=1, keepdims=True) + p.eps ** 2))
    out = np.concatenate(blocks, axis=1)
    return out[0] if single else out


@dataclass
class KMeansResult:
    means: np.ndarray
    labels: np.ndarray
    objective_history: list

    @property
    def objective(self):
        return self.objective_history[-1]


def _sq_dists(points, means):
    return cdist(points, means, "sqeuclidean")


def kmeans(points, k, seed, max_iter=MAX_LLOYD_ITERS) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding.

    Every seeding draw consumes exactly one uniform variate and picks via the
    cumulative weight table, so the result depends only on the point
    sequence and the seed.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < k:
        raise ValueError(f"k-means needs at least k={k} points, got {n}")
    rng = np.random.default_rng(seed)
    idx = min(int(rng.random() * n), n - 1)
    centres = [x[idx]]
    d2 = _sq_dists(x, x[idx:idx + 1])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = min(int(rng.random() * n), n - 1)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centres.append(x[idx])
        d2 = np.minimum(d2, _sq_dists(x, x[idx:idx + 1])[:, 0])
    means = np.array(centres)
    labels = None
    history = []
    for _ in range(max_iter):
        dist = _sq_dists(x, means)
        new_labels = dist.argmin(axis=1)
        history.append(float(dist[np.arange(n), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        means = _update_means(x, labels, means, dist)
    else:
        dist = _sq_dists(x, means)
        labels = dist.argmin(axis=1)
        history.append(float(dist[np.arange(n), labels].sum()))
    return KMeansResult(means, labels, history)


def _update_means(x, labels, old, dist):
    k = len(old)
    means = np.empty_like(old)
    taken = set()
    for j in range(k):
        members = labels == j
        if members.any():
            means[j] = x[members].mean(axis=0)
        else:
            # empty cluster: re-seed at the point farthest from its current mean
            far = dist[np.arange(len(x)), labels]
            for i in np.argsort(-far, kind="stable"):
                if int(i) not in taken:
                    taken.add(int(i))
                    means[j] = x[i]
                    break
    return means


@dataclass
class KMeansTree:
    level1: np.ndarray  # (5, D)
    leaves: np.ndarray  # (5, 10, D)

    @property
    def flat_leaves(self):
        return self.leaves.reshape(-1, self.leaves.shape[-1])


def build_tree(features, seed) -> KMeansTree:
    seeds = np.random.SeedSequence(seed).generate_state(N_LEVEL1 + 1)
    top = kmeans(features, N_LEVEL1, int(seeds[0]))
    leaves = np.empty((N_LEVEL1, N_LEVEL2, features.shape[1]))
    for j in range(N_LEVEL1):
        members = features[top.labels == j]
        kk = min(N_LEVEL2, len(members))
        sub = kmeans(members, kk, int(seeds[j + 1])).means
        leaves[j, :kk] = sub
        # short clusters are padded with their level-1 mean to keep 10 leaves
        leaves[j, kk:] = top.means[j]
    return KMeansTree(top.means, leaves)


@dataclass
class SpvModel:
    positive: KMeansTree
    negative: KMeansTree
    hog: HogParams
    z_mean: np.ndarray
    z_std: np.ndarray
    standardize: bool = True

    @property
    def leaves(self):
        """All 100 leaf means, positive tree first, level-1-major."""
        return np.concatenate([self.positive.flat_leaves, self.negative.flat_leaves])

    @property
    def dim(self):
        return len(self.leaves)

    def features(self, patches):
        """Projection vectors as fed to the network (standardized if enabled)."""
        z = project(patches, self)
        if not self.standardize:
            return z
        return (z - self.z_mean) / self.z_std


MIN_SAMPLES = N_LEVEL1 * N_LEVEL2


def build_spv_model(positives, negatives, hog: HogParams = HogParams(), seed=0, standardize=True) -> SpvModel:
    if len(positives) < MIN_SAMPLES or len(negatives) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} positives and negatives, "
                         f"got {len(positives)} and {len(negatives)}")
    s_pos, s_neg = np.random.SeedSequence(seed).generate_state(2)
    fp, fn = hog_extract(positives, hog), hog_extract(negatives, hog)
    if fp.ndim == 1 or fn.ndim == 1:
        raise ValueError("expected batches of patches")
    pos, neg = build_tree(fp, int(s_pos)), build_tree(fn, int(s_neg))
    model = SpvModel(pos, neg, hog, np.zeros(2 * MIN_SAMPLES), np.ones(2 * MIN_SAMPLES), standardize)
    z = cdist(np.concatenate([fp, fn]), model.leaves)
    std = z.std(axis=0)
    model.z_mean, model.z_std = z.mean(axis=0), np.where(std > 1e-12, std, 1.0)
    return model


def project(patches, model: SpvModel):
    """Raw distances to every leaf mean; (N, 100), or (100,) for one patch."""
    f = hog_extract(patches, model.hog)
    single = f.ndim == 1
    f = np.atleast_2d(f)
    if f.shape[1] != model.leaves.shape[1]:
        raise ValueError(f"HOG dimension {f.shape[1]} does not match the model ({model.leaves.shape[1]})")
    z = cdist(f, model.leaves)
    return z[0] if single else z
