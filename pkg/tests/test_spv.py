import numpy as np
import pytest

from tacnn.spv import HogParams, build_spv_model, build_tree, hog_cells, hog_extract, kmeans, project


def test_hog_dimension_and_batching():
    p = HogParams()
    x = np.random.default_rng(0).random((3, 1, 64, 32))
    f = hog_extract(x, p)
    assert f.shape == (3, p.dim(64, 32)) == (3, 7 * 3 * 36)
    assert np.array_equal(hog_extract(x[1], p), f[1])
    with pytest.raises(ValueError, match="divisible"):
        hog_extract(np.zeros((1, 60, 32)), p)


def test_hog_vertical_edge_votes_bin_zero():
    img = np.zeros((1, 1, 16, 16))
    img[..., 8:] = 1.0
    cells = hog_cells(img, HogParams())
    assert cells[..., 1:].sum() == 0 and cells[..., 0].sum() > 0


def test_hog_blocks_unit_norm():
    f = hog_extract(np.random.default_rng(1).random((1, 32, 16)))
    blocks = f.reshape(-1, 36)
    assert np.allclose(np.linalg.norm(blocks, axis=1), 1.0, atol=1e-6)


def test_kmeans_separates_blobs():
    rng = np.random.default_rng(2)
    centres = np.array([[0, 0], [10, 0], [0, 10]], float)
    pts = np.concatenate([c + rng.normal(size=(30, 2)) for c in centres])
    res = kmeans(pts, 3, seed=0)
    nearest = np.argmin(((centres[:, None] - res.means[None]) ** 2).sum(-1), axis=1)
    assert sorted(nearest) == [0, 1, 2]
    assert np.allclose(res.means[nearest], centres, atol=0.6)
    assert all(a >= b - 1e-9 for a, b in zip(res.objective_history, res.objective_history[1:]))


def test_kmeans_deterministic_and_validates():
    pts = np.random.default_rng(3).normal(size=(40, 4))
    a, b = kmeans(pts, 5, 7), kmeans(pts, 5, 7)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.labels, b.labels)
    with pytest.raises(ValueError):
        kmeans(pts[:3], 5, 0)


def test_tree_shape_with_short_clusters():
    pts = np.random.default_rng(4).normal(size=(60, 3))
    tree = build_tree(pts, 0)
    assert tree.leaves.shape == (5, 10, 3) and tree.flat_leaves.shape == (50, 3)


def _patches(seed, n):
    return np.random.default_rng(seed).random((n, 1, 64, 32))


def test_spv_structure():
    pos, neg = _patches(0, 60), _patches(1, 60)
    m = build_spv_model(pos, neg, seed=0)
    z = project(pos[:4], m)
    assert z.shape == (4, 100) and m.dim == 100
    m2 = build_spv_model(pos, neg, seed=0)
    assert np.array_equal(m.leaves, m2.leaves) and np.array_equal(m.z_mean, m2.z_mean)
    with pytest.raises(ValueError, match="at least"):
        build_spv_model(pos[:10], neg, seed=0)


def test_self_projection_is_zero():
    pos, neg = _patches(5, 60), _patches(6, 60)
    m = build_spv_model(pos, neg, seed=1)
    feats = hog_extract(pos)
    # a leaf that is a single member's descriptor projects that member to exactly 0
    from scipy.spatial.distance import cdist
    d = cdist(feats, m.leaves)
    hits = np.argwhere(d == 0.0)
    assert len(hits) > 0
    i, j = hits[0]
    assert project(pos[i], m)[j] == 0.0
