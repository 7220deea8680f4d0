import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tacnn import nncore as nn


def naive_conv(x, k, b, stride, pad):
    c, h, w = x.shape
    v, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh, ow = nn.conv_output_shape(h, w, kh, kw, stride, pad)
    out = np.zeros((v, oh, ow))
    for o in range(v):
        for i in range(oh):
            for j in range(ow):
                acc = b[o]
                for u in range(c):
                    for a in range(kh):
                        for d in range(kw):
                            acc += k[o, u, a, d] * xp[u, i * stride + a, j * stride + d]
                out[o, i, j] = max(acc, 0.0)
    return out


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8))


def test_relu_examples():
    assert np.array_equal(nn.relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
    assert np.all(nn.relu(-np.ones(5)) == 0)
    x = np.abs(np.random.default_rng(0).normal(size=7))
    assert np.array_equal(nn.relu(x), x)


def test_sigmoid_stable_extremes():
    p = nn.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(p))
    assert p[1] == 0.5 and p[0] >= 0 and p[2] <= 1


def test_conv_identity_and_constant():
    x = np.abs(np.random.default_rng(1).normal(size=(1, 5, 6)))
    ident = nn.ConvLayer(np.ones((1, 1, 1, 1)), np.zeros(1))
    assert np.array_equal(nn.conv_forward(x, ident), x)
    const = nn.ConvLayer(np.zeros((2, 1, 3, 3)), np.full(2, 0.7))
    assert np.allclose(nn.conv_forward(x, const), 0.7)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv_matches_loop_oracle(stride, pad):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 4, 4))
    k, b = rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2)
    got = nn.conv_forward(x, nn.ConvLayer(k, b, stride, pad))
    assert np.max(np.abs(got - naive_conv(x, k, b, stride, pad))) < 1e-12


def test_conv_dimension_errors_name_axis():
    layer = nn.ConvLayer(np.zeros((1, 2, 3, 3)), np.zeros(1))
    with pytest.raises(nn.DimensionError, match="channel"):
        nn.conv_forward(np.zeros((1, 5, 5)), layer)
    with pytest.raises(nn.DimensionError, match="height"):
        nn.conv_forward(np.zeros((2, 2, 5)), layer)


def test_pool_examples():
    spec = nn.PoolSpec(2, 2, 2)
    out, _ = nn.pool_forward(np.full((1, 4, 4), 3.0), spec)
    assert np.array_equal(out, np.full((1, 2, 2), 3.0))
    x = np.random.default_rng(3).normal(size=(1, 4, 4))
    out, _ = nn.pool_forward(x, spec)
    oracle = np.array([[max(x[0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].ravel()) for j in range(2)] for i in range(2)])
    assert np.array_equal(out[0], oracle)


def test_pool_first_max_wins_and_backward_routes():
    x = np.ones((1, 1, 2, 2))
    out, arg = nn.pool_forward(x, nn.PoolSpec())
    assert arg[0, 0, 0, 0] == 0
    dx = nn.pool_backward(np.full((1, 1, 1, 1), 5.0), arg, x.shape, nn.PoolSpec())
    assert dx[0, 0, 0, 0] == 5.0 and dx.sum() == 5.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (1, 2, 2), elements=st.floats(-10, 10)), st.permutations(range(4)))
def test_pool_cell_permutation_invariant(cell, perm):
    a, _ = nn.pool_forward(cell, nn.PoolSpec())
    b, _ = nn.pool_forward(cell.reshape(-1)[list(perm)].reshape(1, 2, 2), nn.PoolSpec())
    assert np.array_equal(a, b)


def test_overlapping_pool_gradient():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 2, 5, 5))
    spec = nn.PoolSpec(3, 3, 2)
    out, arg = nn.pool_forward(x, spec)
    up = rng.normal(size=out.shape)
    dx = nn.pool_backward(up, arg, x.shape, spec)
    num = nn.finite_diff_grad(lambda: float(np.sum(nn.pool_forward(x, spec)[0] * up)), x)
    assert rel_err(dx, num) < 1e-6


def test_fc_examples():
    x = np.array([1.0, 2.0, 0.5])
    assert np.array_equal(nn.fc_forward(x, nn.FcLayer(np.eye(3), np.zeros(3))), x)
    assert np.array_equal(nn.fc_forward(np.ones(2), nn.FcLayer(np.zeros((2, 2)), np.array([1.0, -1.0]))), [1, 0])
    rng = np.random.default_rng(5)
    w, b, v = rng.normal(size=(2, 3)), rng.normal(size=2), rng.normal(size=3)
    got = nn.fc_forward(v, nn.FcLayer(w, b), apply_relu=False)
    assert np.max(np.abs(got - np.array([sum(w[i, j] * v[j] for j in range(3)) + b[i] for i in range(2)]))) < 1e-12


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(6)
    layer = nn.ConvLayer(rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2), 1, 1)
    out, cache = nn.conv_forward_with_cache(rng.normal(size=(2, 1, 4, 4)), layer)
    dk, db, dx = nn.conv_backward(np.zeros_like(out), cache)
    assert not dk.any() and not db.any() and not dx.any()


def test_two_layer_toy_net_gradients():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 2, 6, 6))
    conv = nn.ConvLayer(rng.normal(size=(3, 2, 3, 3)) * 0.5, rng.normal(size=3) * 0.1, 1, 1)
    pool = nn.PoolSpec()
    fc = nn.FcLayer(rng.normal(size=(4, 27)) * 0.3, rng.normal(size=4) * 0.1)
    target = rng.normal(size=(3, 4))

    def loss():
        h, _ = nn.pool_forward(nn.conv_forward(x, conv), pool)
        return 0.5 * float(np.sum((nn.fc_forward(h.reshape(3, -1), fc, apply_relu=False) - target) ** 2))

    h1, c1 = nn.conv_forward_with_cache(x, conv)
    h2, arg = nn.pool_forward(h1, pool)
    out, c3 = nn.fc_forward_with_cache(h2.reshape(3, -1), fc, apply_relu=False)
    dw, db, dflat = nn.fc_backward(out - target, c3)
    dk, dbk, dx = nn.conv_backward(nn.pool_backward(dflat.reshape(h2.shape), arg, h1.shape, pool), c1)
    for analytic, arr in ((dw, fc.weights), (db, fc.biases), (dk, conv.kernels), (dbk, conv.biases), (dx, x)):
        assert rel_err(analytic, nn.finite_diff_grad(loss, arr)) < 1e-5


def test_sgd_step_examples():
    p = {"w": np.array([1.0])}
    st_ = nn.SgdState.zeros_like(p, 0.01)
    nn.sgd_step(p, {"w": np.array([0.5])}, st_)
    assert abs(st_.momentum["w"][0] + 0.00501) < 1e-15 and abs(p["w"][0] - 0.99499) < 1e-15
    p = {"w": np.zeros(3)}
    st_ = nn.SgdState(0.1, {"w": np.array([1.0, -2.0, 0.5])})
    nn.sgd_step(p, {"w": np.zeros(3)}, st_)
    assert np.array_equal(st_.momentum["w"], 0.9 * np.array([1.0, -2.0, 0.5]))


def test_sgd_two_steps_unrolled():
    rng = np.random.default_rng(8)
    w0, d0, g1, g2 = rng.normal(size=(4, 5))
    eps = 0.03
    d1 = 0.9 * d0 - 0.001 * eps * w0 - eps * g1
    w1 = w0 + d1
    d2 = 0.9 * d1 - 0.001 * eps * w1 - eps * g2
    w2 = w1 + d2
    p = {"w": w0.copy()}
    s = nn.SgdState(eps, {"w": d0.copy()})
    nn.sgd_step(p, {"w": g1}, s)
    nn.sgd_step(p, {"w": g2}, s)
    assert np.max(np.abs(p["w"] - w2)) < 1e-12 and np.max(np.abs(s.momentum["w"] - d2)) < 1e-12


def test_sgd_rejects_non_finite():
    p = {"w": np.ones(2)}
    with pytest.raises(FloatingPointError, match="w"):
        nn.sgd_step(p, {"w": np.array([np.nan, 0.0])}, nn.SgdState.zeros_like(p, 0.1))
    assert np.array_equal(p["w"], np.ones(2))


def test_finite_diff_examples():
    w = np.array([3.0])
    assert abs(nn.finite_diff_grad(lambda: float(w[0] ** 2), w)[0] - 6.0) < 1e-8
    a = np.array([1.5, -2.0])
    v = np.array([0.3, 0.7])
    for step in (1e-3, 1e-5):
        assert np.allclose(nn.finite_diff_grad(lambda: float(a @ v), v, step), a, atol=1e-9)


def test_glorot_bounds_and_seeding():
    a = nn.glorot_uniform(np.random.default_rng(0), (50, 40), 40, 50)
    b = nn.glorot_uniform(np.random.default_rng(0), (50, 40), 40, 50)
    assert np.array_equal(a, b)
    assert np.abs(a).max() <= np.sqrt(6 / 90)
    assert not nn.init_fc(np.random.default_rng(0), 3, 4).biases.any()


def test_forward_is_deterministic():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 1, 8, 8))
    layer = nn.init_conv(rng, 3, 1, 3, 3, 1, 1)
    assert np.array_equal(nn.conv_forward(x, layer), nn.conv_forward(x.copy(), layer))
