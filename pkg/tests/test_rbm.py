import numpy as np
from hypothesis import given, settings, strategies as st

from tacnn.rbm import (Rbm, binarize_patches, build_prob_table, cd_train, energy, free_energy,
                       free_energy_exhaustive, table_weights, uniform_table)


def random_rbm(rng, dx=5, dy=3, nh=4, scale=1.0):
    return Rbm(scale * rng.normal(size=(dx, nh)), scale * rng.normal(size=(dy, nh)), rng.normal(size=dx),
               rng.normal(size=dy), rng.normal(size=nh))


def test_energy_examples():
    z = Rbm.zeros(3, 2, 4)
    assert energy(z, np.ones(3), np.ones(2), np.ones(4)) == 0.0
    one = Rbm.zeros(2, 2, 1)
    one.b_h[:] = 0.7
    assert energy(one, np.zeros(2), np.zeros(2), np.ones(1)) == -0.7


def test_energy_term_by_term():
    rng = np.random.default_rng(0)
    r = random_rbm(rng)
    x, y, h = (rng.integers(0, 2, n).astype(float) for n in (5, 3, 4))
    e = 0.0
    for i in range(5):
        for j in range(4):
            e -= x[i] * r.w_xh[i, j] * h[j]
    for i in range(3):
        for j in range(4):
            e -= y[i] * r.w_yh[i, j] * h[j]
    e -= x @ r.b_x + y @ r.b_y + h @ r.b_h
    assert abs(energy(r, x, y, h) - e) < 1e-12


def test_energy_bilinear_in_x():
    rng = np.random.default_rng(1)
    r = random_rbm(rng)
    x, y, h = rng.random(5), rng.random(3), rng.random(4)
    lhs = energy(r, 2 * x, y, h) - energy(r, x, y, h)
    rhs = energy(r, x, y, h) - energy(r, np.zeros(5), y, h)
    assert abs(lhs - rhs) < 1e-12


def test_free_energy_examples():
    assert abs(free_energy(Rbm.zeros(3, 2, 6), np.ones(3), np.zeros(2)) - 6 * np.log(2)) < 1e-12
    r = Rbm.zeros(1, 1, 1)
    r.b_h[:] = 1.3
    assert abs(free_energy(r, np.zeros(1), np.zeros(1)) - np.log1p(np.exp(1.3))) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 8))
def test_free_energy_matches_enumeration(seed, nh):
    rng = np.random.default_rng(seed)
    r = random_rbm(rng, nh=nh)
    x, y = rng.integers(0, 2, 5).astype(float), rng.integers(0, 2, 3).astype(float)
    assert abs(free_energy(r, x, y) - free_energy_exhaustive(r, x, y)) < 1e-9


def test_cd_zero_lr_is_identity_and_seeded():
    rng = np.random.default_rng(2)
    x, y = rng.integers(0, 2, (30, 6)).astype(float), rng.integers(0, 2, (30, 3)).astype(float)
    init = random_rbm(rng, 6, 3, 4, 0.1)
    same = cd_train(x, y, 4, 3, 0.0, seed=0, init=init)
    assert all(np.array_equal(a, b) for a, b in zip(same.arrays().values(), init.arrays().values()))
    a, b = cd_train(x, y, 4, 3, 0.1, seed=5), cd_train(x, y, 4, 3, 0.1, seed=5)
    assert all(np.array_equal(u, v) for u, v in zip(a.arrays().values(), b.arrays().values()))


def test_cd_raises_free_energy_of_training_pattern():
    rng = np.random.default_rng(3)
    pat_x, pat_y = rng.integers(0, 2, 12).astype(float), rng.integers(0, 2, 4).astype(float)
    other_x, other_y = 1 - pat_x, 1 - pat_y
    init = Rbm.init(12, 4, 8, np.random.default_rng(0))
    gap0 = free_energy(init, pat_x, pat_y) - free_energy(init, other_x, other_y)
    r = cd_train(np.tile(pat_x, (50, 1)), np.tile(pat_y, (50, 1)), 8, 20, 0.1, seed=1, init=init)
    assert free_energy(r, pat_x, pat_y) - free_energy(r, other_x, other_y) > gap0 + 1.0


def test_table_weights():
    r = Rbm.zeros(4, 2, 3)
    x = np.ones((5, 4))
    t = build_prob_table(r, x, np.zeros((5, 2)), list("abcde"))
    assert np.array_equal(t.weights, np.ones(5))
    lp = np.random.default_rng(4).normal(scale=3, size=40)
    w = table_weights(lp)
    assert np.all(w > 0) and abs(w.mean() - 1) < 1e-9
    assert np.array_equal(np.argsort(w, kind="stable"), np.argsort(lp, kind="stable"))
    assert np.allclose(table_weights(lp + 123.0), w, rtol=1e-12)
    assert uniform_table(["a", "b"]).weight("b") == 1.0


def test_binarize_shape():
    x = np.random.default_rng(5).random((3, 1, 64, 32))
    b = binarize_patches(x)
    assert b.shape == (3, 128) and set(np.unique(b)) <= {0.0, 1.0}
