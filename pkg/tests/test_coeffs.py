import numpy as np
import pytest

from tacnn.coeffs import (CoeffObjectiveCtx, LbfgsConfig, closed_form_minimizer, coeff_gradient, coeff_objective,
                          lbfgs_minimize, task_nll_from_bits, update_coeffs)
from tacnn.nncore import finite_diff_grad
from tacnn.taskcodec import LAMBDA_FLOOR, Coeffs


def random_ctx(seed, n=40, sigma=1.0, scale=0.02):
    rng = np.random.default_rng(seed)
    return CoeffObjectiveCtx(rng.random((n, 18)) * scale, rng.uniform(0.1, 3.0, n), sigma)


def test_objective_examples():
    ctx = random_ctx(0)
    ones = np.ones(18)
    assert abs(coeff_objective(ones, ctx) - ctx.evidence.sum()) < 1e-12
    flat = CoeffObjectiveCtx(np.zeros((5, 18)), np.ones(5))
    lam = np.full(18, 0.5)
    assert abs(coeff_objective(lam, flat) - 17 * 0.25) < 1e-12
    assert not coeff_gradient(ones, flat).any()
    assert coeff_gradient(np.full(18, 3.0), ctx)[0] == 0.0


def test_gradient_matches_finite_differences():
    ctx = random_ctx(1)
    lam = np.random.default_rng(1).uniform(0.2, 1.5, 18)
    g = coeff_gradient(lam, ctx)
    num = finite_diff_grad(lambda: coeff_objective(lam, ctx), lam)
    num[0] = 0.0
    assert np.max(np.abs(g - num) / np.maximum(np.abs(g), 1e-8)) < 1e-7


def test_clamp_warns(caplog):
    with caplog.at_level("WARNING"):
        coeff_objective(np.full(18, -1.0), random_ctx(2))
    assert "clamped" in caplog.text


def test_lbfgs_quadratic_and_rosenbrock():
    a = np.array([0.3, 0.7, 1.9])
    res = lbfgs_minimize(lambda x: float(np.sum((x - a) ** 2)), lambda x: 2 * (x - a), np.zeros(3), floor=0.0)
    assert np.allclose(res.x, a, atol=1e-8) and res.success

    def f(v):
        return float((1 - v[0]) ** 2 + 100 * (v[1] - v[0] ** 2) ** 2)

    def g(v):
        return np.array([-2 * (1 - v[0]) - 400 * v[0] * (v[1] - v[0] ** 2), 200 * (v[1] - v[0] ** 2)])

    res = lbfgs_minimize(f, g, np.array([-1.2, 1.0]))
    assert np.allclose(res.x, [1, 1], atol=1e-6)


def test_frozen_coordinates_never_move():
    res = lbfgs_minimize(lambda x: float(np.sum(x ** 2)), lambda x: 2 * x, np.array([1.0, 2.0, 3.0]), frozen=(1,))
    assert res.x[1] == 2.0 and np.allclose(res.x[[0, 2]], 0, atol=1e-8)


@pytest.mark.parametrize("seed,scale", [(0, 0.02), (1, 0.05), (2, 0.5)])
def test_lbfgs_matches_closed_form(seed, scale):
    ctx = random_ctx(seed, scale=scale)
    c, res = update_coeffs(ctx)
    assert np.max(np.abs(c.lam - closed_form_minimizer(ctx))) < 1e-6
    assert c.lam[0] == 1.0 and np.all(c.lam >= LAMBDA_FLOOR)


def test_minimizer_beats_random_points():
    ctx = random_ctx(3, scale=0.1)
    c, _ = update_coeffs(ctx)
    best = coeff_objective(c.lam, ctx)
    rng = np.random.default_rng(3)
    assert best < coeff_objective(np.ones(18), ctx)
    for _ in range(100):
        lam = rng.uniform(LAMBDA_FLOOR, 2.0, 18)
        lam[0] = 1.0
        assert best <= coeff_objective(lam, ctx)


def test_two_starts_agree_and_prior_dominance():
    ctx = random_ctx(4, scale=0.05)
    a, _ = update_coeffs(ctx, Coeffs(np.full(18, 0.01)))
    b, _ = update_coeffs(ctx, Coeffs(np.full(18, 1.7)))
    assert np.max(np.abs(a.lam - b.lam)) < 1e-6
    tight = random_ctx(4, sigma=1e-4, scale=5.0)
    c, _ = update_coeffs(tight)
    assert np.max(np.abs(c.lam - 1)) < 1e-2


def test_monotone_comparative_statics():
    ctx = random_ctx(5)
    lower = CoeffObjectiveCtx(ctx.nll * np.r_[1, 0.5, np.ones(16)], ctx.weights, ctx.sigma)
    assert closed_form_minimizer(lower)[1] >= closed_form_minimizer(ctx)[1]


def test_task_collapse_of_bits():
    bit_nll = np.arange(19, dtype=float)[None]
    mask = np.ones((1, 19))
    mask[0, 3] = 0
    t = task_nll_from_bits(bit_nll, mask)
    assert t.shape == (1, 18) and t[0, 3] == 0 and t[0, 9] == 9 + 10 and t[0, 17] == 18


def test_config_validation():
    with pytest.raises(ValueError):
        LbfgsConfig(memory=0)
    with pytest.raises(ValueError):
        CoeffObjectiveCtx(-np.ones((2, 18)), np.ones(2))
