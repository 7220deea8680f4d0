"""Importance-coefficient estimation with the network held fixed.

Objective over the per-task coefficients ``lam``::

    sum_n w_n sum_t lam_t nll[n, t]  +  sum_{t != main} (lam_t - 1)^2 / sigma^2

where ``nll[n, t]`` are frozen per-sample task losses and ``w_n`` the RBM
sample weights. It is minimised by a projected L-BFGS with the main
coefficient pinned to 1 and a positive floor on the others.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .taskcodec import LAMBDA_FLOOR, DEFAULT_LAYOUT, Coeffs, TaskLayout

log = logging.getLogger(__name__)


@dataclass
class CoeffObjectiveCtx:
    nll: np.ndarray  # (N, n_tasks), masked per-task losses
    weights: np.ndarray  # (N,)
    sigma: float = 1.0
    layout: TaskLayout = DEFAULT_LAYOUT

    def __post_init__(self):
        self.nll = np.asarray(self.nll, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.nll.ndim != 2 or self.nll.shape[1] != self.layout.n_tasks:
            raise ValueError(f"nll must be (N, {self.layout.n_tasks}), got {self.nll.shape}")
        if self.weights.shape != (len(self.nll),):
            raise ValueError("one weight per sample required")
        if np.any(self.nll < 0) or np.any(self.weights <= 0) or not self.sigma > 0:
            raise ValueError("nll must be non-negative, weights and sigma positive")
        self._evidence = self.weights @ self.nll  # sum_n w_n nll[n, t]

    @property
    def evidence(self):
        return self._evidence

    @property
    def main(self):
        return self.layout.main_index


def task_nll_from_bits(bit_nll, mask, scale=1.0, layout: TaskLayout = DEFAULT_LAYOUT):
    """Collapse masked per-bit losses (N, 19) to per-task losses (N, n_tasks)."""
    masked = np.where(np.asarray(mask) > 0, bit_nll, 0.0) * scale
    out = np.zeros((masked.shape[0], layout.n_tasks))
    np.add.at(out.T, layout.bit_to_task(), masked.T)
    return out


def _checked(lam, ctx):
    lam = np.array(lam, dtype=np.float64)
    if np.any(lam < LAMBDA_FLOOR):
        log.warning("coefficients below floor %g clamped", LAMBDA_FLOOR)
        lam = np.maximum(lam, LAMBDA_FLOOR)
    lam[ctx.main] = 1.0
    return lam


def coeff_objective(lam, ctx: CoeffObjectiveCtx) -> float:
    lam = _checked(lam, ctx)
    prior = (lam - 1.0) ** 2 / ctx.sigma ** 2
    prior[ctx.main] = 0.0
    return float(ctx.evidence @ lam + prior.sum())


def coeff_gradient(lam, ctx: CoeffObjectiveCtx) -> np.ndarray:
    lam = _checked(lam, ctx)
    g = ctx.evidence + 2.0 * (lam - 1.0) / ctx.sigma ** 2
    g[ctx.main] = 0.0
    return g


def closed_form_minimizer(ctx: CoeffObjectiveCtx, floor=LAMBDA_FLOOR) -> np.ndarray:
    lam = np.maximum(floor, 1.0 - ctx.sigma ** 2 * ctx.evidence / 2.0)
    lam[ctx.main] = 1.0
    return lam


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    gtol: float = 1e-10
    max_iter: int = 2000
    shrink: float = 0.5
    c1: float = 1e-4
    max_backtracks: int = 60

    def __post_init__(self):
        if self.memory < 1 or self.gtol <= 0 or not 0 < self.shrink < 1 or not 0 < self.c1 < 1:
            raise ValueError(f"invalid L-BFGS settings {self}")


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    iterations: int
    status: str  # "converged", "max_iter" or "line_search_failed"

    @property
    def success(self):
        return self.status == "converged"


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def lbfgs_minimize(fun, grad, x0, cfg: LbfgsConfig = LbfgsConfig(), frozen=(), floor=None) -> LbfgsResult:
    """Limited-memory BFGS with Armijo backtracking and a lower bound.

    Coordinates in ``frozen`` never move. With ``floor`` set, iterates are
    projected onto ``x >= floor`` and coordinates resting on the bound with
    an outward gradient are dropped from the search direction.
    """
    x = np.array(x0, dtype=np.float64)
    fixed = np.zeros(x.shape, dtype=bool)
    fixed[list(frozen)] = True
    if floor is not None:
        x = np.where(fixed, x, np.maximum(x, floor))
    f, g = fun(x), np.asarray(grad(x), dtype=np.float64)
    pairs = []
    for it in range(cfg.max_iter):
        free = ~fixed
        if floor is not None:
            free &= ~((x <= floor) & (g > 0))
        pg = np.where(free, g, 0.0)
        if np.linalg.norm(pg, np.inf) <= cfg.gtol:
            return LbfgsResult(x, f, it, "converged")
        d = -np.where(free, _two_loop(pg, pairs), 0.0)
        if d @ pg >= 0:
            pairs.clear()
            d = -pg
        step, accepted = 1.0, False
        for _ in range(cfg.max_backtracks):
            xn = x + step * d
            if floor is not None:
                xn = np.where(free, np.maximum(xn, floor), x)
            fn = fun(xn)
            if fn <= f + cfg.c1 * (pg @ (xn - x)):
                accepted = True
                break
            step *= cfg.shrink
        if not accepted:
            if pairs:
                pairs.clear()
                continue
            return LbfgsResult(x, f, it, "line_search_failed")
        gn = np.asarray(grad(xn), dtype=np.float64)
        s, y = xn - x, np.where(free, gn - g, 0.0)
        sy = s @ y
        if sy > 1e-12 * max(1.0, np.linalg.norm(s) * np.linalg.norm(y)):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > cfg.memory:
                pairs.pop(0)
        x, f, g = xn, fn, gn
    return LbfgsResult(x, f, cfg.max_iter, "max_iter")


def update_coeffs(ctx: CoeffObjectiveCtx, start: Coeffs | None = None,
                  cfg: LbfgsConfig = LbfgsConfig()) -> tuple[Coeffs, LbfgsResult]:
    """One coefficient step of the alternating scheme."""
    x0 = start.lam if start is not None else np.ones(ctx.layout.n_tasks)
    res = lbfgs_minimize(lambda v: coeff_objective(v, ctx), lambda v: coeff_gradient(v, ctx), x0, cfg,
                         frozen=(ctx.main,), floor=LAMBDA_FLOOR)
    if not res.success:
        log.warning("coefficient L-BFGS stopped with status %s", res.status)
    return Coeffs(res.x, ctx.sigma), res
