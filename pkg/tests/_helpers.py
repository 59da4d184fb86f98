"""Shared market builders and independent oracles for the test suite.

Oracles here deliberately avoid the library's solver paths: grid search over
strategies, explicit enumeration of transportation polytopes, and
scipy-based simplex minimization, so expected values are computed through an
independent route before being asserted.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import minimize

from epsarb.market import MarketModel, NormPair, Payoff, Strategy, gain, strategy_cost


def two_state(prices0, prices1a, prices1b, d, pa=0.5, T=1) -> MarketModel:
    return MarketModel.from_nodes(T, d, [
        {"id": "r", "time": 0, "parent": None, "cond_prob": 1.0, "prices": prices0},
        {"id": "w1", "time": 1, "parent": "r", "cond_prob": pa, "prices": prices1a},
        {"id": "w2", "time": 1, "parent": "r", "cond_prob": 1 - pa, "prices": prices1b},
    ])


def nostrictarb_market(eps: float = 1.0) -> MarketModel:
    """Two assets, S1 in {(eps,0),(eps,1)} uniform: sequential but no strict arbitrage."""
    return two_state([0.0, 0.0], [eps, 0.0], [eps, 1.0], 2)


def kbar_market(eps: float = 1.0) -> MarketModel:
    """Two assets, S1 = (eps, +-1) uniform: gains set strictly below its closure."""
    return two_state([0.0, 0.0], [eps, 1.0], [eps, -1.0], 2)


def price_range_market(eps: float = 1.0) -> MarketModel:
    """Single asset, S1 in {eps/2, 3 eps/2}: half-open fair-price interval."""
    return two_state([0.0], [0.5 * eps], [1.5 * eps], 1)


def binary_martingale(up: float = 1.0) -> MarketModel:
    return two_state([0.0], [up], [-up], 1)


def drift_market(M: float = 5.0) -> MarketModel:
    """Deterministic one-step drift: the critical level equals |M|."""
    return MarketModel.from_nodes(1, 1, [
        {"id": "r", "time": 0, "parent": None, "cond_prob": 1.0, "prices": [0.0]},
        {"id": "u", "time": 1, "parent": "r", "cond_prob": 1.0, "prices": [M]},
    ])


def telescoping_market() -> MarketModel:
    """Single asset, one path with increments +1 then -1."""
    return MarketModel.from_nodes(2, 1, [
        {"id": "r", "time": 0, "parent": None, "cond_prob": 1.0, "prices": [0.0]},
        {"id": "a", "time": 1, "parent": "r", "cond_prob": 1.0, "prices": [1.0]},
        {"id": "b", "time": 2, "parent": "a", "cond_prob": 1.0, "prices": [0.0]},
    ])


def kr_pair():
    P = MarketModel.from_paths(np.array([[0.0, 3.0], [1.0, 5.0]]), np.array([0.5, 0.5]))
    Pp = MarketModel.from_paths(np.array([[1.0, 1.0], [3.0, 2.0]]), np.array([0.5, 0.5]))
    return P, Pp


def counterexample_pair(eps: float = 0.25):
    P0 = MarketModel.from_paths(np.array([[0.0, 1.0], [0.0, -1.0]]), np.array([0.5, 0.5]))
    Pe = MarketModel.from_paths(np.array([[eps, 1.0], [-eps, -1.0]]), np.array([0.5, 0.5]))
    return P0, Pe


def closing_pair(M: float = 5.0, delta: float = 0.25, p_small: float = 0.1):
    P = MarketModel.from_paths(np.array([[0.0, M]]), np.array([1.0]))
    Pp = MarketModel.from_paths(np.array([[0.0, M], [0.0, -delta]]),
                                np.array([1.0 - p_small, p_small]))
    return P, Pp


# ---------------------------------------------------------------------------
# Independent oracles
# ---------------------------------------------------------------------------


def grid_search_maximin(model: MarketModel, eps: float, norms: NormPair,
                        n_grid: int = 720):
    """Best uniform slack per unit norm over a dense grid of strategy rays.

    Only for markets with a single internal node and d = 2.
    """
    (v,) = model.internal
    best, best_h = -np.inf, None
    for k in range(n_grid):
        ang = 2 * np.pi * k / n_grid
        h = np.array([np.cos(ang), np.sin(ang)])
        h = h / norms.norm(h)
        vals = np.zeros((model.n_nodes, 2))
        vals[v] = h
        s = gain(model, Strategy(vals)) - eps * strategy_cost(model, Strategy(vals), norms)
        m = float(np.min(s))
        if m > best:
            best, best_h = m, h
    return best, best_h


def min_simplex_deviation_oracle(model: MarketModel, v: int, norms: NormPair) -> float:
    """min over child-simplex weights of |sum a_w dS(w)|_q.

    d = 1 has a closed form; d >= 2 runs SLSQP from several starts with a
    barycentric-grid fallback.
    """
    kids = list(model.children[v])
    A = model.delta[kids]
    k = len(kids)
    if k == 1:
        return norms.dual_norm(A[0])
    if model.d == 1:
        c = A[:, 0]
        if c.min() <= 0.0 <= c.max():
            return 0.0
        return float(np.min(np.abs(c)))

    def fun(a):
        return norms.dual_norm(A.T @ a)

    best = np.inf
    for start in [np.full(k, 1.0 / k)] + [np.eye(k)[i] * 0.98 + 0.02 / k for i in range(k)]:
        res = minimize(fun, start, method="SLSQP",
                       bounds=[(0.0, 1.0)] * k,
                       constraints=[{"type": "eq", "fun": lambda a: np.sum(a) - 1.0}],
                       options={"maxiter": 300, "ftol": 1e-14})
        if res.success:
            best = min(best, float(fun(res.x)))
    if not np.isfinite(best):
        grid = np.linspace(0.0, 1.0, 201)
        if k == 2:
            best = min(fun(np.array([t, 1 - t])) for t in grid)
        else:
            best = min(fun(np.array([s, t, max(1 - s - t, 0.0)]))
                       for s in grid for t in grid if s + t <= 1.0)
    return float(best)


def critical_value_oracle(model: MarketModel, norms: NormPair) -> float:
    """Independent critical level: the largest node-wise minimal deviation."""
    return max(min_simplex_deviation_oracle(model, v, norms) for v in model.internal)


def enumerate_2x2_transport(cost: np.ndarray, src, tgt, n: int = 20001):
    """Sweep the one-parameter 2x2 transportation polytope."""
    lo = max(0.0, src[0] - tgt[1])
    hi = min(src[0], tgt[0])
    best_cost, best_btl = np.inf, np.inf
    for a in np.linspace(lo, hi, n):
        plan = np.array([[a, src[0] - a], [tgt[0] - a, tgt[1] - (src[0] - a)]])
        if np.min(plan) < -1e-12:
            continue
        c = float(np.sum(plan * cost))
        btl = float(np.max(cost[plan > 1e-12]))
        best_cost = min(best_cost, c)
        best_btl = min(best_btl, btl)
    return best_cost, best_btl


def random_feasible_plan(rng: np.random.Generator, src: np.ndarray, tgt: np.ndarray) -> np.ndarray:
    """A random vertex of the transportation polytope (north-west corner on
    shuffled orders)."""
    perm_i = rng.permutation(src.size)
    perm_j = rng.permutation(tgt.size)
    a = src[perm_i].copy()
    b = tgt[perm_j].copy()
    plan = np.zeros((src.size, tgt.size))
    i = j = 0
    while i < a.size and j < b.size:
        m = min(a[i], b[j])
        plan[perm_i[i], perm_j[j]] = m
        a[i] -= m
        b[j] -= m
        if a[i] <= 1e-15:
            i += 1
        if j < b.size and b[j] <= 1e-15:
            j += 1
    return plan


def brute_force_bicausal_couplings(lawx, lawy, samples: int, rng: np.random.Generator):
    """Random stage-plan choices: a sample of genuine bicausal couplings."""
    from epsarb.transport import BicausalCoupling
    out = []
    for _ in range(samples):
        rx, ry = list(lawx.roots), list(lawy.roots)
        root = random_feasible_plan(rng, lawx.cond_prob[rx], lawy.cond_prob[ry])
        plans = {}
        for vx in range(lawx.n_nodes):
            for vy in range(lawy.n_nodes):
                if lawx.times[vx] == lawy.times[vy] and lawx.children[vx] and lawy.children[vy]:
                    cx, cy = list(lawx.children[vx]), list(lawy.children[vy])
                    plans[(vx, vy)] = random_feasible_plan(
                        rng, lawx.cond_prob[cx], lawy.cond_prob[cy])
        out.append(BicausalCoupling(lawx, lawy, root, plans))
    return out


def payoff_linear_terminal(model: MarketModel, coeff: float = 1.0, coord: int = 0) -> Payoff:
    return Payoff.from_function(model, lambda path: coeff * float(path[-1, coord]))
